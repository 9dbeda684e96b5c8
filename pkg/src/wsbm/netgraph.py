"""Sparse weighted networks with weighted edges, non-edges and missing pairs.

A network stores two explicit lists: weighted edges ``W`` and missing pairs
``M``.  Every other modelled pair is an observed non-edge (the implied list
``N``).  A weighted edge of weight zero is still an edge.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "ObservedNetwork",
    "DegreeCache",
    "HeldOutPairs",
    "WeightTransform",
    "EdgeListError",
    "load_edge_list",
    "write_edge_list",
    "load_labels",
    "read_labels",
    "write_labels",
    "normalize_weights",
    "holdout_split",
]


class EdgeListError(ValueError):
    pass


@dataclass(frozen=True)
class DegreeCache:
    dW_out: np.ndarray
    dW_in: np.ndarray
    dE_out: np.ndarray
    dE_in: np.ndarray


def _as_index(a):
    return np.ascontiguousarray(a, dtype=np.int64).reshape(-1)


@dataclass(frozen=True, eq=False)
class ObservedNetwork:
    """Immutable network on ``n`` vertices.

    Undirected networks keep each pair once with ``src <= dst``; engines work
    on :meth:`as_directed`, the symmetric directed expansion.
    """

    n: int
    w_src: np.ndarray
    w_dst: np.ndarray
    w_weight: np.ndarray
    m_src: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    m_dst: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    directed: bool = True
    include_self_loops: bool = False
    vertex_ids: tuple = None

    def __post_init__(self):
        n = int(self.n)
        if n < 0:
            raise EdgeListError("vertex count must be nonnegative")
        object.__setattr__(self, "n", n)
        w_src, w_dst = _as_index(self.w_src), _as_index(self.w_dst)
        m_src, m_dst = _as_index(self.m_src), _as_index(self.m_dst)
        w_weight = np.ascontiguousarray(self.w_weight, dtype=float).reshape(-1)
        if not (len(w_src) == len(w_dst) == len(w_weight)) or len(m_src) != len(m_dst):
            raise EdgeListError("edge list columns have different lengths")
        if not self.directed:
            w_src, w_dst = np.minimum(w_src, w_dst), np.maximum(w_src, w_dst)
            m_src, m_dst = np.minimum(m_src, m_dst), np.maximum(m_src, m_dst)
        for name, a in (("weighted", w_src), ("weighted", w_dst), ("missing", m_src), ("missing", m_dst)):
            if a.size and (a.min() < 0 or a.max() >= n):
                raise EdgeListError(f"{name} pair index out of range [0, {n})")
        if not np.all(np.isfinite(w_weight)):
            k = int(np.flatnonzero(~np.isfinite(w_weight))[0])
            raise EdgeListError(f"non-finite weight on edge ({w_src[k]}, {w_dst[k]})")
        if not self.include_self_loops:
            for name, s, d in (("weighted", w_src, w_dst), ("missing", m_src, m_dst)):
                if np.any(s == d):
                    k = int(np.flatnonzero(s == d)[0])
                    raise EdgeListError(f"self-loop ({s[k]}, {s[k]}) in {name} list but self-loops are excluded")
        # canonical order: sorted by (src, dst)
        wo = np.lexsort((w_dst, w_src))
        mo = np.lexsort((m_dst, m_src))
        w_src, w_dst, w_weight = w_src[wo], w_dst[wo], w_weight[wo]
        m_src, m_dst = m_src[mo], m_dst[mo]
        wc = w_src * n + w_dst
        mc = m_src * n + m_dst
        for name, codes in (("weighted", wc), ("missing", mc)):
            dup = np.flatnonzero(np.diff(codes) == 0)
            if dup.size:
                c = codes[dup[0]]
                raise EdgeListError(f"duplicate {name} pair ({c // n}, {c % n})")
        both = np.intersect1d(wc, mc)
        if both.size:
            c = both[0]
            raise EdgeListError(f"pair ({c // n}, {c % n}) is both weighted and missing")
        for name, a in (("w_src", w_src), ("w_dst", w_dst), ("w_weight", w_weight), ("m_src", m_src), ("m_dst", m_dst)):
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        ids = self.vertex_ids
        if ids is None:
            ids = tuple(str(i) for i in range(n))
        ids = tuple(str(v) for v in ids)
        if len(ids) != n or len(set(ids)) != n:
            raise EdgeListError("vertex_ids must be n distinct names")
        object.__setattr__(self, "vertex_ids", ids)

    # -- counts -----------------------------------------------------------
    @property
    def n_weighted(self) -> int:
        return len(self.w_src)

    @property
    def n_missing(self) -> int:
        return len(self.m_src)

    @property
    def n_modeled(self) -> int:
        n = self.n
        if self.directed:
            return n * n if self.include_self_loops else n * (n - 1)
        return n * (n + 1) // 2 if self.include_self_loops else n * (n - 1) // 2

    @property
    def n_nonedges(self) -> int:
        return self.n_modeled - self.n_weighted - self.n_missing

    @property
    def n_observed(self) -> int:
        return self.n_modeled - self.n_missing

    # -- views ------------------------------------------------------------
    def as_directed(self) -> "ObservedNetwork":
        if self.directed:
            return self
        def sym(s, d, *extra):
            off = s != d
            out = [np.concatenate([s, d[off]]), np.concatenate([d, s[off]])]
            out += [np.concatenate([e, e[off]]) for e in extra]
            return out
        ws, wd, ww = sym(self.w_src, self.w_dst, self.w_weight)
        ms, md = sym(self.m_src, self.m_dst)
        return ObservedNetwork(self.n, ws, wd, ww, ms, md, directed=True,
                               include_self_loops=self.include_self_loops, vertex_ids=self.vertex_ids)

    def degrees(self) -> DegreeCache:
        """Degree caches of the directed view."""
        d = self.as_directed()
        n = d.n
        dW_out = np.bincount(d.w_src, minlength=n)
        dW_in = np.bincount(d.w_dst, minlength=n)
        dM_out = np.bincount(d.m_src, minlength=n)
        dM_in = np.bincount(d.m_dst, minlength=n)
        per = n if d.include_self_loops else max(n - 1, 0)
        return DegreeCache(dW_out, dW_in, per - dM_out, per - dM_in)

    def pair_codes(self, which: str) -> np.ndarray:
        if which == "W":
            return self.w_src * self.n + self.w_dst
        if which == "M":
            return self.m_src * self.n + self.m_dst
        raise ValueError(which)

    def modeled_codes(self) -> np.ndarray:
        """Sorted codes ``i*n + j`` of every modelled pair (O(n^2) memory)."""
        n = self.n
        i, j = np.divmod(np.arange(n * n, dtype=np.int64), n)
        if self.directed:
            keep = np.ones(n * n, bool) if self.include_self_loops else i != j
        else:
            keep = (i <= j) if self.include_self_loops else (i < j)
        return (i * n + j)[keep]

    def nonedge_codes(self) -> np.ndarray:
        taken = np.union1d(self.pair_codes("W"), self.pair_codes("M"))
        return np.setdiff1d(self.modeled_codes(), taken, assume_unique=True)

    def nonedges(self):
        c = self.nonedge_codes()
        return c // self.n, c % self.n

    def adjacency(self):
        """Dense ``(A, state)`` matrices of the directed view for small n.

        ``state`` is 1 for weighted edges, 0 for non-edges, -1 for missing
        or unmodelled pairs.
        """
        d = self.as_directed()
        n = d.n
        A = np.zeros((n, n))
        state = np.zeros((n, n), dtype=np.int8)
        if not d.include_self_loops:
            np.fill_diagonal(state, -1)
        state[d.m_src, d.m_dst] = -1
        state[d.w_src, d.w_dst] = 1
        A[d.w_src, d.w_dst] = d.w_weight
        return A, state

    def permute(self, perm) -> "ObservedNetwork":
        """Relabel vertex ``v`` as ``perm[v]``."""
        perm = np.asarray(perm, dtype=np.int64)
        ids = [None] * self.n
        for v, p in enumerate(perm):
            ids[p] = self.vertex_ids[v]
        return ObservedNetwork(self.n, perm[self.w_src], perm[self.w_dst], self.w_weight,
                               perm[self.m_src], perm[self.m_dst], directed=self.directed,
                               include_self_loops=self.include_self_loops, vertex_ids=tuple(ids))

    def with_weights(self, weights) -> "ObservedNetwork":
        return ObservedNetwork(self.n, self.w_src, self.w_dst, weights, self.m_src, self.m_dst,
                               directed=self.directed, include_self_loops=self.include_self_loops,
                               vertex_ids=self.vertex_ids)

    def with_missing(self, m_src, m_dst) -> "ObservedNetwork":
        return ObservedNetwork(self.n, self.w_src, self.w_dst, self.w_weight, m_src, m_dst,
                               directed=self.directed, include_self_loops=self.include_self_loops,
                               vertex_ids=self.vertex_ids)

    def index_of(self, vertex_id: str) -> int:
        try:
            return self.vertex_ids.index(str(vertex_id))
        except ValueError:
            raise EdgeListError(f"unknown vertex {vertex_id!r}") from None


# -- file formats -----------------------------------------------------------

def _directives(line: str) -> dict:
    out = {}
    for tok in line.lstrip("#").split():
        if "=" in tok:
            k, v = tok.split("=", 1)
            out[k.strip()] = v.strip()
    return out


def _read_rows(path, ncols, what):
    rows, meta, vertices = [], {}, None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if body.startswith("vertices:"):
                    vertices = body[len("vertices:"):].split()
                elif body.startswith("wsbm"):
                    meta.update(_directives(body))
                continue
            parts = line.split()
            if len(parts) != ncols:
                raise EdgeListError(f"{path}:{lineno}: expected {ncols} fields in {what} line, got {len(parts)}")
            rows.append((lineno, parts))
    return rows, meta, vertices


def _parse_bool(s):
    return s.lower() in ("1", "true", "yes")


def load_edge_list(path, missing_path=None, n=None, directed=None, include_self_loops=None) -> ObservedNetwork:
    """Read ``i j weight`` lines (tab or space separated) into a network.

    Vertex names are arbitrary tokens mapped to dense indices in order of
    first appearance.  When ``n`` is given, names ``"0" .. str(n-1)`` are
    reserved first so integer-named files keep their numbering.  Unlisted
    pairs are non-edges; pairs in ``missing_path`` are unobserved.
    """
    rows, meta, vertices = _read_rows(path, 3, "edge")
    if n is None and "n" in meta:
        n = int(meta["n"])
    if directed is None:
        directed = _parse_bool(meta.get("directed", "1"))
    if include_self_loops is None:
        include_self_loops = _parse_bool(meta.get("self_loops", "0"))
    index: dict[str, int] = {}
    if vertices is not None:
        for v in vertices:
            index.setdefault(v, len(index))
    elif n is not None:
        for v in range(int(n)):
            index[str(v)] = v

    def idx(name):
        if name not in index:
            index[name] = len(index)
        return index[name]

    src, dst, wt = [], [], []
    seen = {}
    for lineno, (a, b, w) in rows:
        try:
            x = float(w)
        except ValueError:
            raise EdgeListError(f"{path}:{lineno}: weight {w!r} is not a number") from None
        if not math.isfinite(x):
            raise EdgeListError(f"{path}:{lineno}: non-finite weight {w!r}")
        i, j = idx(a), idx(b)
        key = (i, j) if directed else (min(i, j), max(i, j))
        if key in seen:
            raise EdgeListError(f"{path}:{lineno}: duplicate pair ({a}, {b}), first seen on line {seen[key]}")
        if i == j and not include_self_loops:
            raise EdgeListError(f"{path}:{lineno}: self-loop ({a}, {b}) while self-loops are excluded")
        seen[key] = lineno
        src.append(i)
        dst.append(j)
        wt.append(x)

    msrc, mdst = [], []
    if missing_path is not None:
        mrows, _, _ = _read_rows(missing_path, 2, "missing-pair")
        mseen = {}
        for lineno, (a, b) in mrows:
            i, j = idx(a), idx(b)
            key = (i, j) if directed else (min(i, j), max(i, j))
            if key in seen:
                raise EdgeListError(f"{missing_path}:{lineno}: pair ({a}, {b}) is also a weighted edge")
            if key in mseen:
                raise EdgeListError(f"{missing_path}:{lineno}: duplicate missing pair ({a}, {b})")
            mseen[key] = lineno
            msrc.append(i)
            mdst.append(j)

    if n is not None and len(index) > int(n):
        raise EdgeListError(f"{path}: found {len(index)} vertices but n={n} was declared")
    total = len(index) if n is None else int(n)
    ids = [None] * total
    for name, i in index.items():
        ids[i] = name
    return ObservedNetwork(total, src, dst, wt, msrc, mdst, directed=bool(directed),
                           include_self_loops=bool(include_self_loops), vertex_ids=tuple(ids))


def _fmt(x: float) -> str:
    return repr(float(x))


def write_edge_list(net: ObservedNetwork, path, missing_path=None) -> None:
    """Canonical writer: header directives, pairs sorted by index."""
    ids = net.vertex_ids
    lines = [
        f"# wsbm-edgelist n={net.n} directed={int(net.directed)} self_loops={int(net.include_self_loops)}",
        "# vertices: " + " ".join(ids),
    ]
    lines += [f"{ids[i]}\t{ids[j]}\t{_fmt(w)}" for i, j, w in zip(net.w_src, net.w_dst, net.w_weight)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    if missing_path is not None:
        mlines = [f"{ids[i]}\t{ids[j]}" for i, j in zip(net.m_src, net.m_dst)]
        Path(missing_path).write_text("".join(l + "\n" for l in mlines), encoding="utf-8")


def write_labels(path, vertex_ids, labels) -> None:
    Path(path).write_text("".join(f"{v}\t{int(g)}\n" for v, g in zip(vertex_ids, labels)), encoding="utf-8")


def load_labels(path, vertex_ids=None) -> np.ndarray:
    """Read ``vertex group`` lines; reorder to ``vertex_ids`` when given."""
    names, groups = read_labels(path)
    if vertex_ids is None:
        return groups
    lookup = dict(zip(names, groups))
    missing = [v for v in vertex_ids if v not in lookup]
    if missing:
        raise EdgeListError(f"{path}: no label for vertex {missing[0]!r}")
    return np.array([lookup[v] for v in vertex_ids], dtype=np.int64)


def read_labels(path):
    """``(vertex names, groups)`` in file order."""
    rows, _, _ = _read_rows(path, 2, "label")
    names, groups = [], []
    for lineno, (v, g) in rows:
        try:
            groups.append(int(g))
        except ValueError:
            raise EdgeListError(f"{path}:{lineno}: group {g!r} is not an integer") from None
        names.append(v)
    if len(set(names)) != len(names):
        raise EdgeListError(f"{path}: a vertex is labelled more than once")
    return tuple(names), np.array(groups, dtype=np.int64)


# -- transforms and splits ----------------------------------------------------

@dataclass(frozen=True)
class WeightTransform:
    """Affine map ``x -> scale * (f(x) - lo) - 1`` with ``f`` = id or log10."""

    mode: str
    lo: float
    hi: float

    def _f(self, x):
        x = np.asarray(x, dtype=float)
        return np.log10(x) if self.mode == "log_then_linear" else x

    def apply(self, x):
        fx = self._f(x)
        if self.hi == self.lo:
            return np.zeros_like(fx)
        return 2.0 * (fx - self.lo) / (self.hi - self.lo) - 1.0

    def inverse(self, y):
        y = np.asarray(y, dtype=float)
        fx = self.lo + (y + 1.0) * (self.hi - self.lo) / 2.0 if self.hi != self.lo else np.full_like(y, self.lo)
        return 10.0 ** fx if self.mode == "log_then_linear" else fx

    def to_dict(self):
        return {"mode": self.mode, "lo": self.lo, "hi": self.hi}


def normalize_weights(net: ObservedNetwork, mode: str = "linear"):
    """Map observed weights onto [-1, 1]; returns ``(network, transform)``."""
    if mode not in ("linear", "log_then_linear"):
        raise ValueError(f"unknown normalisation mode {mode!r}")
    w = net.w_weight
    if mode == "log_then_linear" and np.any(w <= 0):
        k = int(np.flatnonzero(w <= 0)[0])
        raise EdgeListError(
            f"log normalisation needs positive weights; edge ({net.vertex_ids[net.w_src[k]]}, "
            f"{net.vertex_ids[net.w_dst[k]]}) has weight {w[k]!r}"
        )
    fw = np.log10(w) if mode == "log_then_linear" else w
    lo, hi = (float(fw.min()), float(fw.max())) if fw.size else (0.0, 0.0)
    tr = WeightTransform(mode, lo, hi)
    return net.with_weights(tr.apply(w)), tr


@dataclass(frozen=True)
class HeldOutPairs:
    src: np.ndarray
    dst: np.ndarray
    exists: np.ndarray  # bool
    weight: np.ndarray  # nan for non-edges

    def __len__(self):
        return len(self.src)


def holdout_split(net: ObservedNetwork, fraction: float, seed):
    """Move a uniformly random ``fraction`` of observed pairs to missing.

    Returns ``(train, held_out)``; pairs that were already missing stay so.
    """
    if not 0.0 < fraction < 1.0:
        raise ValueError("holdout fraction must lie strictly between 0 and 1")
    n = net.n
    codes = np.setdiff1d(net.modeled_codes(), net.pair_codes("M"), assume_unique=True)
    k = int(round(fraction * len(codes)))
    if k >= len(codes):
        raise ValueError("holdout fraction leaves no training pairs")
    rng = np.random.default_rng(seed)
    test = np.sort(rng.choice(codes, size=k, replace=False)) if k else np.zeros(0, np.int64)
    wcodes = net.pair_codes("W")
    is_w = np.isin(wcodes, test)
    pos = np.searchsorted(wcodes, test)  # W is sorted by code
    pos_c = np.minimum(pos, max(len(wcodes) - 1, 0))
    exists = (len(wcodes) > 0) & (wcodes[pos_c] == test) if len(wcodes) else np.zeros(k, bool)
    weight = np.where(exists, net.w_weight[pos_c] if len(wcodes) else np.nan, np.nan)
    keep = ~is_w
    m_codes = np.concatenate([net.pair_codes("M"), test])
    train = ObservedNetwork(n, net.w_src[keep], net.w_dst[keep], net.w_weight[keep],
                            m_codes // n, m_codes % n, directed=net.directed,
                            include_self_loops=net.include_self_loops, vertex_ids=net.vertex_ids)
    held = HeldOutPairs(test // n, test % n, np.asarray(exists, bool), np.asarray(weight, float))
    return train, held
