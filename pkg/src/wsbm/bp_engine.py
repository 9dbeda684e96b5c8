"""Loopy belief propagation with pairwise beliefs and a Bethe evidence bound.

Messages run along the adjacency of weighted edges: every unordered pair
``{a, b}`` with a weighted edge in either direction carries one evidence
matrix combining both directions, and two cavity distributions (``a``
without ``b`` and ``b`` without ``a``).  Non-adjacent pairs are not given
messages; their effect on a vertex is the mean-field field

    F_i(z) = sum_j log sum_z' M_N(z, z') mu_j(z')

computed from one global sum and corrected for the vertex itself, its
neighbours and pairs with a missing direction, which keeps a sweep at
O((n + |W| + |M|) K^2).  With ``alpha = 0`` the existence component
vanishes and only the weighted-edge factors remain.

The ``dense`` reference path instead treats every observed pair as an
adjacency, so no field approximation is made (small networks only).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .expfam import FamilyKind, dim, suff_stats
from .netgraph import ObservedNetwork
from .vb_engine import (
    BundlePosteriors,
    FitResult,
    ModelConfig,
    Problem,
    Stopping,
    _check_beliefs,
    _elbo,
    _posteriors,
    _stats,
    compile_problem,
    init_beliefs,
)

__all__ = [
    "UnsupportedConfiguration",
    "BPGraph",
    "EdgeEvidence",
    "MessageSet",
    "compile_bp",
    "compute_evidence",
    "init_messages",
    "sweep_messages",
    "compute_beliefs",
    "pairwise_beliefs",
    "bethe_elbo",
    "fit_bp",
]

DENSE_LIMIT = 50

_MISSING, _NONEDGE, _WEIGHTED = 0, 1, 2


class UnsupportedConfiguration(ValueError):
    """Raised for models belief propagation does not cover."""


def check_config(config: ModelConfig) -> None:
    if config.existence_family is not FamilyKind.BERNOULLI:
        raise UnsupportedConfiguration(
            f"belief propagation supports Bernoulli existence only, not {config.existence_family.value}; "
            "use the vb engine for degree-corrected models"
        )


@dataclass
class BPGraph:
    """Pair adjacency and per-direction observation status."""

    n: int
    a: np.ndarray          # (P,) first endpoint of each pair
    b: np.ndarray          # (P,) second endpoint
    st_ab: np.ndarray      # status of a -> b: 0 missing, 1 non-edge, 2 weighted
    st_ba: np.ndarray
    Tw_ab: np.ndarray      # (P, d_w) weight statistics, zero unless weighted
    Tw_ba: np.ndarray
    ptr: np.ndarray        # arc CSR: arcs leaving each vertex
    nbr: np.ndarray
    pair: np.ndarray
    is_a: np.ndarray       # arc leaves the pair's first endpoint
    rev: np.ndarray
    arc_ab: np.ndarray     # (P,) arc a -> b
    arc_ba: np.ndarray
    self_st: np.ndarray    # (n,) status of the self pair
    self_Tw: np.ndarray    # (n, d_w)
    sp_ptr: np.ndarray     # non-adjacent pairs with a missing direction
    sp_nbr: np.ndarray
    sp_code: np.ndarray
    dense: bool

    @property
    def n_pairs(self) -> int:
        return self.a.size

    @property
    def n_arcs(self) -> int:
        return self.nbr.size

    @property
    def degree(self) -> np.ndarray:
        return np.diff(self.ptr)


def _lookup(keys_sorted, query):
    if keys_sorted.size == 0:
        return np.zeros(query.size, dtype=bool), np.zeros(query.size, dtype=np.int64)
    idx = np.searchsorted(keys_sorted, query)
    idx = np.minimum(idx, keys_sorted.size - 1)
    return keys_sorted[idx] == query, idx


def compile_bp(net: ObservedNetwork, config: ModelConfig, dense: bool = False) -> BPGraph:
    check_config(config)
    d = net.as_directed()
    n = d.n
    wf = config.weight_family
    dw = 0 if wf is None else dim(wf)
    Tw_all = np.zeros((d.w_src.size, dw)) if wf is None else suff_stats(wf, d.w_weight)
    wkey = d.w_src.astype(np.int64) * n + d.w_dst
    worder = np.argsort(wkey, kind="stable")
    wkey, Tw_all = wkey[worder], Tw_all[worder]
    mkey = np.sort(d.m_src.astype(np.int64) * n + d.m_dst)

    def status(src, dst):
        q = src.astype(np.int64) * n + dst
        inw, iw = _lookup(wkey, q)
        inm, _ = _lookup(mkey, q)
        st = np.where(inw, _WEIGHTED, np.where(inm, _MISSING, _NONEDGE)).astype(np.int64)
        T = np.where(inw[:, None], Tw_all[iw] if wkey.size else np.zeros((q.size, dw)), 0.0)
        return st, T

    if dense:
        if n > DENSE_LIMIT:
            raise ValueError(f"dense belief propagation is a reference path for n <= {DENSE_LIMIT}")
        a, b = np.triu_indices(n, 1)
    else:
        off = d.w_src != d.w_dst
        lo = np.minimum(d.w_src[off], d.w_dst[off]).astype(np.int64)
        hi = np.maximum(d.w_src[off], d.w_dst[off]).astype(np.int64)
        codes = np.unique(lo * n + hi)
        a, b = codes // n, codes % n
    st_ab, Tw_ab = status(a, b)
    st_ba, Tw_ba = status(b, a)
    if dense:
        keep = (st_ab != _MISSING) | (st_ba != _MISSING)
        a, b, st_ab, st_ba, Tw_ab, Tw_ba = a[keep], b[keep], st_ab[keep], st_ba[keep], Tw_ab[keep], Tw_ba[keep]

    P = a.size
    src = np.concatenate([a, b])
    dst = np.concatenate([b, a])
    pair = np.concatenate([np.arange(P), np.arange(P)])
    is_a = np.concatenate([np.ones(P, bool), np.zeros(P, bool)])
    order = np.lexsort((dst, src))
    src, dst, pair, is_a = src[order], dst[order], pair[order], is_a[order]
    ptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(src, minlength=n), out=ptr[1:])
    pos = np.empty(2 * P, dtype=np.int64)
    pos[order] = np.arange(2 * P)
    arc_ab, arc_ba = pos[:P], pos[P:]
    rev = np.empty(2 * P, dtype=np.int64)
    rev[arc_ab] = arc_ba
    rev[arc_ba] = arc_ab

    diag = np.arange(n)
    if d.include_self_loops:
        self_st, self_Tw = status(diag, diag)
    else:
        self_st, self_Tw = np.zeros(n, dtype=np.int64), np.zeros((n, dw))

    # non-adjacent pairs with at least one missing direction
    if dense or d.m_src.size == 0:
        sp_ptr, sp_nbr, sp_code = np.zeros(n + 1, dtype=np.int64), np.zeros(0, np.int64), np.zeros(0, np.int64)
    else:
        off = d.m_src != d.m_dst
        lo = np.minimum(d.m_src[off], d.m_dst[off]).astype(np.int64)
        hi = np.maximum(d.m_src[off], d.m_dst[off]).astype(np.int64)
        mcodes = np.unique(lo * n + hi)
        adj = np.sort(a * n + b)
        is_adj, _ = _lookup(adj, mcodes)
        mcodes = mcodes[~is_adj]
        u, v = mcodes // n, mcodes % n
        s_uv, _ = status(u, v)
        s_vu, _ = status(v, u)

        def code(s_out, s_in):
            return np.where(s_out == _MISSING, np.where(s_in == _MISSING, 0, 2), 1).astype(np.int64)

        owner = np.concatenate([u, v])
        other = np.concatenate([v, u])
        cd = np.concatenate([code(s_uv, s_vu), code(s_vu, s_uv)])
        o = np.lexsort((other, owner))
        sp_ptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(owner, minlength=n), out=sp_ptr[1:])
        sp_nbr, sp_code = other[o], cd[o]

    return BPGraph(n, a, b, st_ab, st_ba, Tw_ab, Tw_ba, ptr, dst.astype(np.int64), pair.astype(np.int64),
                   is_a, rev, arc_ab, arc_ba, self_st, self_Tw,
                   sp_ptr, np.ascontiguousarray(sp_nbr, dtype=np.int64), np.ascontiguousarray(sp_code, dtype=np.int64),
                   dense)


@dataclass
class EdgeEvidence:
    """Log evidence per adjacent pair and for non-edges.

    ``log_pair[p, z, z']`` refers to ``(a[p], b[p])`` taking groups
    ``(z, z')``.  ``log_nonedge`` is the shared pair evidence when both
    directions are non-edges; ``log_nonedge_one`` covers a single observed
    non-edge direction ``i -> j`` (indexed ``[z_i, z_j]``).
    """

    log_pair: np.ndarray
    log_nonedge: np.ndarray
    log_nonedge_one: np.ndarray
    unary: np.ndarray
    alpha: float

    @property
    def pair_matrices(self) -> np.ndarray:
        return np.exp(self.log_pair)

    @property
    def nonedge_matrix(self) -> np.ndarray:
        return np.exp(self.log_nonedge)


def _direction_terms(config: ModelConfig, post: BundlePosteriors):
    """Existence log-evidence tables for an edge and for a non-edge."""
    ef = config.existence_family
    eta_e = post.eta_e
    E1 = eta_e @ suff_stats(ef, 1.0)
    E0 = eta_e @ suff_stats(ef, 0.0)
    return E1, E0


def compute_evidence(graph: BPGraph, post: BundlePosteriors, config: ModelConfig) -> EdgeEvidence:
    check_config(config)
    a_ = config.alpha
    E1, E0 = _direction_terms(config, post)
    K = config.K

    a_w = 1.0 - a_ if config.weight_family is not None and a_ < 1.0 else 0.0
    eta_w = np.ascontiguousarray(post.eta_w) if a_w else np.zeros((K, K, 0))

    def directed(st, Tw):
        L = a_ * ((st == _WEIGHTED)[:, None, None] * E1 + (st == _NONEDGE)[:, None, None] * E0)
        if a_w:
            L = L + a_w * np.einsum("pd,zwd->pzw", Tw, post.eta_w)
        return L

    def rows(Tw):
        return np.ascontiguousarray(Tw) if a_w else np.zeros((len(Tw), 0))

    L = _kernels.pair_evidence(graph.st_ab, graph.st_ba, rows(graph.Tw_ab), rows(graph.Tw_ba),
                               np.ascontiguousarray(E1), np.ascontiguousarray(E0), eta_w, float(a_), a_w)
    unary = np.zeros((graph.n, K))
    if np.any(graph.self_st != _MISSING):
        Ls = directed(graph.self_st, graph.self_Tw)
        unary = np.ascontiguousarray(np.diagonal(Ls, axis1=1, axis2=2))
    return EdgeEvidence(np.ascontiguousarray(L), a_ * (E0 + E0.T), a_ * E0, unary, a_)


@dataclass
class MessageSet:
    """Cavity distributions, one per arc of the pair adjacency."""

    cavities: np.ndarray   # (2P, K)
    resets: int = 0


def init_messages(graph: BPGraph, K: int, seed) -> MessageSet:
    """Uniform messages plus Dirichlet noise of weight 0.01."""
    rng = np.random.default_rng(seed)
    c = 1.0 / K + 0.01 * rng.dirichlet(np.ones(K), size=graph.n_arcs)
    return MessageSet(c / c.sum(axis=1, keepdims=True))


def _field(graph: BPGraph, ev: EdgeEvidence, mu):
    if graph.dense or ev.alpha == 0.0:
        return np.zeros_like(mu)
    return _kernels.nonedge_field(np.ascontiguousarray(mu), ev.log_nonedge, ev.log_nonedge_one,
                                  np.ascontiguousarray(ev.log_nonedge_one.T),
                                  graph.ptr, graph.nbr, graph.sp_ptr, graph.sp_nbr, graph.sp_code)


def _log_mu0(config: ModelConfig):
    K = config.K
    mu0 = np.full(K, 1.0 / K) if config.mu0 is None else np.asarray(config.mu0, float)
    with np.errstate(divide="ignore"):
        return np.log(mu0)


def sweep_messages(graph: BPGraph, evidence: EdgeEvidence, messages: MessageSet, beliefs,
                   config: ModelConfig, damping: float = 0.3):
    """One synchronous damped sweep.

    ``beliefs`` (the previous vertex beliefs) feed the non-edge field.
    Returns ``(MessageSet, new beliefs, max change)``.
    """
    if not 0.0 <= damping < 1.0:
        raise ValueError("damping must lie in [0, 1)")
    K = config.K
    F = _field(graph, evidence, beliefs)
    new_cav = np.empty_like(messages.cavities)
    mu = np.empty((graph.n, K))
    change, resets = _kernels.bp_sweep(graph.ptr, graph.pair, graph.is_a, graph.rev, evidence.log_pair,
                                       evidence.unary, F, _log_mu0(config), messages.cavities,
                                       float(damping), new_cav, mu)
    return MessageSet(new_cav, messages.resets + int(resets)), mu, float(change)


def compute_beliefs(graph: BPGraph, evidence: EdgeEvidence, messages: MessageSet, beliefs, config: ModelConfig):
    """Vertex and pairwise beliefs implied by the messages (no update of them)."""
    _, mu, _ = sweep_messages(graph, evidence, messages, beliefs, config, damping=0.0)
    return mu, pairwise_beliefs(graph, evidence, messages)


def pairwise_beliefs(graph: BPGraph, evidence: EdgeEvidence, messages: MessageSet) -> np.ndarray:
    """``mu_ab(z, z') ~ M_ab(z, z') c_{a\\b}(z) c_{b\\a}(z')`` per adjacent pair."""
    return _kernels.pair_beliefs(evidence.log_pair, messages.cavities, graph.arc_ab, graph.arc_ba)


# -- statistics and evidence bound -------------------------------------------

def _bp_stats(p: Problem, graph: BPGraph, config: ModelConfig, mu, pw):
    """Mean-field statistics corrected by the pairwise beliefs of adjacent pairs."""
    Te, Tw = _stats(p, mu)
    ef = config.existence_family
    te1, te0 = suff_stats(ef, 1.0), suff_stats(ef, 0.0)

    def te(st):
        return (st == _WEIGHTED)[:, None] * te1 + (st == _NONEDGE)[:, None] * te0

    if graph.n_pairs:
        Ce, Cw = _kernels.pair_corrections(graph.a, graph.b, np.ascontiguousarray(pw), np.ascontiguousarray(mu),
                                           te(graph.st_ab), te(graph.st_ba), np.ascontiguousarray(graph.Tw_ab),
                                           np.ascontiguousarray(graph.Tw_ba))
        Te = Te + Ce
        if Tw.shape[-1]:
            Tw = Tw + Cw
    sl = graph.self_st != _MISSING
    if np.any(sl):
        m = mu[sl]
        Ds = np.einsum("iz,zw->izw", m, np.eye(config.K)) - m[:, :, None] * m[:, None, :]
        Te = Te + np.einsum("id,izw->zwd", te(graph.self_st[sl]), Ds)
        if Tw.shape[-1]:
            Tw = Tw + np.einsum("id,izw->zwd", graph.self_Tw[sl], Ds)
    return Te, Tw


def _xlogy_ratio(x, ref):
    with np.errstate(divide="ignore", invalid="ignore"):
        t = x * (np.log(x) - ref)
    return np.where(x > 0, t, 0.0)


def _bethe_entropy_term(graph: BPGraph, mu, pw, log_mu0) -> float:
    k = graph.degree.astype(float)
    vert = np.sum((k - 1.0)[:, None] * _xlogy_ratio(mu, log_mu0[None, :]))
    ref = log_mu0[:, None] + log_mu0[None, :]
    pair = _kernels.pair_xlogy(np.ascontiguousarray(pw), np.ascontiguousarray(ref))
    return float(vert - pair)


def bethe_elbo(net: ObservedNetwork, config: ModelConfig, beliefs, pair_beliefs, posteriors: BundlePosteriors,
               dense: bool = False) -> float:
    """Evidence bound with the Bethe entropy in place of the mean-field one."""
    p = compile_problem(net, config)
    graph = compile_bp(net, config, dense)
    Te, Tw = _bp_stats(p, graph, config, beliefs, pair_beliefs)
    return _elbo(p, beliefs, posteriors, Te, Tw, _bethe_entropy_term(graph, beliefs, pair_beliefs, p.log_mu0))


# -- fitting -----------------------------------------------------------------

def _message_phase(graph, ev, msgs, mu, config, stopping):
    sweeps, change = 0, np.inf
    for sweeps in range(1, stopping.max_msg_sweeps + 1):
        msgs, mu, change = sweep_messages(graph, ev, msgs, mu, config, stopping.damping)
        if change < stopping.msg_tol:
            break
    return msgs, mu, sweeps, change


def fit_bp(net: ObservedNetwork, config: ModelConfig, init=None, seed=None,
           stopping: Stopping = Stopping(), dense: bool = False) -> FitResult:
    """Alternate bundle updates with loopy message passing.

    Bundle statistics use the pairwise beliefs on adjacent pairs and the
    product of vertex beliefs elsewhere.  The recorded bound is Bethe, so
    unlike the mean-field engine it is not guaranteed to increase.
    """
    check_config(config)
    n, K = net.n, config.K
    mu = init_beliefs(n, K, seed) if init is None else _check_beliefs(init, n, K).copy()
    p = compile_problem(net, config)
    graph = compile_bp(net, config, dense)
    msgs = init_messages(graph, K, 0 if seed is None else seed)
    pw = mu[graph.a][:, :, None] * mu[graph.b][:, None, :]

    trace = []
    converged = False
    total_sweeps = 0
    msg_converged = True
    it = 0
    for it in range(1, stopping.max_iters + 1):
        post = _posteriors(p, *_bp_stats(p, graph, config, mu, pw))
        ev = compute_evidence(graph, post, config)
        before = mu
        msgs, mu, sweeps, change = _message_phase(graph, ev, msgs, mu, config, stopping)
        total_sweeps += sweeps
        msg_converged = change < stopping.msg_tol
        pw = pairwise_beliefs(graph, ev, msgs)
        Te, Tw = _bp_stats(p, graph, config, mu, pw)
        G = _elbo(p, mu, post, Te, Tw, _bethe_entropy_term(graph, mu, pw, p.log_mu0))
        trace.append(G)
        moved = float(np.max(np.abs(mu - before))) if n else 0.0
        if moved < stopping.inner_tol:
            converged = True
        elif it > 1 and abs(G - trace[-2]) <= stopping.tol * max(1.0, abs(G)):
            converged = True
        if converged:
            break
    Te, Tw = _bp_stats(p, graph, config, mu, pw)
    post = _posteriors(p, Te, Tw)
    G = _elbo(p, mu, post, Te, Tw, _bethe_entropy_term(graph, mu, pw, p.log_mu0))
    trace.append(G)
    extra = {"message_sweeps": total_sweeps, "messages_converged": bool(msg_converged),
             "message_resets": msgs.resets, "dense": bool(dense)}
    return FitResult(mu, post, G, trace, it, converged, config, seed, "bp", net.vertex_ids, extra)
