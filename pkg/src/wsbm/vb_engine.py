"""Mean-field variational Bayes for the weighted stochastic block model.

The evidence lower bound maximised here is

    G = sum_r (<T>_r + tau0 - tau_r) . <eta>_r + sum_r log Z(tau_r)/Z(tau0)
        + sum_i sum_z mu_i(z) log(mu0(z) / mu_i(z))

summed over the existence and weight components, with existence statistics
scaled by ``alpha`` and weight statistics by ``1 - alpha``.  Non-edges are
never enumerated: existence statistics use global belief sums corrected for
missing pairs and the diagonal, so one sweep costs O((n + |W| + |M|) K^2).
"""
from __future__ import annotations

import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import sparse
from scipy.cluster.vq import kmeans2
from scipy.sparse.linalg import svds

from . import _kernels
from .expfam import FamilyKind, check_admissible, default_prior, dim, expected_nat_params, log_partition, suff_stats
from .netgraph import ObservedNetwork

__all__ = [
    "ModelConfig",
    "Stopping",
    "BundlePosteriors",
    "FitResult",
    "Problem",
    "compile_problem",
    "expected_stats",
    "update_bundles",
    "update_beliefs",
    "elbo",
    "fit",
    "run_restarts",
    "substream_seeds",
    "init_beliefs",
    "spectral_beliefs",
    "starting_beliefs",
    "INIT_METHODS",
    "FORMAT",
]

FORMAT = "wsbm-fit/1"


@dataclass(frozen=True)
class ModelConfig:
    """Model choice: group count, mixing weight and the two families.

    ``weight_family=None`` drops the weight component (only sensible with
    ``alpha=1``).  Priors default to :func:`wsbm.expfam.default_prior`.
    """

    K: int
    alpha: float = 0.5
    existence_family: FamilyKind = FamilyKind.BERNOULLI
    weight_family: FamilyKind | None = FamilyKind.NORMAL
    prior_e: tuple | None = None
    prior_w: tuple | None = None
    mu0: tuple | None = None

    def __post_init__(self):
        if int(self.K) < 1:
            raise ValueError("K must be at least 1")
        object.__setattr__(self, "K", int(self.K))
        a = float(self.alpha)
        if not 0.0 <= a <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        object.__setattr__(self, "alpha", a)
        ef = FamilyKind(self.existence_family)
        if not ef.is_existence:
            raise ValueError(f"{ef.value} is not an existence family")
        object.__setattr__(self, "existence_family", ef)
        if self.weight_family is not None:
            wf = FamilyKind(self.weight_family)
            if wf.is_existence:
                raise ValueError(f"{wf.value} is not a weight family")
            object.__setattr__(self, "weight_family", wf)
        elif a < 1.0:
            raise ValueError("a weight family is required when alpha < 1")
        for name in ("prior_e", "prior_w", "mu0"):
            v = getattr(self, name)
            if v is not None:
                object.__setattr__(self, name, tuple(float(x) for x in np.ravel(v)))
        if self.mu0 is not None:
            m = np.asarray(self.mu0)
            if len(m) != self.K or np.any(m < 0) or abs(m.sum() - 1.0) > 1e-12:
                raise ValueError("mu0 must be a length-K probability vector")

    @property
    def degree_corrected(self) -> bool:
        return self.existence_family is FamilyKind.DC

    def to_dict(self):
        return {
            "K": self.K,
            "alpha": self.alpha,
            "existence_family": self.existence_family.value,
            "weight_family": None if self.weight_family is None else self.weight_family.value,
            "prior_e": None if self.prior_e is None else list(self.prior_e),
            "prior_w": None if self.prior_w is None else list(self.prior_w),
            "mu0": None if self.mu0 is None else list(self.mu0),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(K=d["K"], alpha=d["alpha"], existence_family=d["existence_family"],
                   weight_family=d.get("weight_family"), prior_e=d.get("prior_e"),
                   prior_w=d.get("prior_w"), mu0=d.get("mu0"))


@dataclass(frozen=True)
class Stopping:
    tol: float = 1e-6          # outer: relative change of G
    inner_tol: float = 1e-6    # inner: max change of a belief entry
    max_iters: int = 1000
    max_inner: int = 200
    # belief propagation only
    msg_tol: float = 1e-6
    max_msg_sweeps: int = 200
    damping: float = 0.3


@dataclass
class BundlePosteriors:
    """Posterior hyperparameters per bundle; ``[z, z']`` is bundle ``K*z + z'``."""

    tau_e: np.ndarray   # (K, K, d_e)
    tau_w: np.ndarray   # (K, K, d_w)
    eta_e: np.ndarray
    eta_w: np.ndarray

    @staticmethod
    def bundle_index(z, zp, K):
        return K * z + zp


@dataclass
class Problem:
    """Network compiled into the arrays the update loops consume."""

    n: int
    K: int
    alpha: float
    ef: FamilyKind
    wf: FamilyKind | None
    src: np.ndarray
    dst: np.ndarray
    weight: np.ndarray
    Tw: np.ndarray            # (|W|, d_w) weight statistics per edge, in (src, dst) order
    out_ptr: np.ndarray
    out_nbr: np.ndarray
    out_T: np.ndarray
    in_ptr: np.ndarray
    in_nbr: np.ndarray
    in_T: np.ndarray
    m_src: np.ndarray
    m_dst: np.ndarray
    mo_ptr: np.ndarray
    mo_nbr: np.ndarray
    mi_ptr: np.ndarray
    mi_nbr: np.ndarray
    c_out: np.ndarray
    c_in: np.ndarray
    excl: bool
    prior_e: np.ndarray
    prior_w: np.ndarray
    log_mu0: np.ndarray

    @property
    def d_w(self):
        return self.Tw.shape[1]


def _csr(keys, nbr, n, payload=None):
    order = np.lexsort((nbr, keys))
    ptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(keys, minlength=n), out=ptr[1:])
    out = [ptr, np.ascontiguousarray(nbr[order])]
    if payload is not None:
        out.append(np.ascontiguousarray(payload[order]))
    return out


def compile_problem(net: ObservedNetwork, config: ModelConfig) -> Problem:
    d = net.as_directed()
    n, K = d.n, config.K
    src, dst, w = np.asarray(d.w_src), np.asarray(d.w_dst), np.asarray(d.w_weight)
    wf = config.weight_family
    if wf is None:
        Tw = np.zeros((len(w), 0))
        prior_w = np.zeros(0)
    else:
        Tw = np.ascontiguousarray(suff_stats(wf, w))
        prior_w = np.asarray(config.prior_w if config.prior_w is not None else default_prior(wf, w), float)
        check_admissible(wf, prior_w)
    ef = config.existence_family
    prior_e = np.asarray(config.prior_e if config.prior_e is not None else default_prior(ef), float)
    check_admissible(ef, prior_e)
    if ef is FamilyKind.DC:
        deg = d.degrees()
        c_out, c_in = deg.dW_out.astype(float), deg.dW_in.astype(float)
    else:
        c_out = c_in = np.ones(n)
    out_ptr, out_nbr, out_T = _csr(src, dst, n, Tw)
    in_ptr, in_nbr, in_T = _csr(dst, src, n, Tw)
    m_src, m_dst = np.asarray(d.m_src), np.asarray(d.m_dst)
    mo_ptr, mo_nbr = _csr(m_src, m_dst, n)
    mi_ptr, mi_nbr = _csr(m_dst, m_src, n)
    mu0 = np.full(K, 1.0 / K) if config.mu0 is None else np.asarray(config.mu0)
    with np.errstate(divide="ignore"):
        log_mu0 = np.log(mu0)
    return Problem(n, K, config.alpha, ef, wf, src, dst, w, Tw, out_ptr, out_nbr, out_T,
                   in_ptr, in_nbr, in_T, m_src, m_dst, mo_ptr, mo_nbr, mi_ptr, mi_nbr,
                   np.ascontiguousarray(c_out), np.ascontiguousarray(c_in),
                   not d.include_self_loops, prior_e, prior_w, log_mu0)


# -- statistics and bundle updates -------------------------------------------

def _edge_sums(p: Problem, mu: np.ndarray):
    """``sum_e mu_src (x) mu_dst`` over weighted edges, plain and times each weight statistic."""
    return _kernels.edge_stats(p.src, p.dst, p.Tw, np.ascontiguousarray(mu, dtype=float))


def _existence_stats(p: Problem, mu: np.ndarray, edges=None) -> np.ndarray:
    K = p.K
    Te = np.empty((K, K, 2))
    Te[:, :, 0] = _edge_sums(p, mu)[0] if edges is None else edges
    so = p.c_out @ mu
    si = p.c_in @ mu
    last = np.outer(so, si)
    if len(p.m_src):
        cm = p.c_out[p.m_src] * p.c_in[p.m_dst]
        last -= (mu[p.m_src] * cm[:, None]).T @ mu[p.m_dst]
    if p.excl:
        last -= (mu * (p.c_out * p.c_in)[:, None]).T @ mu
    Te[:, :, 1] = last
    return Te


def _weight_stats(p: Problem, mu: np.ndarray) -> np.ndarray:
    return _edge_sums(p, mu)[1]


def _stats(p: Problem, mu):
    edges, Tw = _edge_sums(p, mu)
    return _existence_stats(p, mu, edges), Tw


def _posteriors(p: Problem, Te, Tw) -> BundlePosteriors:
    a = p.alpha
    tau_e = p.prior_e + a * Te
    eta_e = expected_nat_params(p.ef, tau_e)
    if p.wf is None:
        tau_w = np.zeros((p.K, p.K, 0))
        eta_w = tau_w.copy()
    else:
        tau_w = p.prior_w + (1.0 - a) * Tw
        eta_w = expected_nat_params(p.wf, tau_w)
    return BundlePosteriors(tau_e, tau_w, eta_e, eta_w)


def _elbo(p: Problem, mu, post: BundlePosteriors, Te=None, Tw=None, entropy=None) -> float:
    if Te is None:
        Te, Tw = _stats(p, mu)
    a = p.alpha
    G = float(np.sum((a * Te + p.prior_e - post.tau_e) * post.eta_e))
    G += float(np.sum(log_partition(p.ef, post.tau_e)) - p.K * p.K * log_partition(p.ef, p.prior_e))
    if p.wf is not None:
        G += float(np.sum(((1.0 - a) * Tw + p.prior_w - post.tau_w) * post.eta_w))
        G += float(np.sum(log_partition(p.wf, post.tau_w)) - p.K * p.K * log_partition(p.wf, p.prior_w))
    if entropy is None:
        entropy = _mean_field_entropy_term(mu, p.log_mu0)
    return G + entropy


def _mean_field_entropy_term(mu, log_mu0):
    with np.errstate(divide="ignore", invalid="ignore"):
        t = mu * (log_mu0[None, :] - np.log(mu))
    return float(np.sum(np.where(mu > 0, t, 0.0)))


def _kernel_args(p: Problem, post: BundlePosteriors):
    a = p.alpha
    eta_w = post.eta_w if p.wf is not None else np.zeros((0, p.K, p.K))
    return (p.log_mu0, a, 1.0 - a if p.wf is not None else 0.0,
            np.ascontiguousarray(np.moveaxis(post.eta_e, -1, 0)),
            np.ascontiguousarray(np.moveaxis(eta_w, -1, 0)),
            p.out_ptr, p.out_nbr, p.out_T, p.in_ptr, p.in_nbr, p.in_T,
            p.c_out, p.c_in, p.mo_ptr, p.mo_nbr, p.mi_ptr, p.mi_nbr, p.excl)


def belief_fields(p: Problem, mu, post: BundlePosteriors) -> np.ndarray:
    """Unnormalised log-belief ``log mu0 + sum_r d<T>_r/d mu_i(z) . <eta>_r`` for every vertex."""
    return _kernels.all_fields(np.ascontiguousarray(mu, dtype=float), *_kernel_args(p, post))


def _sweep(p: Problem, mu, post, stopping: Stopping, order=None):
    if order is None:
        order = np.arange(p.n, dtype=np.int64)
    return _kernels.belief_sweeps(order, mu, *_kernel_args(p, post), stopping.max_inner, stopping.inner_tol)


# -- public single-step operations -----------------------------------------------

def _check_beliefs(mu, n, K):
    mu = np.asarray(mu, dtype=float)
    if mu.shape != (n, K):
        raise ValueError(f"beliefs must have shape ({n}, {K}), got {mu.shape}")
    if np.any(mu < 0) or np.any(np.abs(mu.sum(axis=1) - 1.0) > 1e-9):
        raise ValueError("belief rows must be probability vectors")
    return mu


def expected_stats(net: ObservedNetwork, beliefs, config: ModelConfig, component: str = "both"):
    """Expected sufficient statistics per bundle, shape ``(K, K, d)``.

    ``component`` selects ``"existence"``, ``"weight"`` or ``"both"`` (a tuple).
    The statistics are unscaled by ``alpha``.
    """
    p = compile_problem(net, config)
    mu = _check_beliefs(beliefs, p.n, p.K)
    if component == "existence":
        return _existence_stats(p, mu)
    if component == "weight":
        return _weight_stats(p, mu)
    return _stats(p, mu)


def update_bundles(net: ObservedNetwork, beliefs, config: ModelConfig) -> BundlePosteriors:
    p = compile_problem(net, config)
    mu = _check_beliefs(beliefs, p.n, p.K)
    return _posteriors(p, *_stats(p, mu))


def update_beliefs(net: ObservedNetwork, posteriors: BundlePosteriors, config: ModelConfig,
                   beliefs_in, stopping: Stopping = Stopping()) -> np.ndarray:
    p = compile_problem(net, config)
    mu = _check_beliefs(beliefs_in, p.n, p.K).copy()
    _sweep(p, mu, posteriors, stopping)
    return mu


def elbo(net: ObservedNetwork, beliefs, posteriors: BundlePosteriors, config: ModelConfig) -> float:
    p = compile_problem(net, config)
    mu = _check_beliefs(beliefs, p.n, p.K)
    return _elbo(p, mu, posteriors)


# -- fitting -----------------------------------------------------------------

@dataclass
class FitResult:
    beliefs: np.ndarray
    posteriors: BundlePosteriors
    elbo: float
    elbo_trace: list
    iterations: int
    converged: bool
    config: ModelConfig
    seed: int | None
    engine: str = "vb"
    vertex_ids: tuple = ()
    extra: dict = field(default_factory=dict)

    @property
    def labels(self) -> np.ndarray:
        return np.argmax(self.beliefs, axis=1)

    def to_dict(self):
        post = self.posteriors
        d = {
            "format": FORMAT,
            "engine": self.engine,
            "elbo_kind": "bethe" if self.engine == "bp" else "mean-field",
            "config": self.config.to_dict(),
            "seed": self.seed,
            "elbo": self.elbo,
            "elbo_trace": [float(g) for g in self.elbo_trace],
            "iterations": self.iterations,
            "converged": bool(self.converged),
            "vertices": list(self.vertex_ids),
            "labels": [int(z) for z in self.labels],
            "beliefs": self.beliefs.tolist(),
            "bundles": [
                {"r": BundlePosteriors.bundle_index(z, zp, self.config.K), "z": z, "z_prime": zp,
                 "tau_e": post.tau_e[z, zp].tolist(), "tau_w": post.tau_w[z, zp].tolist()}
                for z in range(self.config.K) for zp in range(self.config.K)
            ],
        }
        d.update(self.extra)
        return d

    @classmethod
    def from_dict(cls, d):
        if d.get("format") != FORMAT:
            raise ValueError(f"unsupported fit format {d.get('format')!r}")
        config = ModelConfig.from_dict(d["config"])
        K = config.K
        tau_e = np.zeros((K, K, dim(config.existence_family)))
        dw = 0 if config.weight_family is None else dim(config.weight_family)
        tau_w = np.zeros((K, K, dw))
        for b in d["bundles"]:
            tau_e[b["z"], b["z_prime"]] = b["tau_e"]
            tau_w[b["z"], b["z_prime"]] = b["tau_w"]
        eta_e = expected_nat_params(config.existence_family, tau_e)
        eta_w = expected_nat_params(config.weight_family, tau_w) if dw else tau_w.copy()
        post = BundlePosteriors(tau_e, tau_w, eta_e, eta_w)
        return cls(np.asarray(d["beliefs"], float).reshape(-1, K), post, d["elbo"], list(d["elbo_trace"]),
                   d["iterations"], d["converged"], config, d["seed"], d["engine"], tuple(d["vertices"]))


def canonical_order(init: np.ndarray) -> np.ndarray:
    """Vertex order determined by the initial belief rows (ties by index).

    Processing vertices in this order, on a network relabelled accordingly,
    makes a fit equivariant under vertex permutation.
    """
    return np.lexsort(init.T[::-1])


INIT_METHODS = ("dirichlet", "spectral", "mixed")


def init_beliefs(n, K, seed) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.dirichlet(np.ones(K), size=n)


def _profile_embedding(net: ObservedNetwork, K: int, alpha: float, degree_corrected: bool) -> np.ndarray:
    """Leading left singular vectors of the stacked out/in profile matrix.

    Existence columns carry weight ``sqrt(alpha)`` and standardised weight
    columns ``sqrt(1 - alpha)``; missing pairs and non-edges both read as 0.
    """
    n = net.n
    src, dst, w = net.w_src, net.w_dst, net.w_weight
    if not net.directed:
        src, dst, w = np.r_[src, dst], np.r_[dst, src], np.r_[w, w]
    blocks = []
    if alpha > 0 and src.size:
        A = sparse.csr_matrix((np.ones(src.size), (src, dst)), shape=(n, n))
        blocks += [math.sqrt(alpha) * A, math.sqrt(alpha) * A.T]
    if alpha < 1 and src.size:
        sd = float(w.std())
        wc = (w - w.mean()) / (sd if sd > 0 else 1.0)
        Wc = sparse.csr_matrix((wc, (src, dst)), shape=(n, n))
        blocks += [math.sqrt(1 - alpha) * Wc, math.sqrt(1 - alpha) * Wc.T]
    if not blocks:
        return np.zeros((n, 1))
    X = sparse.hstack(blocks).tocsr()
    k = min(K, n - 1) if n > 1 else 1
    if n <= 2000 or k < 1:
        U, S, _ = np.linalg.svd(X.toarray(), full_matrices=False)
    else:
        # fixed start vector keeps ARPACK deterministic
        v0 = np.full(min(X.shape), 1.0 / math.sqrt(min(X.shape)))
        U, S, _ = svds(X, k=k, v0=v0)
        idx = np.argsort(-S, kind="stable")
        U, S = U[:, idx], S[idx]
    emb = U[:, :k] * S[:k]
    if degree_corrected:
        norm = np.linalg.norm(emb, axis=1, keepdims=True)
        emb = emb / np.where(norm > 0, norm, 1.0)
    return emb


def spectral_beliefs(net: ObservedNetwork, config: "ModelConfig", seed, smoothing: float = 0.1,
                     embedding=None) -> np.ndarray:
    """Initial beliefs from k-means++ on a spectral embedding of vertex profiles.

    The hard k-means labels are blended with a Dirichlet(1) draw,
    ``(1 - smoothing) * onehot + smoothing * noise``, so every row is
    interior and restarts differ even when k-means agrees.
    """
    n, K = net.n, config.K
    rng = np.random.default_rng(seed)
    if embedding is None:
        embedding = _profile_embedding(net, K, config.alpha, config.degree_corrected)
    if K == 1 or n <= K:
        labels = np.arange(n) % K
    else:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")  # empty clusters are fine here
            _, labels = kmeans2(embedding, K, minit="++", seed=rng)
    noise = rng.dirichlet(np.ones(K), size=n)
    return (1.0 - smoothing) * np.eye(K)[labels] + smoothing * noise


def starting_beliefs(net: ObservedNetwork, config: "ModelConfig", seed, method: str = "dirichlet",
                     restart: int = 0, embedding=None) -> np.ndarray:
    """Initial beliefs for one restart; ``mixed`` alternates spectral and Dirichlet."""
    if method not in INIT_METHODS:
        raise ValueError(f"unknown init method {method!r}; expected one of {INIT_METHODS}")
    if method == "spectral" or (method == "mixed" and restart % 2 == 0):
        return spectral_beliefs(net, config, seed, embedding=embedding)
    return init_beliefs(net.n, config.K, seed)


def fit(net: ObservedNetwork, config: ModelConfig, init=None, seed=None,
        stopping: Stopping = Stopping(), init_method: str = "dirichlet") -> FitResult:
    """Alternate bundle and belief updates until G stops improving.

    Without explicit ``init`` the beliefs start from ``init_method`` drawn
    with ``seed``.
    """
    n, K = net.n, config.K
    if init is None:
        mu_init = starting_beliefs(net, config, seed, init_method)
    else:
        mu_init = _check_beliefs(init, n, K).copy()
    order = canonical_order(mu_init)
    rank = np.empty(n, dtype=np.int64)
    rank[order] = np.arange(n)
    p = compile_problem(net.permute(rank), config)
    mu = np.ascontiguousarray(mu_init[order])

    trace = []
    converged = False
    it = 0
    Te, Tw = _stats(p, mu)
    for it in range(1, stopping.max_iters + 1):
        post = _posteriors(p, Te, Tw)
        before = mu.copy()
        _sweep(p, mu, post, stopping)
        moved = float(np.max(np.abs(mu - before))) if n else 0.0
        # statistics of the swept beliefs serve this bound and the next bundle update
        Te, Tw = _stats(p, mu)
        G = _elbo(p, mu, post, Te, Tw)
        trace.append(G)
        if moved < stopping.inner_tol:
            converged = True
        elif it > 1 and abs(G - trace[-2]) <= stopping.tol * max(1.0, abs(G)):
            converged = True
        if converged:
            break
    post = _posteriors(p, Te, Tw)
    G = _elbo(p, mu, post, Te, Tw)
    trace.append(G)
    return FitResult(mu[rank], post, G, trace, it, converged, config, seed, "vb", net.vertex_ids)


def substream_seeds(seed, count, stream=0):
    """Integer seeds for ``count`` independent sub-streams of ``seed``."""
    ss = np.random.SeedSequence(entropy=0 if seed is None else int(seed), spawn_key=(int(stream),))
    return [int(c.generate_state(1, np.uint64)[0] >> np.uint64(1)) for c in ss.spawn(count)]


def _fit_job(args):
    engine, net, config, sub, stopping, init = args
    if engine == "bp":
        from .bp_engine import fit_bp
        return fit_bp(net, config, init=init, seed=sub, stopping=stopping)
    return fit(net, config, init=init, seed=sub, stopping=stopping)


def run_restarts(net: ObservedNetwork, config: ModelConfig, n_restarts: int = 10, seed=0,
                 parallelism: int = 1, stopping: Stopping = Stopping(), engine: str = "vb",
                 init_method: str = "mixed"):
    """Independent fits from derived seeds; returns ``(best, elbos)``.

    With ``init_method="mixed"`` even-numbered restarts start from the
    spectral k-means guess and odd ones from Dirichlet(1) draws.  The best
    fit maximises G, ties going to the smaller sub-seed, so the answer does
    not depend on ``parallelism``.
    """
    if n_restarts < 1:
        raise ValueError("n_restarts must be at least 1")
    if engine not in ("vb", "bp"):
        raise ValueError(f"unknown engine {engine!r}")
    subs = substream_seeds(seed, n_restarts)
    emb = None
    if init_method in ("spectral", "mixed"):
        emb = _profile_embedding(net, config.K, config.alpha, config.degree_corrected)
    inits = [starting_beliefs(net, config, s, init_method, r, emb) for r, s in enumerate(subs)]
    jobs = [(engine, net, config, s, stopping, mu) for s, mu in zip(subs, inits)]
    if parallelism > 1 and n_restarts > 1:
        with ProcessPoolExecutor(max_workers=min(parallelism, n_restarts)) as ex:
            results = list(ex.map(_fit_job, jobs))
    else:
        results = [_fit_job(j) for j in jobs]
    elbos = [r.elbo for r in results]
    best = max(range(n_restarts), key=lambda k: (results[k].elbo, -subs[k]))
    return results[best], elbos
