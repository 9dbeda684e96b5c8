import itertools

import numpy as np
import pytest

from wsbm.expfam import FamilyKind, suff_stats
from wsbm.netgraph import ObservedNetwork


def random_network(rng, n, p_edge=0.4, p_missing=0.1, directed=True, self_loops=False,
                   weight_family=FamilyKind.NORMAL):
    """Small random network with weighted edges, non-edges and missing pairs."""
    if directed:
        pairs = [(i, j) for i in range(n) for j in range(n) if i != j or self_loops]
    else:
        pairs = [(i, j) for i in range(n) for j in range(i, n) if i != j or self_loops]
    u = rng.random(len(pairs))
    w_idx = [k for k in range(len(pairs)) if u[k] < p_edge]
    m_idx = [k for k in range(len(pairs)) if p_edge <= u[k] < p_edge + p_missing]
    if weight_family is FamilyKind.POISSON:
        w = rng.poisson(3.0, len(w_idx)).astype(float)
    elif weight_family is FamilyKind.EXPONENTIAL:
        w = rng.exponential(2.0, len(w_idx))
    else:
        w = rng.normal(0.0, 1.5, len(w_idx))
    ws = np.array([pairs[k][0] for k in w_idx], dtype=np.int64)
    wd = np.array([pairs[k][1] for k in w_idx], dtype=np.int64)
    ms = np.array([pairs[k][0] for k in m_idx], dtype=np.int64)
    md = np.array([pairs[k][1] for k in m_idx], dtype=np.int64)
    return ObservedNetwork(n, ws, wd, w, ms, md, directed=directed, include_self_loops=self_loops)


def observed_pairs(net):
    """``{(i, j): weight or None}`` over observed ordered pairs of the directed view."""
    d = net.as_directed()
    weights = {(int(s), int(t)): float(w) for s, t, w in zip(d.w_src, d.w_dst, d.w_weight)}
    missing = {(int(s), int(t)) for s, t in zip(d.m_src, d.m_dst)}
    out = {}
    for i, j in itertools.product(range(d.n), repeat=2):
        if (i == j and not d.include_self_loops) or (i, j) in missing:
            continue
        out[(i, j)] = weights.get((i, j))
    return out


def dense_stats(net, mu, config):
    """Unscaled ``(<T_e>, <T_w>)`` by a double loop over observed pairs."""
    K = mu.shape[1]
    ef, wf = config.existence_family, config.weight_family
    d = net.as_directed()
    deg = d.degrees()
    Te = np.zeros((K, K, 2))
    Tw = np.zeros((K, K, 0 if wf is None else suff_stats(wf, 0.0).size))
    for (i, j), w in observed_pairs(net).items():
        x = 0.0 if w is None else 1.0
        aux = float(deg.dW_out[i] * deg.dW_in[j]) if ef is FamilyKind.DC else None
        outer = np.outer(mu[i], mu[j])
        Te += outer[:, :, None] * suff_stats(ef, x, aux)
        if w is not None and wf is not None:
            Tw += outer[:, :, None] * suff_stats(wf, w)
    return Te, Tw


def dense_field(net, mu, post, config):
    """``log mu0 + sum_r d<T>_r/d mu_i(z) . <eta>_r`` by a double loop (self-loops excluded)."""
    n, K = mu.shape
    a = config.alpha
    ef, wf = config.existence_family, config.weight_family
    deg = net.as_directed().degrees()
    g = np.tile(np.log(np.full(K, 1.0 / K) if config.mu0 is None else np.asarray(config.mu0)), (n, 1))

    def pair_table(i, j, w):
        x = 0.0 if w is None else 1.0
        aux = float(deg.dW_out[i] * deg.dW_in[j]) if ef is FamilyKind.DC else None
        L = a * post.eta_e @ suff_stats(ef, x, aux)
        if w is not None and wf is not None:
            L = L + (1.0 - a) * post.eta_w @ suff_stats(wf, w)
        return L

    for (i, j), w in observed_pairs(net).items():
        L = pair_table(i, j, w)
        g[i] += L @ mu[j]
        g[j] += L.T @ mu[i]
    return g


def enumerate_marginals(n, K, log_pair_terms, unary=None):
    """Exact vertex and pair marginals of ``prod exp(log_pair)`` by enumeration."""
    P = np.zeros([K] * n)
    for zs in itertools.product(range(K), repeat=n):
        lp = sum(L[zs[i], zs[j]] for (i, j), L in log_pair_terms.items())
        if unary is not None:
            lp += sum(unary[i, zs[i]] for i in range(n))
        P[zs] = lp
    P = np.exp(P - P.max())
    P /= P.sum()
    vert = np.array([P.sum(axis=tuple(k for k in range(n) if k != i)) for i in range(n)])
    pairs = {}
    for (i, j) in log_pair_terms:
        m = P.sum(axis=tuple(k for k in range(n) if k not in (i, j)))
        pairs[(i, j)] = m if i < j else m.T
    return vert, pairs


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
