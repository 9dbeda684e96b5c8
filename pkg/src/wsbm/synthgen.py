"""Synthetic networks drawn from the weighted block model, and partition scores.

Besides the generic :func:`sample`, two fixed benchmarks are provided:

* :func:`fig2_toy` -- four equal groups on a complete directed graph where
  the weight of ``(i, j)`` is the smaller of the two (1-based) group labels
  plus Gaussian noise.  Any threshold splits the weights into at most three
  classes, so no binarised version separates all four groups.
* :func:`fig4_suite` -- eight groups of ten vertices, complete directed,
  weights ``N(-1, s2)`` inside groups and ``N(1, s2)`` between them.

Returned labels are always 0-based.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .expfam import FamilyKind
from .netgraph import ObservedNetwork

__all__ = [
    "GeneratorSpec",
    "sample",
    "fig2_toy",
    "fig4_suite",
    "archetype_matrix",
    "threshold_network",
    "nmi",
]


@dataclass(frozen=True)
class GeneratorSpec:
    """Parameters of one generative draw.

    Either ``labels`` or ``group_sizes`` fixes the planted partition.
    ``p_edge[z, z']`` is the existence probability of bundle ``(z, z')``; when
    ``propensity`` is given the model is degree-corrected and ``p_edge`` holds
    rates ``theta``, with ``P(edge) = 1 - exp(-phi_i phi_j theta)``.
    ``weight_mean`` is the mean weight per bundle for every family (Poisson
    rate, exponential mean); ``weight_var`` is used by the Normal family only.
    """

    K: int
    p_edge: np.ndarray
    weight_family: FamilyKind | None = FamilyKind.NORMAL
    weight_mean: np.ndarray | None = None
    weight_var: np.ndarray | None = None
    labels: np.ndarray | None = None
    group_sizes: tuple | None = None
    propensity: np.ndarray | None = None
    missing_fraction: float = 0.0
    undirected: bool = False
    seed: int | None = None

    def __post_init__(self):
        K = int(self.K)
        if K < 1:
            raise ValueError("K must be positive")
        if (self.labels is None) == (self.group_sizes is None):
            raise ValueError("give exactly one of labels or group_sizes")
        if self.labels is not None:
            z = np.asarray(self.labels, dtype=np.int64)
        else:
            z = np.repeat(np.arange(len(self.group_sizes)), self.group_sizes)
            if len(self.group_sizes) != K:
                raise ValueError("group_sizes needs one entry per group")
        if z.size and (z.min() < 0 or z.max() >= K):
            raise ValueError("labels must lie in [0, K)")
        object.__setattr__(self, "labels", z)
        object.__setattr__(self, "group_sizes", None)
        p = np.broadcast_to(np.asarray(self.p_edge, dtype=float), (K, K)).copy()
        if self.propensity is None:
            if np.any((p < 0) | (p > 1)):
                raise ValueError("edge probabilities must lie in [0, 1]")
        else:
            if np.any(p < 0):
                raise ValueError("degree-corrected rates must be non-negative")
            phi = np.asarray(self.propensity, dtype=float)
            if phi.shape != z.shape or np.any(phi < 0):
                raise ValueError("propensity needs one non-negative value per vertex")
            object.__setattr__(self, "propensity", phi)
        object.__setattr__(self, "p_edge", p)
        if self.weight_family is not None:
            fam = FamilyKind(self.weight_family)
            if fam.is_existence:
                raise ValueError(f"{fam.value} is not a weight family")
            object.__setattr__(self, "weight_family", fam)
            if self.weight_mean is None:
                raise ValueError("weight_mean is required with a weight family")
            mean = np.broadcast_to(np.asarray(self.weight_mean, dtype=float), (K, K)).copy()
            if fam is not FamilyKind.NORMAL and np.any(mean <= 0):
                raise ValueError(f"{fam.value} weights need positive bundle means")
            object.__setattr__(self, "weight_mean", mean)
            if fam is FamilyKind.NORMAL:
                var = np.broadcast_to(np.asarray(
                    1.0 if self.weight_var is None else self.weight_var, dtype=float), (K, K)).copy()
                if np.any(var <= 0):
                    raise ValueError("Normal variances must be positive")
                object.__setattr__(self, "weight_var", var)
        if not 0.0 <= self.missing_fraction < 1.0:
            raise ValueError("missing_fraction must lie in [0, 1)")


def _draw_weights(spec: GeneratorSpec, rng, zs, zd):
    mean = spec.weight_mean[zs, zd]
    fam = spec.weight_family
    if fam is FamilyKind.NORMAL:
        return mean + np.sqrt(spec.weight_var[zs, zd]) * rng.standard_normal(mean.size)
    if fam is FamilyKind.POISSON:
        return rng.poisson(mean).astype(float)
    return rng.exponential(mean)


def sample(spec: GeneratorSpec):
    """Draw ``(ObservedNetwork, labels)``; deterministic given ``spec.seed``."""
    rng = np.random.default_rng(spec.seed)
    z = spec.labels
    n = z.size
    if spec.undirected:
        src, dst = np.triu_indices(n, 1)
    else:
        src, dst = np.nonzero(~np.eye(n, dtype=bool))
    zs, zd = z[src], z[dst]
    if spec.propensity is None:
        p = spec.p_edge[zs, zd]
    else:
        p = -np.expm1(-spec.propensity[src] * spec.propensity[dst] * spec.p_edge[zs, zd])
    exists = rng.random(src.size) < p
    if spec.weight_family is None:
        w = np.ones(src.size)
    else:
        w = _draw_weights(spec, rng, zs, zd)
    n_missing = int(round(spec.missing_fraction * src.size))
    missing = np.zeros(src.size, dtype=bool)
    if n_missing:
        missing[rng.choice(src.size, size=n_missing, replace=False)] = True
    keep = exists & ~missing
    net = ObservedNetwork(
        n, src[keep], dst[keep], w[keep], src[missing], dst[missing], directed=not spec.undirected
    )
    return net, z.copy()


def fig2_toy(group_size: int = 8, noise_sd: float = 0.1, seed=None):
    """Complete directed graph on four groups; weight = min(label) + noise."""
    if noise_sd < 0:
        raise ValueError("noise_sd must be non-negative")
    z = np.repeat(np.arange(4), group_size)
    level = np.minimum.outer(z, z) + 1.0
    rng = np.random.default_rng(seed)
    n = z.size
    src, dst = np.nonzero(~np.eye(n, dtype=bool))
    w = level[src, dst] + noise_sd * rng.standard_normal(src.size)
    return ObservedNetwork(n, src, dst, w), z


def fig4_suite(sigma2: float = 0.15, seed=None, n_groups: int = 8, group_size: int = 10):
    """Complete directed graph; within-group weights ``N(-1, s2)``, between ``N(1, s2)``."""
    if not sigma2 > 0:
        raise ValueError("sigma2 must be positive")
    mean = np.where(np.eye(n_groups, dtype=bool), -1.0, 1.0)
    spec = GeneratorSpec(K=n_groups, p_edge=1.0, weight_mean=mean, weight_var=sigma2,
                         group_sizes=(group_size,) * n_groups, seed=seed)
    return sample(spec)


def archetype_matrix(kind: str, K: int, high: float = 0.8, low: float = 0.1) -> np.ndarray:
    """Bundle-parameter matrix for one of the four classic block structures.

    ``assortative`` (dense diagonal), ``disassortative`` (dense off-diagonal),
    ``core-periphery`` (group 0 is the core) and ``ordered`` (each group
    connects to the next one).
    """
    eye = np.eye(K, dtype=bool)
    if kind == "assortative":
        return np.where(eye, high, low)
    if kind == "disassortative":
        return np.where(eye, low, high)
    if kind == "core-periphery":
        m = np.full((K, K), low)
        m[0, :] = high
        m[:, 0] = high
        return m
    if kind == "ordered":
        m = np.full((K, K), low)
        m[np.arange(K - 1), np.arange(1, K)] = high
        return m
    raise ValueError(f"unknown archetype {kind!r}")


def threshold_network(net: ObservedNetwork, threshold: float) -> ObservedNetwork:
    """Binary network keeping the weighted edges with weight >= ``threshold``."""
    keep = net.w_weight >= threshold
    return ObservedNetwork(net.n, net.w_src[keep], net.w_dst[keep], np.ones(int(keep.sum())),
                           net.m_src, net.m_dst, directed=net.directed,
                           include_self_loops=net.include_self_loops, vertex_ids=net.vertex_ids)


def _entropy(counts):
    # sorted terms make the result independent of label order, bit for bit
    p = np.sort(counts[counts > 0]) / counts.sum()
    return float(-np.sum(p * np.log(p)))


def nmi(labels_a, labels_b) -> float:
    """Normalised mutual information ``2 I(A;B) / (H(A) + H(B))``, natural logs.

    Equal to 1 when both partitions are a single cluster and 0 when only one
    of them is.
    """
    a = np.asarray(labels_a).ravel()
    b = np.asarray(labels_b).ravel()
    if a.size != b.size:
        raise ValueError(f"label sequences differ in length ({a.size} vs {b.size})")
    if a.size == 0:
        return 1.0
    _, ia = np.unique(a, return_inverse=True)
    _, ib = np.unique(b, return_inverse=True)
    table = np.zeros((ia.max() + 1, ib.max() + 1))
    np.add.at(table, (ia, ib), 1.0)
    ha = _entropy(table.sum(axis=1))
    hb = _entropy(table.sum(axis=0))
    if ha == 0.0 and hb == 0.0:
        return 1.0
    if ha == 0.0 or hb == 0.0:
        return 0.0
    nz = table > 0
    if nz.sum() == table.shape[0] == table.shape[1]:
        return 1.0  # same partition up to relabelling; skip the rounding in I / H
    n = a.size
    outer = np.outer(table.sum(axis=1), table.sum(axis=0))
    terms = table[nz] / n * np.log(table[nz] * n / outer[nz])
    mi = float(np.sum(np.sort(terms)))
    return float(min(1.0, max(0.0, 2.0 * mi / (ha + hb))))
