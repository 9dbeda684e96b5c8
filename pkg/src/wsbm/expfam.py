"""Exponential families used for edge existence and edge weights.

Every family is written as ``h(x) exp(T(x) . eta(theta))``.  The base
measure ``h`` is dropped everywhere, so log-likelihoods and evidence bounds
are only comparable between models that share the same families.

Conjugate priors take the form ``exp(tau . eta(theta)) / Z(tau)`` where the
normaliser integrates over ``theta`` with Lebesgue measure.  The functions
here are vectorised over leading axes: ``tau`` may have shape ``(..., d)``.

Family summary (``d`` = natural-parameter dimension)::

    bernoulli    T = (x, 1)        eta = (log p/(1-p), log(1-p))          d=2
    dc           T = (x, d_i d_j)  eta = (log theta, -theta)              d=2
    normal       T = (x, x^2, 1, 1)  eta = (m/s2, -1/(2 s2), -m^2/(2 s2),
                                            -log(s2)/2)                   d=4
    poisson      T = (x, 1)        eta = (log lam, -lam)                  d=2
    exponential  T = (x, 1)        eta = (-lam, log lam)                  d=2

The Normal family carries two unit statistics so that the conjugate
normal-inverse-gamma prior has separate pseudo-counts for the mean
(``tau[2]``) and for the variance (``tau[3]``).
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy.special import betaln, digamma, gammaln

__all__ = [
    "FamilyKind",
    "AdmissibilityError",
    "HyperParams",
    "dim",
    "suff_stats",
    "log_partition",
    "expected_nat_params",
    "posterior_update",
    "posterior_mean",
    "check_admissible",
    "default_prior",
]


class FamilyKind(str, enum.Enum):
    BERNOULLI = "bernoulli"
    DC = "dc"
    NORMAL = "normal"
    POISSON = "poisson"
    EXPONENTIAL = "exponential"

    @property
    def is_existence(self) -> bool:
        return self in (FamilyKind.BERNOULLI, FamilyKind.DC)


_DIM = {
    FamilyKind.BERNOULLI: 2,
    FamilyKind.DC: 2,
    FamilyKind.NORMAL: 4,
    FamilyKind.POISSON: 2,
    FamilyKind.EXPONENTIAL: 2,
}


class AdmissibilityError(ValueError):
    """Raised when ``Z(tau)`` is not finite for the given hyperparameters."""


def dim(family: FamilyKind) -> int:
    return _DIM[FamilyKind(family)]


def suff_stats(family, x, aux=None) -> np.ndarray:
    """Sufficient statistics ``T(x)``; vectorised over ``x``.

    ``aux`` is the degree product ``d_out(i) * d_in(j)`` and is required for
    (and only for) the degree-corrected existence family.
    """
    family = FamilyKind(family)
    x = np.asarray(x, dtype=float)
    if family is FamilyKind.DC:
        if aux is None:
            raise ValueError("degree-corrected statistics need the degree product")
        aux = np.broadcast_to(np.asarray(aux, dtype=float), x.shape)
    elif aux is not None:
        raise ValueError(f"{family.value} statistics take no degree product")

    bad = ~np.isfinite(x)
    if family in (FamilyKind.BERNOULLI, FamilyKind.DC):
        bad |= (x != 0) & (x != 1)
    elif family is FamilyKind.POISSON:
        bad |= (x < 0) | (x != np.round(x))
    elif family is FamilyKind.EXPONENTIAL:
        bad |= x < 0
    if np.any(bad):
        idx = int(np.flatnonzero(np.ravel(bad))[0])
        raise ValueError(
            f"value {np.ravel(x)[idx]!r} at position {idx} is outside the "
            f"support of the {family.value} family"
        )

    ones = np.ones_like(x)
    if family is FamilyKind.NORMAL:
        cols = (x, x * x, ones, ones)
    elif family is FamilyKind.DC:
        cols = (x, aux)
    else:
        cols = (x, ones)
    return np.stack(cols, axis=-1)


def _constraints(family: FamilyKind, tau: np.ndarray):
    """Yield (mask_of_violations, description) pairs."""
    t = tau
    if family is FamilyKind.BERNOULLI:
        yield t[..., 0] <= -1, "tau[0] > -1 (Beta first argument positive)"
        yield t[..., 1] - t[..., 0] <= -1, "tau[1] - tau[0] > -1 (Beta second argument positive)"
    elif family in (FamilyKind.DC, FamilyKind.POISSON):
        yield t[..., 0] <= -1, "tau[0] > -1 (Gamma shape positive)"
        yield t[..., 1] <= 0, "tau[1] > 0 (Gamma rate positive)"
    elif family is FamilyKind.EXPONENTIAL:
        yield t[..., 1] <= -1, "tau[1] > -1 (Gamma shape positive)"
        yield t[..., 0] <= 0, "tau[0] > 0 (Gamma rate positive)"
    elif family is FamilyKind.NORMAL:
        yield t[..., 2] <= 0, "tau[2] > 0 (positive mean pseudo-count)"
        yield t[..., 3] <= 3, "tau[3] > 3 (variance pseudo-count large enough for a proper prior)"
        yield (t[..., 1] - t[..., 0] ** 2 / np.where(t[..., 2] > 0, t[..., 2], 1.0)) <= 0, (
            "tau[1] - tau[0]^2/tau[2] > 0 (positive sum-of-squares slack)"
        )


def check_admissible(family, tau) -> None:
    family = FamilyKind(family)
    tau = np.asarray(tau, dtype=float)
    if tau.shape[-1] != _DIM[family]:
        raise ValueError(
            f"{family.value} hyperparameters need length {_DIM[family]}, got {tau.shape[-1]}"
        )
    if not np.all(np.isfinite(tau)):
        raise AdmissibilityError(f"{family.value}: non-finite hyperparameters")
    for mask, what in _constraints(family, tau):
        if np.any(mask):
            where = np.argwhere(np.atleast_1d(mask))[0]
            raise AdmissibilityError(
                f"{family.value}: inadmissible tau at index {tuple(int(v) for v in where)}; requires {what}"
            )


def _normal_parts(tau):
    kappa = tau[..., 2]
    mean = tau[..., 0] / kappa
    beta = 0.5 * (tau[..., 1] - tau[..., 0] * mean)
    shape = 0.5 * (tau[..., 3] - 3.0)
    return kappa, mean, beta, shape


def log_partition(family, tau) -> np.ndarray:
    """``log Z(tau)`` in closed form."""
    family = FamilyKind(family)
    tau = np.asarray(tau, dtype=float)
    check_admissible(family, tau)
    if family is FamilyKind.BERNOULLI:
        return betaln(tau[..., 0] + 1.0, tau[..., 1] - tau[..., 0] + 1.0)
    if family in (FamilyKind.DC, FamilyKind.POISSON):
        a = tau[..., 0] + 1.0
        return gammaln(a) - a * np.log(tau[..., 1])
    if family is FamilyKind.EXPONENTIAL:
        a = tau[..., 1] + 1.0
        return gammaln(a) - a * np.log(tau[..., 0])
    kappa, _, beta, shape = _normal_parts(tau)
    return 0.5 * np.log(2.0 * np.pi / kappa) + gammaln(shape) - shape * np.log(beta)


def expected_nat_params(family, tau) -> np.ndarray:
    """``<eta> = d log Z / d tau`` under the conjugate distribution."""
    family = FamilyKind(family)
    tau = np.asarray(tau, dtype=float)
    check_admissible(family, tau)
    if family is FamilyKind.BERNOULLI:
        a = tau[..., 0] + 1.0
        b = tau[..., 1] - tau[..., 0] + 1.0
        db = digamma(b)
        cols = (digamma(a) - db, db - digamma(a + b))
    elif family in (FamilyKind.DC, FamilyKind.POISSON):
        a = tau[..., 0] + 1.0
        log_rate = np.log(tau[..., 1])
        cols = (digamma(a) - log_rate, -a / tau[..., 1])
    elif family is FamilyKind.EXPONENTIAL:
        a = tau[..., 1] + 1.0
        cols = (-a / tau[..., 0], digamma(a) - np.log(tau[..., 0]))
    else:
        kappa, mean, beta, shape = _normal_parts(tau)
        inv_var = shape / beta  # E[1/s2]
        e_log_var = np.log(beta) - digamma(shape)
        cols = (
            mean * inv_var,
            -0.5 * inv_var,
            -0.5 * (mean * mean * inv_var + 1.0 / kappa),
            -0.5 * e_log_var,
        )
    return np.stack(cols, axis=-1)


def posterior_update(family, prior_tau, expected_stats) -> np.ndarray:
    """Conjugate update ``tau = tau0 + <T>`` (broadcast over bundles)."""
    family = FamilyKind(family)
    prior_tau = np.asarray(prior_tau, dtype=float)
    expected_stats = np.asarray(expected_stats, dtype=float)
    d = _DIM[family]
    if prior_tau.shape[-1] != d or expected_stats.shape[-1] != d:
        raise ValueError(
            f"{family.value}: statistic dimension mismatch "
            f"({prior_tau.shape[-1]} vs {expected_stats.shape[-1]}, expected {d})"
        )
    return prior_tau + expected_stats


def posterior_mean(family, tau) -> np.ndarray:
    """Posterior mean of the observable's mean parameter.

    Existence families give the edge probability (Bernoulli) or the rate
    (degree-corrected, to be multiplied by the degree product).  Weight
    families give the expected weight.
    """
    family = FamilyKind(family)
    tau = np.asarray(tau, dtype=float)
    if family is FamilyKind.BERNOULLI:
        return (tau[..., 0] + 1.0) / (tau[..., 1] + 2.0)
    if family in (FamilyKind.DC, FamilyKind.POISSON):
        return (tau[..., 0] + 1.0) / tau[..., 1]
    if family is FamilyKind.EXPONENTIAL:
        # E[1/lam] under Gamma(tau1 + 1, tau0); infinite when tau1 <= 0
        with np.errstate(divide="ignore"):
            return np.where(tau[..., 1] > 0, tau[..., 0] / np.where(tau[..., 1] > 0, tau[..., 1], 1.0), np.inf)
    return tau[..., 0] / tau[..., 2]


# default Normal prior: pseudo-count on the mean and on the variance (> 3)
NORMAL_MEAN_COUNT = 0.01
NORMAL_VAR_COUNT = 3.2
NORMAL_VAR_FLOOR = 1e-8


def default_prior(family, weights=None, mean_count=None, var_count=None) -> np.ndarray:
    """Weak proper default prior ``tau0``.

    Bernoulli -> Beta(1, 1); degree-corrected, Poisson and exponential ->
    Gamma(1, rate 1); Normal -> normal-inverse-gamma centred on the mean of
    ``weights`` with ``E[1/s2]`` equal to the inverse of their variance, a
    nearly flat mean (pseudo-count ``mean_count``) and variance pseudo-count
    ``var_count``.
    """
    family = FamilyKind(family)
    if family is FamilyKind.BERNOULLI:
        return np.zeros(2)
    if family in (FamilyKind.DC, FamilyKind.POISSON):
        return np.array([0.0, 1.0])
    if family is FamilyKind.EXPONENTIAL:
        return np.array([1.0, 0.0])
    # sorted so the prior is bit-identical under any reordering of the edges
    w = np.sort(np.asarray(weights if weights is not None else [], dtype=float).ravel())
    mean = float(w.mean()) if w.size else 0.0
    var = float(w.var()) if w.size > 1 else 0.0
    # (near-)constant weights: fall back to unit variance, kept large enough
    # against the squared scale that tau[1] - tau[0]^2/tau[2] survives rounding
    scale = float(np.mean(w * w)) if w.size else 0.0
    if not var > NORMAL_VAR_FLOOR * scale:
        var = max(1.0, NORMAL_VAR_FLOOR * scale)
    kappa = NORMAL_MEAN_COUNT if mean_count is None else float(mean_count)
    nu = NORMAL_VAR_COUNT if var_count is None else float(var_count)
    beta = 0.5 * (nu - 3.0) * var
    return np.array([kappa * mean, 2.0 * beta + kappa * mean * mean, kappa, nu])


@dataclass(frozen=True)
class HyperParams:
    """Conjugate-prior hyperparameters ``tau`` for one bundle (or a stack)."""

    family: FamilyKind
    tau: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "family", FamilyKind(self.family))
        object.__setattr__(self, "tau", np.asarray(self.tau, dtype=float))

    def log_partition(self):
        return log_partition(self.family, self.tau)

    def expected_nat_params(self):
        return expected_nat_params(self.family, self.tau)

    def update(self, expected_stats) -> "HyperParams":
        return HyperParams(self.family, posterior_update(self.family, self.tau, expected_stats))

    def mean(self):
        return posterior_mean(self.family, self.tau)
