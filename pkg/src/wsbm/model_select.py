"""Choosing between fitted models with approximate Bayes factors.

The converged evidence bound G stands in for the marginal log-likelihood,
so ``log B(a, b) = G_a - G_b``.  Because every family drops its base
measure, G values are only comparable between candidates that share
``alpha`` and both families; :func:`sweep_k` enforces this.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, replace

import numpy as np

from .netgraph import ObservedNetwork
from .synthgen import nmi
from .vb_engine import FitResult, ModelConfig, Stopping, run_restarts

__all__ = ["Candidate", "SelectionReport", "check_comparable", "sweep_k", "parse_k_range", "REPORT_FORMAT"]

REPORT_FORMAT = "wsbm-selection/1"


@dataclass
class Candidate:
    config: ModelConfig
    fit: FitResult
    elbo: float
    restarts: int
    restart_elbos: list
    nmi: float | None = None


@dataclass
class SelectionReport:
    candidates: list
    log_bayes_factors: np.ndarray   # [a, b] = G_a - G_b
    chosen: int

    @property
    def chosen_config(self) -> ModelConfig:
        return self.candidates[self.chosen].config

    def to_dict(self):
        return {
            "format": REPORT_FORMAT,
            "chosen": self.chosen,
            "chosen_K": self.chosen_config.K,
            "candidates": [
                {"K": c.config.K, "config": c.config.to_dict(), "elbo": c.elbo, "restarts": c.restarts,
                 "restart_elbos": [float(g) for g in c.restart_elbos], "nmi": c.nmi,
                 "labels": [int(z) for z in c.fit.labels]}
                for c in self.candidates
            ],
            "log_bayes_factors": self.log_bayes_factors.tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["K", "elbo", "log_bf_vs_chosen", "nmi", "restarts", "chosen"])
        g_best = self.candidates[self.chosen].elbo
        for idx, c in enumerate(self.candidates):
            w.writerow([c.config.K, repr(float(c.elbo)), repr(float(c.elbo - g_best)),
                        "" if c.nmi is None else repr(float(c.nmi)), c.restarts, int(idx == self.chosen)])
        return buf.getvalue()


def check_comparable(configs) -> None:
    """Reject candidate sets whose G values are not on a common scale."""
    configs = list(configs)
    ref = configs[0]
    for c in configs[1:]:
        if c.alpha != ref.alpha:
            raise ValueError(f"candidates differ in alpha ({ref.alpha} vs {c.alpha}); G is not comparable")
        if c.existence_family != ref.existence_family or c.weight_family != ref.weight_family:
            raise ValueError("candidates mix distribution families; G is not comparable")


def select(candidates) -> SelectionReport:
    """Bayes-factor matrix and argmax of G; ties go to the smaller K."""
    if not candidates:
        raise ValueError("no candidates")
    check_comparable(c.config for c in candidates)
    G = np.array([c.elbo for c in candidates], dtype=float)
    lbf = G[:, None] - G[None, :]
    chosen = min(range(len(candidates)), key=lambda i: (-G[i], candidates[i].config.K, i))
    return SelectionReport(list(candidates), lbf, chosen)


def sweep_k(net: ObservedNetwork, base_config: ModelConfig, k_range, restarts: int = 10, seed=0,
            parallelism: int = 1, stopping: Stopping = Stopping(), engine: str = "vb",
            truth=None, init_method: str = "mixed") -> SelectionReport:
    """Best-of-``restarts`` fits for every K in ``k_range``.

    Each K draws its restart seeds from its own sub-stream of ``seed``.
    ``truth`` (planted labels) adds the NMI of each candidate to the report.
    """
    ks = [int(k) for k in k_range]
    if not ks:
        raise ValueError("k_range is empty")
    if len(set(ks)) != len(ks) or min(ks) < 1:
        raise ValueError("k_range must hold distinct positive group counts")
    if base_config.mu0 is not None and any(k != base_config.K for k in ks):
        raise ValueError("a custom label prior mu0 fixes K; drop it to sweep over K")
    cands = []
    for k in ks:
        cfg = replace(base_config, K=k)
        ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(1, k))
        sub = int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))
        best, elbos = run_restarts(net, cfg, restarts, sub, parallelism, stopping, engine, init_method)
        score = None if truth is None else nmi(truth, best.labels)
        cands.append(Candidate(cfg, best, best.elbo, restarts, elbos, score))
    return select(cands)


def parse_k_range(text: str):
    """``"3"``, ``"1..14"`` or ``"2,4,8"`` to a list of group counts."""
    text = text.strip()
    try:
        if ".." in text:
            lo, hi = text.split("..", 1)
            lo, hi = int(lo), int(hi)
            if hi < lo:
                raise ValueError
            return list(range(lo, hi + 1))
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise ValueError(f"cannot parse K range {text!r}; use e.g. 1..14 or 2,4,8") from None
