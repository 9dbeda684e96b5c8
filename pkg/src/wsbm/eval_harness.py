"""Cross-validated prediction of held-out edges and weights.

Each trial hides a random fraction of the observed pairs (they become
missing in the training network), fits every model in the roster on the
same training network and scores posterior-mean predictions on the hidden
pairs.  Existence error is the Brier score (squared error of the predicted
probability against the 0/1 outcome); weight error is the squared error on
hidden pairs that carry an edge.  ROC AUC of the existence scores is
reported alongside.

Predictions average the bundle posterior means over the endpoints' beliefs.
The bundle posteriors used here are ``tau0 + <T>`` with the full, unscaled
statistics under the fitted beliefs, so a model fitted with ``alpha = 0``
still predicts existence from the partition it found.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .expfam import FamilyKind, posterior_mean
from .netgraph import ObservedNetwork, WeightTransform, holdout_split, normalize_weights
from .vb_engine import FitResult, ModelConfig, Stopping, compile_problem, _stats, run_restarts

__all__ = [
    "PredictionRecord",
    "TrialScore",
    "ModelReport",
    "EvalReport",
    "Predictor",
    "predict_existence",
    "predict_weight",
    "default_roster",
    "score_records",
    "roc_auc",
    "run_cv",
    "REPORT_FORMAT",
]

REPORT_FORMAT = "wsbm-eval/1"


@dataclass(frozen=True)
class PredictionRecord:
    src: int
    dst: int
    predicted_existence: float
    predicted_weight: float
    truth_existence: int
    truth_weight: float | None = None

    def __post_init__(self):
        if not 0.0 <= self.predicted_existence <= 1.0:
            raise ValueError("predicted existence must lie in [0, 1]")
        if (self.truth_weight is not None) != bool(self.truth_existence):
            raise ValueError("a true weight is present exactly when the edge exists")


class Predictor:
    """Posterior-mean predictions from a fit and its training network."""

    def __init__(self, fit: FitResult, train: ObservedNetwork):
        cfg = fit.config
        if train.n != fit.beliefs.shape[0]:
            raise ValueError("fit and training network disagree on the vertex count")
        self.fit = fit
        self.config = cfg
        p = compile_problem(train, cfg)
        Te, Tw = _stats(p, fit.beliefs)
        self.tau_e = p.prior_e + Te
        self.tau_w = p.prior_w + Tw if cfg.weight_family is not None else None
        self.approximate = cfg.degree_corrected
        if cfg.degree_corrected:
            deg = train.as_directed().degrees()
            self.d_out = deg.dW_out.astype(float)
            self.d_in = deg.dW_in.astype(float)
        self.existence_only = cfg.weight_family is None or cfg.alpha == 1.0
        if self.existence_only:
            self._bundle_means(train)

    def _bundle_means(self, train: ObservedNetwork):
        d = train.as_directed()
        K = self.config.K
        z = self.fit.labels
        w = d.w_weight
        self.global_mean = float(np.sort(w).mean()) if w.size else 0.0
        sums = np.zeros((K, K))
        counts = np.zeros((K, K))
        np.add.at(sums, (z[d.w_src], z[d.w_dst]), w)
        np.add.at(counts, (z[d.w_src], z[d.w_dst]), 1.0)
        with np.errstate(invalid="ignore", divide="ignore"):
            self.sample_means = np.where(counts > 0, sums / np.where(counts > 0, counts, 1.0), self.global_mean)

    def _average(self, table, src, dst):
        mu = self.fit.beliefs
        return np.einsum("pz,zw,pw->p", mu[src], table, mu[dst])

    def existence(self, src, dst) -> np.ndarray:
        src, dst = np.asarray(src, np.int64), np.asarray(dst, np.int64)
        rate = posterior_mean(self.config.existence_family, self.tau_e)
        p = self._average(rate, src, dst)
        if self.config.degree_corrected:
            p = p * self.d_out[src] * self.d_in[dst]
        return np.clip(p, 0.0, 1.0)

    def weight(self, src, dst) -> np.ndarray:
        src, dst = np.asarray(src, np.int64), np.asarray(dst, np.int64)
        if self.existence_only:
            z = self.fit.labels
            return self.sample_means[z[src], z[dst]]
        return self._average(posterior_mean(self.config.weight_family, self.tau_w), src, dst)


def predict_existence(fit: FitResult, train: ObservedNetwork, src, dst) -> np.ndarray:
    """Probability that each pair carries an edge (clamped rate for degree-corrected fits)."""
    return Predictor(fit, train).existence(src, dst)


def predict_weight(fit: FitResult, train: ObservedNetwork, src, dst) -> np.ndarray:
    """Expected weight of each pair given that it carries an edge."""
    return Predictor(fit, train).weight(src, dst)


def default_roster(K: int = 4, weight_family=FamilyKind.NORMAL):
    """The five standard variants as ``(tag, ModelConfig)`` pairs."""
    wf = FamilyKind(weight_family)
    return [
        ("pWSBM", ModelConfig(K=K, alpha=0.0, weight_family=wf)),
        ("bWSBM", ModelConfig(K=K, alpha=0.5, weight_family=wf)),
        ("SBM", ModelConfig(K=K, alpha=1.0, weight_family=None)),
        ("DCWBM", ModelConfig(K=K, alpha=0.5, existence_family=FamilyKind.DC, weight_family=wf)),
        ("DCBM", ModelConfig(K=K, alpha=1.0, existence_family=FamilyKind.DC, weight_family=None)),
    ]


def roc_auc(scores, labels) -> float | None:
    """Area under the ROC curve (ties count one half); None without both classes."""
    scores = np.asarray(scores, float)
    labels = np.asarray(labels, bool)
    pos, neg = int(labels.sum()), int((~labels).sum())
    if pos == 0 or neg == 0:
        return None
    r = rankdata(scores)
    return float((r[labels].sum() - pos * (pos + 1) / 2.0) / (pos * neg))


@dataclass
class TrialScore:
    trial: int
    existence_mse: float
    weight_mse: float | None
    auc: float | None
    records: list = field(default_factory=list)


def score_records(records):
    """``(existence MSE, weight MSE, AUC)`` of a list of records."""
    if not records:
        return float("nan"), None, None
    pe = np.array([r.predicted_existence for r in records])
    te = np.array([r.truth_existence for r in records], float)
    e_mse = float(np.mean((pe - te) ** 2))
    ws = [(r.predicted_weight - r.truth_weight) ** 2 for r in records if r.truth_existence]
    w_mse = float(np.mean(ws)) if ws else None
    return e_mse, w_mse, roc_auc(pe, te)


def _mean_se(values):
    v = np.array([x for x in values if x is not None], float)
    if v.size == 0:
        return None, None
    se = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else None
    return float(v.mean()), se


@dataclass
class ModelReport:
    tag: str
    config: ModelConfig
    trials: list

    def summary(self):
        out = {"model": self.tag, "config": self.config.to_dict()}
        for key in ("existence_mse", "weight_mse", "auc"):
            m, se = _mean_se(getattr(t, key) for t in self.trials)
            out[key] = {"mean": m, "se": se}
        return out


@dataclass
class EvalReport:
    models: list
    fraction: float
    n_trials: int
    seed: int
    transform: WeightTransform | None = None

    def by_tag(self, tag) -> ModelReport:
        for m in self.models:
            if m.tag == tag:
                return m
        raise KeyError(tag)

    def to_dict(self):
        return {
            "format": REPORT_FORMAT,
            "fraction": self.fraction,
            "trials": self.n_trials,
            "seed": self.seed,
            "weight_transform": None if self.transform is None else self.transform.to_dict(),
            "existence_metric": "brier",
            "models": [m.summary() for m in self.models],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def trials_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["model", "trial", "existence_mse", "weight_mse", "auc", "n_pairs"])
        for m in self.models:
            for t in m.trials:
                w.writerow([m.tag, t.trial, repr(t.existence_mse),
                            "" if t.weight_mse is None else repr(t.weight_mse),
                            "" if t.auc is None else repr(t.auc), len(t.records)])
        return buf.getvalue()

    def records_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["model", "trial", "src", "dst", "predicted_existence", "predicted_weight",
                    "truth_existence", "truth_weight"])
        for m in self.models:
            for t in m.trials:
                for r in t.records:
                    w.writerow([m.tag, t.trial, r.src, r.dst, repr(r.predicted_existence),
                                repr(r.predicted_weight), r.truth_existence,
                                "" if r.truth_weight is None else repr(r.truth_weight)])
        return buf.getvalue()


def _substream(seed, *key):
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))


def run_cv(net: ObservedNetwork, roster=None, fraction: float = 0.2, trials: int = 25, restarts: int = 10,
           seed: int = 0, parallelism: int = 1, stopping: Stopping = Stopping(), engine: str = "vb",
           normalize: str | None = None) -> EvalReport:
    """Hold out ``fraction`` of the observed pairs ``trials`` times and score every model.

    ``normalize`` (``"linear"`` or ``"log_then_linear"``) rescales weights before the
    split, so weight errors are reported in normalised units.
    """
    roster = default_roster() if roster is None else list(roster)
    if not roster:
        raise ValueError("empty model roster")
    if engine == "bp":
        bad = [tag for tag, cfg in roster if cfg.existence_family is not FamilyKind.BERNOULLI]
        if bad:
            raise ValueError(f"models {bad} are degree-corrected and need the vb engine")
    if trials < 1:
        raise ValueError("trials must be at least 1")
    transform = None
    if normalize is not None:
        net, transform = normalize_weights(net, normalize)
    reports = [ModelReport(tag, cfg, []) for tag, cfg in roster]
    for t in range(trials):
        train, held = holdout_split(net, fraction, _substream(seed, 2, t))
        for m_idx, (tag, cfg) in enumerate(roster):
            fit, _ = run_restarts(train, cfg, restarts, _substream(seed, 3, t, m_idx), parallelism,
                                  stopping, engine)
            pred = Predictor(fit, train)
            pe = pred.existence(held.src, held.dst)
            pw = pred.weight(held.src, held.dst)
            records = [
                PredictionRecord(int(s), int(d), float(e), float(w), int(x), float(tw) if x else None)
                for s, d, e, w, x, tw in zip(held.src, held.dst, pe, pw, held.exists, held.weight)
            ]
            e_mse, w_mse, auc = score_records(records)
            reports[m_idx].trials.append(TrialScore(t, e_mse, w_mse, auc, records))
    return EvalReport(reports, fraction, trials, seed, transform)
