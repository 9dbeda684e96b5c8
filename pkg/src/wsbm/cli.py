"""Command-line front end: ``wsbm <subcommand> [options]``.

Primary outputs (JSON, CSV, edge lists) depend only on the inputs and the
flags, never on wall-clock time or the number of worker processes.  Run
metadata such as timestamps goes to a sidecar ``<output>.log``.

Exit status: 0 on success, 1 on invalid input (one ``error:`` line on
stderr), 2 when ``--strict`` is given and a fit did not converge.
"""
from __future__ import annotations

import argparse
import datetime
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .eval_harness import REPORT_FORMAT as EVAL_FORMAT
from .eval_harness import Predictor, default_roster, run_cv
from .expfam import FamilyKind
from .model_select import REPORT_FORMAT as SELECT_FORMAT
from .model_select import parse_k_range, sweep_k
from .netgraph import load_edge_list, load_labels, read_labels, write_edge_list, write_labels
from .synthgen import GeneratorSpec, fig2_toy, fig4_suite, nmi, sample
from .vb_engine import FORMAT as FIT_FORMAT
from .vb_engine import INIT_METHODS, FitResult, ModelConfig, Stopping, run_restarts

PREDICT_FORMAT = "wsbm-predict/1"
GENERATE_FORMAT = "wsbm-generate/1"
NMI_FORMAT = "wsbm-nmi/1"

MODEL_ALPHA = {"pure": 0.0, "balanced": 0.5, "classic": 1.0}


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(message)


def _add_input(p, required=True):
    p.add_argument("-i", "--input", required=required, help="edge list (src dst weight per line)")
    p.add_argument("--missing", help="file of unobserved pairs (src dst per line)")
    p.add_argument("--undirected", action="store_true", help="treat the edge list as undirected")
    p.add_argument("--self-loops", action="store_true", help="model self-pairs")


def _add_model(p, k_required=True):
    if k_required:
        p.add_argument("--k", type=int, required=True, help="number of groups")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--alpha", type=float, help="existence weight in [0, 1] (default 0.5)")
    g.add_argument("--model", choices=sorted(MODEL_ALPHA), help="pure (0), balanced (0.5) or classic (1)")
    p.add_argument("--weight-dist", choices=["normal", "poisson", "exponential", "none"], default="normal")
    p.add_argument("--degree-correct", action="store_true", help="degree-corrected existence model")
    p.add_argument("--engine", choices=["vb", "bp"], default="vb")


def _add_run(p, restarts=10):
    p.add_argument("--restarts", type=int, default=restarts)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-6, help="relative change of G to stop at")
    p.add_argument("--max-iters", type=int, default=1000)
    p.add_argument("--threads", type=int, default=1, help="worker processes for restarts")
    p.add_argument("--init", choices=INIT_METHODS, default="mixed", help="starting beliefs of restarts")


def _add_output(p, default_format):
    p.add_argument("-o", "--output", help="output path (default: stdout)")
    p.add_argument("--format", choices=["json", "csv"], default=default_format)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="wsbm", description="Weighted stochastic block models.")
    parser.add_argument("--version", action="store_true", help="print toolkit and format versions")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("fit", help="fit one model (best of several restarts)")
    _add_input(p)
    _add_model(p)
    _add_run(p)
    _add_output(p, "json")
    p.add_argument("--strict", action="store_true", help="exit 2 if the best fit did not converge")

    p = sub.add_parser("select-k", help="sweep the number of groups and compare G")
    _add_input(p)
    p.add_argument("--k-range", required=True, help="e.g. 1..14 or 2,4,8")
    _add_model(p, k_required=False)
    _add_run(p)
    _add_output(p, "csv")
    p.add_argument("--labels", help="planted labels, adds an NMI column")
    p.add_argument("--strict", action="store_true", help="exit 2 if any best fit did not converge")

    p = sub.add_parser("generate", help="sample a synthetic network")
    p.add_argument("--preset", choices=["fig2", "fig4", "planted"], required=True)
    p.add_argument("--sigma2", type=float, default=0.15, help="weight variance (fig4, planted)")
    p.add_argument("--noise-sd", type=float, default=0.1, help="weight noise (fig2)")
    p.add_argument("--group-size", type=int, help="vertices per group")
    p.add_argument("--k", type=int, default=4, help="groups (planted)")
    p.add_argument("--p-in", type=float, default=0.3, help="within-group edge probability (planted)")
    p.add_argument("--p-out", type=float, default=0.05, help="between-group edge probability (planted)")
    p.add_argument("--mean-in", type=float, default=-1.0, help="within-group mean weight (planted)")
    p.add_argument("--mean-out", type=float, default=1.0, help="between-group mean weight (planted)")
    p.add_argument("--missing-fraction", type=float, default=0.0)
    p.add_argument("--undirected", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", required=True, help="edge list to write")
    p.add_argument("--labels-out", help="planted labels (default: <output>.labels.tsv)")
    p.add_argument("--format", choices=["json", "none"], default="none", help="print a JSON summary")

    p = sub.add_parser("predict", help="posterior-mean predictions for vertex pairs")
    _add_input(p)
    p.add_argument("--fit", required=True, help="fit JSON written by 'wsbm fit'")
    p.add_argument("--pairs", required=True, help="pairs to score (src dst per line)")
    _add_output(p, "csv")

    p = sub.add_parser("evaluate", help="cross-validated edge and weight prediction")
    _add_input(p)
    p.add_argument("--k", type=int, default=4)
    p.add_argument("--models", default="pWSBM,bWSBM,SBM,DCWBM,DCBM", help="comma-separated roster")
    p.add_argument("--weight-dist", choices=["normal", "poisson", "exponential"], default="normal")
    p.add_argument("--engine", choices=["vb", "bp"], default="vb")
    p.add_argument("--fraction", type=float, default=0.2)
    p.add_argument("--trials", type=int, default=25)
    p.add_argument("--normalize", choices=["none", "linear", "log_then_linear"], default="none",
                   help="map weights onto [-1, 1] before splitting")
    _add_run(p)
    _add_output(p, "json")
    p.add_argument("--records", help="also write every prediction record as CSV")

    p = sub.add_parser("nmi", help="normalised mutual information of two labelings")
    p.add_argument("--labels-a", required=True)
    p.add_argument("--labels-b", required=True)
    p.add_argument("--format", choices=["text", "json"], default="text")
    p.add_argument("-o", "--output")
    return parser


# -- helpers -----------------------------------------------------------------

def _load_net(args):
    return load_edge_list(args.input, args.missing, directed=False if args.undirected else None,
                          include_self_loops=True if args.self_loops else None)


def _config(args, K):
    alpha = MODEL_ALPHA[args.model] if args.model else (0.5 if args.alpha is None else args.alpha)
    wf = None if args.weight_dist == "none" else FamilyKind(args.weight_dist)
    ef = FamilyKind.DC if args.degree_correct else FamilyKind.BERNOULLI
    if args.engine == "bp" and args.degree_correct:
        raise CliError("--engine bp cannot be combined with --degree-correct")
    if wf is None and alpha < 1.0:
        raise CliError("--weight-dist none requires --alpha 1 (or --model classic)")
    return ModelConfig(K=K, alpha=alpha, existence_family=ef, weight_family=wf)


def _stopping(args):
    if args.restarts < 1:
        raise CliError("--restarts must be at least 1")
    if args.threads < 1:
        raise CliError("--threads must be at least 1")
    return Stopping(tol=args.tol, max_iters=args.max_iters)


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _emit(text: str, path):
    if path:
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


def _fit_csv(fit: FitResult) -> str:
    K = fit.config.K
    lines = ["vertex,label," + ",".join(f"belief_{z}" for z in range(K))]
    for v, lab, row in zip(fit.vertex_ids, fit.labels, fit.beliefs):
        lines.append(f"{v},{int(lab)}," + ",".join(repr(float(x)) for x in row))
    return "\n".join(lines) + "\n"


def _read_pairs(path, net):
    pairs = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) < 2:
                raise CliError(f"{path}:{lineno}: expected 'src dst'")
            try:
                pairs.append((net.index_of(parts[0]), net.index_of(parts[1])))
            except (KeyError, ValueError) as exc:
                raise CliError(f"{path}:{lineno}: {exc}") from None
    arr = np.array(pairs, dtype=np.int64).reshape(-1, 2)
    return arr[:, 0], arr[:, 1]


# -- subcommands ---------------------------------------------------------------

def cmd_fit(args):
    net = _load_net(args)
    cfg = _config(args, args.k)
    best, elbos = run_restarts(net, cfg, args.restarts, args.seed, args.threads, _stopping(args),
                               args.engine, args.init)
    best.extra = dict(best.extra, restart_elbos=[float(g) for g in elbos], restarts=args.restarts)
    if args.format == "json":
        _emit(_dumps(best.to_dict()), args.output)
    else:
        _emit(_fit_csv(best), args.output)
    return 2 if args.strict and not best.converged else 0


def cmd_select_k(args):
    ks = parse_k_range(args.k_range)
    net = _load_net(args)
    cfg = _config(args, ks[0])
    truth = None
    if args.labels:
        truth = load_labels(args.labels, net.vertex_ids)
    report = sweep_k(net, cfg, ks, args.restarts, args.seed, args.threads, _stopping(args),
                     args.engine, truth, args.init)
    _emit(report.to_json() if args.format == "json" else report.to_csv(), args.output)
    ok = all(c.fit.converged for c in report.candidates)
    return 2 if args.strict and not ok else 0


def cmd_generate(args):
    if args.preset == "fig2":
        net, z = fig2_toy(args.group_size or 8, args.noise_sd, args.seed)
        params = {"group_size": args.group_size or 8, "noise_sd": args.noise_sd}
    elif args.preset == "fig4":
        net, z = fig4_suite(args.sigma2, args.seed, group_size=args.group_size or 10)
        params = {"group_size": args.group_size or 10, "sigma2": args.sigma2}
    else:
        K, size = args.k, args.group_size or 10
        eye = np.eye(K, dtype=bool)
        spec = GeneratorSpec(K=K, p_edge=np.where(eye, args.p_in, args.p_out),
                             weight_mean=np.where(eye, args.mean_in, args.mean_out), weight_var=args.sigma2,
                             group_sizes=(size,) * K, missing_fraction=args.missing_fraction,
                             undirected=args.undirected, seed=args.seed)
        net, z = sample(spec)
        params = {"K": K, "group_size": size, "p_in": args.p_in, "p_out": args.p_out, "mean_in": args.mean_in,
                  "mean_out": args.mean_out, "sigma2": args.sigma2, "missing_fraction": args.missing_fraction,
                  "undirected": args.undirected}
    out = Path(args.output)
    missing_path = None
    if net.n_missing:
        missing_path = out.with_name(out.name + ".missing.tsv")
    write_edge_list(net, out, missing_path)
    labels_path = Path(args.labels_out) if args.labels_out else out.with_name(out.name + ".labels.tsv")
    write_labels(labels_path, net.vertex_ids, z)
    if args.format == "json":
        summary = {"format": GENERATE_FORMAT, "preset": args.preset, "seed": args.seed, "params": params,
                   "n": net.n, "weighted_edges": net.n_weighted, "missing_pairs": net.n_missing,
                   "edge_list": out.name, "labels": labels_path.name,
                   "missing_list": None if missing_path is None else missing_path.name}
        sys.stdout.write(_dumps(summary))
    return 0


def cmd_predict(args):
    net = _load_net(args)
    try:
        fit = FitResult.from_dict(json.loads(Path(args.fit).read_text()))
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise CliError(f"{args.fit}: not a fit file ({exc})") from None
    if tuple(fit.vertex_ids) != tuple(net.vertex_ids):
        raise CliError("the fit was made on a network with different vertices")
    src, dst = _read_pairs(args.pairs, net)
    pred = Predictor(fit, net)
    pe, pw = pred.existence(src, dst), pred.weight(src, dst)
    ids = net.vertex_ids
    if args.format == "json":
        obj = {"format": PREDICT_FORMAT, "approximate_existence": bool(pred.approximate),
               "predictions": [{"src": ids[s], "dst": ids[d], "existence": float(e), "weight": float(w)}
                               for s, d, e, w in zip(src, dst, pe, pw)]}
        _emit(_dumps(obj), args.output)
    else:
        lines = ["src,dst,existence,weight"]
        lines += [f"{ids[s]},{ids[d]},{float(e)!r},{float(w)!r}" for s, d, e, w in zip(src, dst, pe, pw)]
        _emit("\n".join(lines) + "\n", args.output)
    return 0


def cmd_evaluate(args):
    net = _load_net(args)
    wanted = [t.strip() for t in args.models.split(",") if t.strip()]
    roster = dict(default_roster(args.k, args.weight_dist))
    unknown = [t for t in wanted if t not in roster]
    if unknown or not wanted:
        raise CliError(f"unknown models {unknown}; choose from {sorted(roster)}")
    if args.engine == "bp" and any(t.startswith("DC") for t in wanted):
        raise CliError("degree-corrected models (DCWBM, DCBM) need --engine vb")
    report = run_cv(net, [(t, roster[t]) for t in wanted], args.fraction, args.trials, args.restarts,
                    args.seed, args.threads, _stopping(args), args.engine,
                    None if args.normalize == "none" else args.normalize)
    _emit(report.to_json() if args.format == "json" else report.trials_csv(), args.output)
    if args.records:
        Path(args.records).write_text(report.records_csv())
    return 0


def cmd_nmi(args):
    ids, a = read_labels(args.labels_a)
    ids_b, _ = read_labels(args.labels_b)
    if len(ids) != len(ids_b):
        raise CliError(f"label files differ in length ({len(ids)} vs {len(ids_b)})")
    v = nmi(a, load_labels(args.labels_b, ids))
    text = _dumps({"format": NMI_FORMAT, "nmi": v}) if args.format == "json" else f"{v!r}\n"
    _emit(text, args.output)
    return 0


COMMANDS = {"fit": cmd_fit, "select-k": cmd_select_k, "generate": cmd_generate, "predict": cmd_predict,
            "evaluate": cmd_evaluate, "nmi": cmd_nmi}


def version_text() -> str:
    return (f"wsbm {__version__} (formats: {FIT_FORMAT}, {SELECT_FORMAT}, {EVAL_FORMAT}, "
            f"{PREDICT_FORMAT}, {GENERATE_FORMAT}, {NMI_FORMAT})")


def _write_log(args, argv, status, started, elapsed):
    path = getattr(args, "output", None)
    if not path:
        return
    stamp = datetime.datetime.fromtimestamp(started, datetime.timezone.utc).isoformat()
    entry = {"started": stamp, "elapsed_s": round(elapsed, 3), "argv": list(argv), "status": status,
             "version": __version__}
    with open(str(path) + ".log", "a") as fh:
        fh.write(json.dumps(entry, sort_keys=True) + "\n")


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    started = time.time()
    try:
        args = build_parser().parse_args(argv)
        if args.version:
            print(version_text())
            return 0
        if not args.command:
            raise CliError("a subcommand is required (fit, select-k, generate, predict, evaluate, nmi)")
        status = COMMANDS[args.command](args)
    except (CliError, ValueError, KeyError, OSError) as exc:
        msg = str(exc) if not isinstance(exc, KeyError) else f"unknown key {exc}"
        print(f"error: {' '.join(msg.split())}", file=sys.stderr)
        return 1
    _write_log(args, argv, status, started, time.time() - started)
    return status


if __name__ == "__main__":
    sys.exit(main())
