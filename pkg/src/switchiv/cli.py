"""Command-line interface: validate, analyze, report, simulate, mc.

Exit codes: 0 success, 1 estimation or data error, 2 usage error.  Errors are
printed to stdout as a JSON object ``{"error": {"type": ..., "message": ...}}``
and, when an output directory is known, also written to ``error.json``.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import platform
import sys
from importlib import metadata as importlib_metadata
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import DataError, Dataset, parse_subjects, validate, write_subjects
from .methods import METHODS, MethodResult, UnknownMethodError, estimator, run_method
from .simtrial import MCAbort, SimConfig, SimConfigError, generate, monte_carlo
from .survival import SurvivalCurve, kaplan_meier

EXIT_OK, EXIT_ESTIMATION, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would print usage text and exit 2
        raise UsageError(message)


# -- helpers -------------------------------------------------------------------

def _names(raw: str | None) -> list[str]:
    return [x.strip() for x in raw.split(",") if x.strip()] if raw else []


def _version() -> str:
    try:
        return importlib_metadata.version("switchiv")
    except importlib_metadata.PackageNotFoundError:
        return "unknown"


def _sha256(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def run_metadata(command: str, settings: dict, seed: int | None = None,
                 inputs: Sequence[str | Path] = ()) -> dict:
    """Everything needed to reproduce an output; deliberately free of timestamps."""
    import scipy

    blob = json.dumps(settings, sort_keys=True, default=str).encode()
    return {
        "command": command,
        "package_version": _version(),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "seed": seed,
        "config_hash": hashlib.sha256(blob).hexdigest()[:16],
        "settings": settings,
        "inputs": {str(p): _sha256(p) for p in inputs},
    }


def _dump(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=False, default=_jsonable) + "\n",
                    encoding="utf-8")


def _jsonable(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"not serialisable: {type(x).__name__}")


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load(args) -> Dataset:
    covs = _names(args.covariates)
    d = parse_subjects(args.input, tv_path=args.tv_input)
    missing = [c for c in covs if c not in d.covariate_names]
    if missing:
        raise UsageError(f"covariate(s) not in dataset: {', '.join(missing)}")
    return d


def _request_settings(args, methods: Sequence[str]) -> dict:
    return {"methods": list(methods), "covariates": _names(args.covariates),
            "tv_covariates": _names(args.tv_covariates), "alpha": args.alpha, "tau": args.tau,
            "truncate": args.truncate}


def _check_methods(methods: Sequence[str]) -> None:
    bad = [m for m in methods if m not in METHODS]
    if bad:
        raise UsageError(f"unknown method(s) {', '.join(bad)}; choose from {', '.join(METHODS)}")
    if not methods:
        raise UsageError("at least one method is required")


def _run(args, d: Dataset, method: str, with_ci: bool = True) -> MethodResult:
    return run_method(method, d, _names(args.covariates), _names(args.tv_covariates) or None,
                      alpha=args.alpha, tau=args.tau, with_ci=with_ci, truncate=args.truncate)


# -- curves and plots ----------------------------------------------------------

def write_curves(d: Dataset, result: MethodResult, out: Path,
                 covariates: Sequence[str] = ()) -> dict[str, Path]:
    """Kaplan-Meier curves per arm, plus the counterfactual control curve for iv-onestep."""
    from .ivest import counterfactual_control_curve, fit_hazard_model

    paths = {}
    for label, arm in (("experimental", 0), ("control", 1)):
        if np.any(d.arm == arm):
            p = out / f"km_{label}.csv"
            kaplan_meier(d, group=d.arm == arm, bands=True).to_csv(p)
            paths[label] = p
    if result.method == "iv-onestep":
        hazard = fit_hazard_model(d, list(covariates))
        curve = counterfactual_control_curve(d, result.beta, hazard, result.ci)
        p = out / "counterfactual_control.csv"
        curve.to_csv(p)
        paths["counterfactual"] = p
    return paths


def render_svg(curves: dict[str, Path], path: Path, title: str) -> None:
    """Draw already-computed curve CSVs; no statistics happen here."""
    import matplotlib

    matplotlib.use("Agg")
    matplotlib.rcParams["svg.hashsalt"] = "switchiv"
    import matplotlib.pyplot as plt

    from .survival import read_curve_csv

    styles = {"experimental": ("tab:blue", "-"), "control": ("tab:orange", "-"),
              "counterfactual": ("tab:green", "--")}
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, p in curves.items():
        c: SurvivalCurve = read_curve_csv(p)
        color, ls = styles.get(label, ("black", "-"))
        ax.step(c.times, c.probs, where="post", color=color, linestyle=ls, label=label)
        if c.lower is not None:
            ax.fill_between(c.times, c.lower, c.upper, step="post", color=color, alpha=0.15,
                            linewidth=0)
    ax.set_xlabel("time")
    ax.set_ylabel("survival")
    ax.set_ylim(0, 1.02)
    ax.set_title(title)
    ax.legend(loc="lower left")
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


# -- report rendering ------------------------------------------------------------

REPORT_COLUMNS = ("method", "status", "beta", "se", "rr", "rr_lower", "rr_upper", "p", "tau",
                  "message")


def report_row(method: str, res: MethodResult | None, error: Exception | None) -> dict:
    if res is None:
        return {"method": method, "status": "failed", "beta": None, "se": None, "rr": None,
                "rr_lower": None, "rr_upper": None, "p": None, "tau": None,
                "message": f"{type(error).__name__}: {error}"}
    rr_ci = res.rr_ci or (None, None)
    return {"method": method, "status": "ok", "beta": res.beta, "se": res.se, "rr": res.rr,
            "rr_lower": rr_ci[0], "rr_upper": rr_ci[1], "p": res.p, "tau": res.tau,
            "message": ""}


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_report_csv(rows: list[dict], path: Path) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for r in rows:
            w.writerow([_cell(r[c]) for c in REPORT_COLUMNS])


def format_report(rows: list[dict]) -> str:
    """Aligned text table: estimate (SE), relative risk, 95% CI, p-value."""
    head = ("Method", "Estimate (SE)", "Relative risk", "95% CI", "p-value")
    body = []
    for r in rows:
        if r["status"] != "ok":
            body.append((r["method"], "FAILED", "", "", r["message"]))
            continue
        ci = ("" if r["rr_lower"] is None or not np.isfinite(r["rr_lower"])
              else f"({r['rr_lower']:.2f}, {r['rr_upper']:.2f})")
        body.append((r["method"], f"{r['beta']:.3e} ({r['se']:.3e})", f"{r['rr']:.2f}", ci,
                     f"{r['p']:.3g}"))
    widths = [max(len(row[i]) for row in [head, *body]) for i in range(len(head))]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip()
             for row in [head, *body]]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def _safe_run(args, d: Dataset, method: str):
    try:
        return method, _run(args, d, method), None
    except Exception as exc:  # failed rows are marked, the report continues
        return method, None, exc


# -- subcommands -----------------------------------------------------------------

def cmd_validate(args) -> int:
    try:
        d = parse_subjects(args.input, tv_path=args.tv_input)
    except DataError as exc:
        print(json.dumps({"ok": False, "violations": str(exc).split("\n")}, indent=2))
        return EXIT_ESTIMATION
    rep = validate(d)
    print(json.dumps({"ok": rep.ok, "violations": list(rep.violations), "n": len(d),
                      "n_events": int(d.event.sum()),
                      "n_switched": int(np.isfinite(d.switch).sum()),
                      "covariates": list(d.covariate_names)}, indent=2))
    return EXIT_OK if rep.ok else EXIT_ESTIMATION


def cmd_analyze(args) -> int:
    _check_methods([args.method])
    d = _load(args)
    out = _out_dir(args)
    res = _run(args, d, args.method)
    settings = _request_settings(args, [args.method])
    result = {"result": res.to_json(),
              "metadata": run_metadata("analyze", settings, args.seed,
                                       [p for p in (args.input, args.tv_input) if p])}
    _dump(result, out / "result.json")
    if "_weights" in res.extras:
        res.extras["_weights"].to_csv(out / "weights.csv")
    curves = write_curves(d, res, out, _names(args.covariates))
    if args.svg:
        render_svg(curves, out / "curves.svg", args.method)
    print(json.dumps(res.to_json(), default=_jsonable))
    return EXIT_OK


def cmd_report(args) -> int:
    methods = _names(args.method) if args.method else list(METHODS)
    _check_methods(methods)
    d = _load(args)
    out = _out_dir(args)
    if args.jobs == 1:
        outcomes = [_safe_run(args, d, m) for m in methods]
    else:
        from joblib import Parallel, delayed
        outcomes = Parallel(n_jobs=args.jobs)(delayed(_safe_run)(args, d, m) for m in methods)
    rows = [report_row(m, r, e) for m, r, e in outcomes]
    write_report_csv(rows, out / "report.csv")
    text = format_report(rows)
    (out / "report.txt").write_text(text, encoding="utf-8")
    _dump({"rows": rows,
           "metadata": run_metadata("report", _request_settings(args, methods), args.seed,
                                    [p for p in (args.input, args.tv_input) if p])},
          out / "report.json")
    sys.stdout.write(text)
    return EXIT_OK


def _config(args) -> SimConfig:
    cfg = SimConfig.load(args.config) if args.config else SimConfig()
    if args.seed is not None:
        cfg = SimConfig.from_dict({**cfg.to_dict(), "seed": args.seed})
    return cfg


def cmd_simulate(args) -> int:
    cfg = _config(args)
    out = _out_dir(args)
    trial = generate(cfg)
    write_subjects(trial.dataset, out / "subjects.csv")
    trial.export_truth(out / "truth.csv")
    _dump({"config": cfg.to_dict(),
           "metadata": run_metadata("simulate", cfg.to_dict(), cfg.seed)}, out / "metadata.json")
    print(json.dumps({"n": len(trial.dataset), "seed": cfg.seed, "config_hash": cfg.digest(),
                      "out": str(out)}))
    return EXIT_OK


def cmd_mc(args) -> int:
    cfg = _config(args)
    methods = _names(args.method) if args.method else ["treatment-policy", "iv-onestep"]
    _check_methods(methods)
    out = _out_dir(args)
    ests = {m: estimator(m, _names(args.covariates), alpha=args.alpha,
                         with_ci=not args.no_ci, truncate=args.truncate) for m in methods}
    summaries = monte_carlo(cfg, ests, args.reps, alpha=args.alpha, n_jobs=args.jobs)
    rows = [summaries[m].row() for m in methods]
    cols = list(rows[0])
    with (out / "mc_summary.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([_cell(r[c]) for c in cols])
    settings = {"config": cfg.to_dict(), "methods": methods, "reps": args.reps,
                "alpha": args.alpha, "covariates": _names(args.covariates),
                "with_ci": not args.no_ci}
    _dump({"summary": rows, "metadata": run_metadata("mc", settings, cfg.seed)},
          out / "mc_summary.json")
    print(json.dumps(rows, default=_jsonable))
    return EXIT_OK


# -- parser ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="switchiv", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def data_flags(sp, method_help):
        sp.add_argument("--input", required=True, help="subjects CSV")
        sp.add_argument("--tv-input", help="time-varying covariate CSV")
        sp.add_argument("--method", help=method_help)
        sp.add_argument("--covariates", help="comma-separated baseline covariates")
        sp.add_argument("--tv-covariates", help="comma-separated time-varying covariates")
        sp.add_argument("--alpha", type=float, default=0.05)
        sp.add_argument("--tau", type=float, help="risk-ratio horizon (default: max follow-up)")
        sp.add_argument("--truncate", type=float, help="cap for IPC weights")
        sp.add_argument("--seed", type=int, help="recorded in metadata")
        sp.add_argument("--out", default=".", help="output directory")

    v = sub.add_parser("validate", help="check a dataset")
    v.add_argument("--input", required=True)
    v.add_argument("--tv-input")
    v.set_defaults(func=cmd_validate)

    a = sub.add_parser("analyze", help="fit one method")
    data_flags(a, "one of: " + ", ".join(METHODS))
    a.add_argument("--svg", action="store_true", help="also draw curves.svg")
    a.set_defaults(func=cmd_analyze)

    r = sub.add_parser("report", help="fit several methods into one table")
    data_flags(r, "comma-separated methods (default: all)")
    r.add_argument("--jobs", type=int, default=1)
    r.set_defaults(func=cmd_report)

    s = sub.add_parser("simulate", help="generate one trial")
    s.add_argument("--config", help="TOML or JSON simulation config")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", default=".")
    s.set_defaults(func=cmd_simulate)

    m = sub.add_parser("mc", help="Monte-Carlo study")
    m.add_argument("--config")
    m.add_argument("--seed", type=int)
    m.add_argument("--method", help="comma-separated methods")
    m.add_argument("--covariates")
    m.add_argument("--reps", type=int, default=200)
    m.add_argument("--jobs", type=int, default=1)
    m.add_argument("--alpha", type=float, default=0.05)
    m.add_argument("--truncate", type=float)
    m.add_argument("--no-ci", action="store_true", help="skip CI inversion (faster)")
    m.add_argument("--out", default=".")
    m.set_defaults(func=cmd_mc)
    return p


def _error(exc: BaseException, out: str | None) -> None:
    payload = {"error": {"type": type(exc).__name__, "message": str(exc)}}
    print(json.dumps(payload))
    if out:
        try:
            Path(out).mkdir(parents=True, exist_ok=True)
            _dump(payload, Path(out) / "error.json")
        except OSError:
            pass


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    out = None
    try:
        args = parser.parse_args(argv)
        out = getattr(args, "out", None)
        if args.command is None:
            raise UsageError("a subcommand is required: validate, analyze, report, simulate, mc")
        if getattr(args, "alpha", 0.05) is not None and not 0 < getattr(args, "alpha", 0.05) < 1:
            raise UsageError("alpha must lie in (0, 1)")
        return args.func(args)
    except (UsageError, UnknownMethodError, SimConfigError, FileNotFoundError) as exc:
        _error(exc, out)
        return EXIT_USAGE
    except (DataError, MCAbort, ArithmeticError, RuntimeError, ValueError, KeyError) as exc:
        _error(exc, out)
        return EXIT_ESTIMATION


if __name__ == "__main__":
    sys.exit(main())
