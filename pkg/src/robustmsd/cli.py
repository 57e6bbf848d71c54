"""Batch command line: solve, compare, sweep, estimate-kl, model-risk.

Every run writes CSV tables plus ``manifest.json`` into ``--out``. The
manifest holds the fully resolved configuration and can be passed back
through ``--config`` to reproduce the run byte for byte.
"""

from __future__ import annotations

import argparse
import csv
import datetime as dt
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .core import NominalModel, PortfolioSpec, RiskProfile
from .divergence import KnnConfig
from .errors import DataError, RobustMSDError
from .experiments import (
    REFERENCE_HORIZON,
    REFERENCE_KAPPA,
    REFERENCE_MU,
    REFERENCE_PENALTIES,
    REFERENCE_SIGMA,
    STUDY_BETAS,
    STUDY_ETAS,
    ScenarioSpec,
    beta_for_eta,
    run_study,
    solver_samples,
)
from .modelrisk import estimate_divergence_repeated, run_model_risk
from .numerics import sample_mean_cov
from .solver import HorizonSolution, solve_horizon

log = logging.getLogger("robustmsd")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_ABANDON = 2

COMMANDS = ("solve", "compare", "sweep", "estimate-kl", "model-risk")

DEFAULTS = {
    "kappa": REFERENCE_KAPPA,
    "horizon": REFERENCE_HORIZON,
    "penalties": None,
    "eta": None,
    "beta": None,
    "scenario": "gaussian",
    "w0": 1.0,
    "mc_samples": 200_000,
    "paths": 100_000,
    "repeats": 1000,
    "k": 5,
    "boot": 20_000,
    "holdout": 60,
    "q": 0.95,
    "seed": None,
    "prices": None,
    "mu": None,
    "sigma": None,
}

# kept out of the manifest: they never change the numbers
RUNTIME_ONLY = ("out", "threads")

WEALTH_FMT = "{:.6f}"
PCT_FMT = "{:.4f}"
NUM_FMT = "{:.12g}"


# -- ingestion ---------------------------------------------------------------


def ingest_prices(csv_path) -> tuple[list[str], np.ndarray]:
    """Read ``date,asset1,...`` prices and return (asset names, net returns).

    Dates must be ISO formatted and strictly increasing; prices positive.
    """
    path = Path(csv_path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if len(header) < 3:
        raise DataError(f"{path}: need a date column and at least two assets")
    body = [r for r in rows[1:] if any(c.strip() for c in r)]
    if len(body) < 2:
        raise DataError(f"{path}: need at least two price rows")
    prices = np.empty((len(body), len(header) - 1))
    prev = None
    for i, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise DataError(f"{path}: row {i} has {len(row)} fields, expected {len(header)}")
        try:
            day = dt.date.fromisoformat(row[0].strip())
        except ValueError as exc:
            raise DataError(f"{path}: row {i} has a malformed date {row[0]!r}") from exc
        if prev is not None and day <= prev:
            kind = "duplicate" if day == prev else "out-of-order"
            raise DataError(f"{path}: row {i} has a {kind} date {day}")
        prev = day
        for j, cell in enumerate(row[1:], start=1):
            cell = cell.strip()
            if not cell:
                raise DataError(f"{path}: missing value at row {i}, column {header[j]!r}")
            try:
                val = float(cell)
            except ValueError as exc:
                raise DataError(f"{path}: non-numeric value {cell!r} at row {i}, column {header[j]!r}") from exc
            if not (math.isfinite(val) and val > 0):
                raise DataError(f"{path}: non-positive price at row {i}, column {header[j]!r}")
            prices[i - 2, j - 1] = val
    return header[1:], prices[1:] / prices[:-1] - 1.0


# -- csv output --------------------------------------------------------------


def write_csv(path: Path, columns, rows) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        w.writerows(rows)


def read_table(path) -> list[dict]:
    """Parse a CSV written by this tool; numeric cells come back as floats."""
    out = []
    with Path(path).open(newline="") as fh:
        for row in csv.DictReader(fh):
            rec = {}
            for key, val in row.items():
                try:
                    rec[key] = float(val)
                except ValueError:
                    rec[key] = val
            out.append(rec)
    return out


def _num(x) -> str:
    return NUM_FMT.format(float(x))


def _solution_rows(sol: HorizonSolution, d: int):
    cols = ["period"] + [f"u{i + 1}" for i in range(d)] + ["theta", "G", "S", "kl_achieved", "p_positive"]
    rows = []
    for n, p in enumerate(sol.periods):
        rows.append([n] + [_num(x) for x in p.u] + [_num(p.theta), _num(p.G), _num(p.S), _num(p.kl_achieved),
                                                   PCT_FMT.format(sol.positivity_probs[n])])
    return cols, rows


def write_solution(path: Path, sol: HorizonSolution, d: int) -> None:
    cols, rows = _solution_rows(sol, d)
    write_csv(path, cols, rows)


def read_solution(path) -> np.ndarray:
    """Weights matrix from a solution CSV."""
    rows = read_table(path)
    keys = sorted((k for k in rows[0] if k.startswith("u") and k[1:].isdigit()), key=lambda k: int(k[1:]))
    return np.array([[r[k] for k in keys] for r in rows])


STUDY_COLUMNS = [
    "eta", "gamma", "beta", "outperform_count", "outperform_pct",
    "mean_wealth_robust", "mean_wealth_nonrobust", "mean_wealth_diff",
    "ratio_robust", "ratio_nonrobust", "ratio_diff", "path_count",
]


def _study_table(rows, d: int):
    cols = list(STUDY_COLUMNS) + [f"xi{i + 1}" for i in range(d)]
    out = []
    for r in rows:
        sc, rep = r.scenario, r.report
        xi = sc.xi_bar if sc.xi_bar is not None else np.full(d, math.nan)
        out.append([
            _num(sc.eta),
            "" if sc.gamma is None else _num(sc.gamma),
            "" if sc.beta is None else _num(sc.beta),
            rep.outperform_count,
            PCT_FMT.format(rep.outperform_pct),
            WEALTH_FMT.format(rep.mean_wealth_robust),
            WEALTH_FMT.format(rep.mean_wealth_nonrobust),
            WEALTH_FMT.format(rep.mean_difference),
            WEALTH_FMT.format(rep.ratio_robust),
            WEALTH_FMT.format(rep.ratio_nonrobust),
            WEALTH_FMT.format(rep.ratio_difference),
            rep.path_count,
        ] + ["" if math.isnan(x) else _num(x) for x in xi])
    return cols, out


# -- configuration -----------------------------------------------------------


def _float_list(text):
    if text is None:
        return None
    if isinstance(text, (list, tuple)):
        return [float(x) for x in text]
    if isinstance(text, (int, float)):
        return [float(text)]
    return [float(x) for x in str(text).split(",") if x.strip()]


def load_config(path) -> dict:
    """Read a JSON config; a manifest written by a previous run is accepted too."""
    with Path(path).open() as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise DataError(f"{path}: config must be a JSON object")
    if "config" in data and isinstance(data["config"], dict):
        cfg = dict(data["config"])
        if "command" in data:
            cfg.setdefault("command", data["command"])
        return cfg
    return data


def resolve_config(args: argparse.Namespace) -> dict:
    """Defaults, then the JSON config, then the environment seed, then flags."""
    cfg = dict(DEFAULTS)
    file_cfg = load_config(args.config) if args.config else {}
    unknown = set(file_cfg) - set(DEFAULTS) - {"command"}
    if unknown:
        raise DataError(f"unknown config keys: {sorted(unknown)}")
    cfg.update({k: v for k, v in file_cfg.items() if k != "command"})
    if cfg["seed"] is None and os.environ.get("ROBUSTMSD_SEED"):
        cfg["seed"] = int(os.environ["ROBUSTMSD_SEED"])
    for key in DEFAULTS:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    if cfg["seed"] is None:
        cfg["seed"] = 0
    cfg["seed"] = int(cfg["seed"])
    for key in ("eta", "beta", "penalties"):
        cfg[key] = _float_list(cfg[key])
    for key in ("horizon", "mc_samples", "paths", "repeats", "k", "boot", "holdout"):
        cfg[key] = int(cfg[key])
        if cfg[key] < 1:
            raise DataError(f"{key} must be at least 1")
    for key in ("kappa", "w0", "q"):
        cfg[key] = float(cfg[key])
    if cfg["penalties"] is None:
        n = cfg["horizon"]
        cfg["penalties"] = list(REFERENCE_PENALTIES) if n == REFERENCE_HORIZON else [0.0] * (n - 1)
    if cfg["scenario"] not in ("gaussian", "skew"):
        raise DataError(f"scenario must be gaussian or skew, got {cfg['scenario']!r}")
    if cfg["prices"] is not None and not Path(cfg["prices"]).is_file():
        raise DataError(f"price file {cfg['prices']} does not exist")
    return cfg


def _model_from(cfg) -> NominalModel:
    if cfg["prices"]:
        _, rets = ingest_prices(cfg["prices"])
        fit = rets[: -cfg["holdout"]] if cfg["holdout"] < rets.shape[0] - 1 else rets
        mu, sigma = sample_mean_cov(fit)
        return NominalModel(mu, sigma)
    if cfg["mu"] is not None:
        return NominalModel(np.asarray(cfg["mu"], dtype=float), np.asarray(cfg["sigma"], dtype=float))
    return NominalModel(REFERENCE_MU, REFERENCE_SIGMA)


def _split(cfg):
    if not cfg["prices"]:
        raise DataError("this command needs --prices")
    _, rets = ingest_prices(cfg["prices"])
    h = cfg["holdout"]
    if h >= rets.shape[0] - 1:
        raise DataError(f"holdout {h} leaves fewer than two rows to fit on")
    return rets[:-h], rets[-h:]


def _single_eta(cfg) -> float:
    etas = cfg["eta"] or [STUDY_ETAS[-1]]
    if len(etas) != 1:
        raise DataError("this command takes a single --eta")
    return etas[0]


# -- commands ----------------------------------------------------------------


def cmd_solve(cfg, out: Path, threads: int) -> int:
    model = _model_from(cfg)
    n = cfg["horizon"]
    spec = PortfolioSpec(model.d, n, cfg["w0"])
    samples = solver_samples(model, n, cfg["mc_samples"], cfg["seed"])
    eta = _single_eta(cfg)
    robust = solve_horizon(spec, model, RiskProfile.constant(n, cfg["kappa"], eta, cfg["penalties"]), samples, "robust")
    nonrobust = solve_horizon(spec, model, RiskProfile.constant(n, cfg["kappa"], 0.0, cfg["penalties"]), samples, "nonrobust")
    write_solution(out / "solution_robust.csv", robust, model.d)
    write_solution(out / "solution_nonrobust.csv", nonrobust, model.d)
    write_csv(out / "summary.csv", ["strategy", "value_at_w0", "accepted"], [
        ["robust", _num(robust.value_at_w0), int(robust.accepted)],
        ["nonrobust", _num(nonrobust.value_at_w0), int(nonrobust.accepted)],
    ])
    if not robust.accepted:
        log.warning("positivity gate failed: abandon the investment")
        return EXIT_ABANDON
    return EXIT_OK


def _scenarios(cfg, model, sweep: bool):
    if cfg["scenario"] == "gaussian":
        etas = cfg["eta"] or (list(STUDY_ETAS) if sweep else [STUDY_ETAS[-1]])
        return [ScenarioSpec.gaussian(model, e) for e in etas]
    betas = cfg["beta"]
    if betas is None:
        if cfg["eta"]:
            betas = [beta_for_eta(model.mu, model.sigma, e, seed=cfg["seed"]) for e in cfg["eta"]]
        else:
            betas = list(STUDY_BETAS) if sweep else [STUDY_BETAS[-1]]
    return [ScenarioSpec.skew(model, b, seed=cfg["seed"]) for b in betas]


def _run_study(cfg, out: Path, threads: int, sweep: bool) -> int:
    model = _model_from(cfg)
    scenarios = _scenarios(cfg, model, sweep)
    if not sweep and len(scenarios) != 1:
        raise DataError("compare takes a single scenario; use sweep for several")
    rows = run_study(scenarios, model, kappa=cfg["kappa"], horizon=cfg["horizon"], penalties=cfg["penalties"],
                     mc_samples=cfg["mc_samples"], path_count=cfg["paths"], seed=cfg["seed"],
                     threads=threads, w0=cfg["w0"])
    cols, table = _study_table(rows, model.d)
    write_csv(out / "table.csv", cols, table)
    if sweep:
        write_csv(out / "series_outperform.csv", ["eta", "outperform_pct"],
                  [[_num(r.scenario.eta), PCT_FMT.format(r.report.outperform_pct)] for r in rows])
        write_csv(out / "series_mean_wealth.csv", ["eta", "mean_wealth_robust", "mean_wealth_nonrobust"],
                  [[_num(r.scenario.eta), WEALTH_FMT.format(r.report.mean_wealth_robust),
                    WEALTH_FMT.format(r.report.mean_wealth_nonrobust)] for r in rows])
        write_csv(out / "series_ratio.csv", ["eta", "ratio_robust", "ratio_nonrobust"],
                  [[_num(r.scenario.eta), WEALTH_FMT.format(r.report.ratio_robust),
                    WEALTH_FMT.format(r.report.ratio_nonrobust)] for r in rows])
    return EXIT_OK


def cmd_compare(cfg, out: Path, threads: int) -> int:
    return _run_study(cfg, out, threads, sweep=False)


def cmd_sweep(cfg, out: Path, threads: int) -> int:
    return _run_study(cfg, out, threads, sweep=True)


def cmd_estimate_kl(cfg, out: Path, threads: int) -> int:
    ds1, ds2 = _split(cfg)
    stats = sample_mean_cov(ds1)
    knn = KnnConfig(k=cfg["k"], repeats=cfg["repeats"])
    mean, est = estimate_divergence_repeated(stats, ds2, knn, cfg["seed"], threads, return_all=True)
    write_csv(out / "kl_estimates.csv", ["repeat", "estimate", "kept"],
              [[i, _num(e), int(e > 0)] for i, e in enumerate(est)])
    write_csv(out / "kl_summary.csv", ["estimated_eta", "kept", "repeats"],
              [[_num(mean), int(np.count_nonzero(est > 0)), est.size]])
    return EXIT_OK


def _histogram_rows(diffs, bins: int = 50):
    counts, edges = np.histogram(diffs, bins=bins)
    return [[_num(edges[i]), _num(edges[i + 1]), int(c)] for i, c in enumerate(counts)]


def cmd_model_risk(cfg, out: Path, threads: int) -> int:
    ds1, ds2 = _split(cfg)
    knn = KnnConfig(k=cfg["k"], repeats=cfg["repeats"])
    res = run_model_risk(ds1, ds2, kappa=cfg["kappa"], horizon=cfg["horizon"], penalties=cfg["penalties"],
                         mc_samples=cfg["mc_samples"], cfg=knn, boot_count=cfg["boot"], q=cfg["q"],
                         seed=cfg["seed"], threads=threads, w0=cfg["w0"])
    d = ds1.shape[1]
    write_solution(out / "solution_robust.csv", res.robust, d)
    write_solution(out / "solution_nonrobust.csv", res.nonrobust, d)
    write_csv(out / "model_risk.csv", ["estimated_eta", "confidence", "model_risk", "accepted"],
              [[_num(res.estimated_eta), PCT_FMT.format(res.confidence), WEALTH_FMT.format(res.model_risk),
                int(res.robust.accepted)]])
    write_csv(out / "diff_histogram.csv", ["bin_left", "bin_right", "count"], _histogram_rows(res.diff_sample))
    if not res.robust.accepted:
        log.warning("positivity gate failed: abandon the investment")
        return EXIT_ABANDON
    return EXIT_OK


HANDLERS = {
    "solve": cmd_solve,
    "compare": cmd_compare,
    "sweep": cmd_sweep,
    "estimate-kl": cmd_estimate_kl,
    "model-risk": cmd_model_risk,
}


# -- entry point -------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="robustmsd", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config or a previous run's manifest")
        p.add_argument("--prices", help="CSV of prices: date,asset1,asset2,...")
        p.add_argument("--eta", help="KL radius, or comma list for sweep")
        p.add_argument("--beta", help="skew scenario mean shift in percent (comma list)")
        p.add_argument("--scenario", choices=("gaussian", "skew"))
        p.add_argument("--kappa", type=float)
        p.add_argument("--penalties", help="comma list of N-1 discount penalties")
        p.add_argument("--horizon", type=int)
        p.add_argument("--w0", type=float)
        p.add_argument("--mc-samples", dest="mc_samples", type=int)
        p.add_argument("--paths", type=int)
        p.add_argument("--repeats", type=int)
        p.add_argument("--k", type=int, help="nearest-neighbour rank")
        p.add_argument("--boot", type=int, help="bootstrap path count")
        p.add_argument("--holdout", type=int, help="trailing return rows used as the alternative sample")
        p.add_argument("--q", type=float, help="confidence level")
        p.add_argument("--seed", type=int)
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--out", default="robustmsd-out")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def _manifest(command: str, cfg: dict) -> dict:
    return {"command": command, "version": __version__, "config": {k: cfg[k] for k in sorted(cfg)}}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.threads < 1:
        args.threads = 1
    try:
        cfg = resolve_config(args)
        with (out / "manifest.json").open("w") as fh:
            json.dump(_manifest(args.command, cfg), fh, indent=2, sort_keys=True)
            fh.write("\n")
        return HANDLERS[args.command](cfg, out, args.threads)
    except (RobustMSDError, OSError, ValueError, json.JSONDecodeError) as exc:
        record = exc.to_record() if isinstance(exc, RobustMSDError) else {
            "error": type(exc).__name__, "message": str(exc), "period": None}
        with (out / "error.json").open("w") as fh:
            json.dump(record, fh, indent=2, sort_keys=True)
            fh.write("\n")
        print(f"robustmsd: {record['error']}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
