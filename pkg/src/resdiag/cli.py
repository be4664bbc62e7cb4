"""``resdiag`` command line: simulate, build datasets, train and evaluate."""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import diagnostics as dx
from .dataset import build_balanced_dataset, default_workers, read_manifest, write_manifest
from .dgp import DISTRIBUTIONS, DgpSpec, simulate_dgp
from .distance import DEFAULT_MC_SETS
from .errors import BucketTimeout, ChecksumFailure, MalformedHeader, RankDeficient, ShapeMismatch, VersionMismatch
from .network import PRESETS, DistanceEstimator, train
from .raster import contact_sheet, rasterize, write_pgm
from .regression import RegressionData, fit_ols

log = logging.getLogger("resdiag")

EXIT_OK = 0
EXIT_ARGS = 2
EXIT_TIMEOUT = 3
EXIT_MANIFEST = 4
EXIT_CSV = 5
EXIT_WEIGHTS = 6

SHEET_ROWS, SHEET_COLS = 4, 5
DESK_MAX_EPOCHS = 100
FULL_MAX_EPOCHS = 2000


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


# -- CSV input ------------------------------------------------------------------

def _read_text(path: str) -> str:
    try:
        return Path(path).read_bytes().decode("utf-8-sig")
    except (OSError, UnicodeDecodeError) as exc:
        raise CliError(EXIT_CSV, f"cannot read {path}: {exc}") from exc


def _numeric_rows(rows, width: int, path: str) -> np.ndarray:
    out = []
    for lineno, row in enumerate(rows, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != width:
            raise CliError(EXIT_CSV, f"{path}:{lineno}: expected {width} fields, got {len(row)}")
        try:
            vals = [float(c) for c in row]
        except ValueError as exc:
            raise CliError(EXIT_CSV, f"{path}:{lineno}: {exc}") from exc
        if not all(math.isfinite(v) for v in vals):
            raise CliError(EXIT_CSV, f"{path}:{lineno}: non-finite value")
        out.append(vals)
    if not out:
        raise CliError(EXIT_CSV, f"{path}: no data rows")
    return np.array(out)


def read_residual_csv(path: str) -> tuple[np.ndarray, np.ndarray]:
    """Parse a ``fitted,residual`` CSV (LF or CRLF)."""
    rows = list(csv.reader(io.StringIO(_read_text(path), newline="")))
    if not rows or [c.strip() for c in rows[0]] != ["fitted", "residual"]:
        raise CliError(EXIT_CSV, f"{path}: header must be exactly 'fitted,residual'")
    data = _numeric_rows(rows[1:], 2, path)
    if data.shape[0] < 3:
        raise CliError(EXIT_CSV, f"{path}: need at least 3 observations")
    return data[:, 0], data[:, 1]


def _is_number(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


def read_design_csv(path: str) -> np.ndarray:
    """Design matrix CSV with a header row naming the columns."""
    rows = list(csv.reader(io.StringIO(_read_text(path), newline="")))
    if not rows:
        raise CliError(EXIT_CSV, f"{path}: empty design file")
    header = rows[0]
    if all(_is_number(c) for c in header):
        raise CliError(EXIT_CSV, f"{path}: design CSV needs a header row of column names")
    return _numeric_rows(rows[1:], len(header), path)


def write_residual_csv(path: Path, fitted, residuals) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["fitted", "residual"])
        for f, e in zip(fitted, residuals):
            w.writerow([repr(float(f)), repr(float(e))])


def write_design_csv(path: Path, X: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x{i}" for i in range(X.shape[1])])
        for row in X:
            w.writerow([repr(float(v)) for v in row])


# -- commands -------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    try:
        spec = DgpSpec(
            j=args.j, a=args.a, b=args.b, beta1=args.beta1, beta2=args.beta2,
            dist_e=args.dist_e, dist_x1=args.dist_x1, dist_x2=args.dist_x2,
            sigma_e=args.sigma_e, sigma_x1=args.sigma_x1, sigma_x2=args.sigma_x2, n=args.n,
        )
    except ValueError as exc:
        raise CliError(EXIT_ARGS, str(exc)) from exc
    rng = np.random.default_rng(args.seed)
    scen = simulate_dgp(spec, rng, label_m=args.mc_sets, label_rng=np.random.default_rng([args.seed, 1]))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_residual_csv(out / "residuals.csv", scen.fitted, scen.residuals)
    write_design_csv(out / "design.csv", scen.X)
    (out / "plot.pgm").write_bytes(write_pgm(rasterize(scen.residuals, scen.fitted)))
    print(json.dumps({"spec": spec.as_dict(), "d": scen.label_d.d, "method": scen.label_d.method,
                      "residuals": str(out / "residuals.csv"), "design": str(out / "design.csv")}, indent=2))
    return EXIT_OK


def cmd_dataset(args) -> int:
    if args.count < 50 or args.count % 50:
        raise CliError(EXIT_ARGS, f"--count must be a positive multiple of 50, got {args.count}")
    try:
        examples = build_balanced_dataset(
            args.count, m=args.mc_sets, seed=args.seed, max_proposals=args.max_proposals,
            workers=default_workers(args.threads),
        )
    except BucketTimeout as exc:
        raise CliError(EXIT_TIMEOUT, str(exc)) from exc
    path = write_manifest(examples, args.out)
    print(json.dumps({"manifest": str(path), "examples": len(examples)}))
    return EXIT_OK


def cmd_train(args) -> int:
    manifest = Path(args.manifest) if args.manifest else Path(args.data) / "manifest.csv"
    try:
        examples = read_manifest(manifest)
    except (OSError, ValueError, KeyError, MalformedHeader) as exc:
        raise CliError(EXIT_MANIFEST, f"cannot read manifest {manifest}: {exc}") from exc
    config = PRESETS[args.preset]
    max_epochs = args.max_epochs or (DESK_MAX_EPOCHS if args.preset == "desk" else FULL_MAX_EPOCHS)
    params, hist = train(examples, config, split_seed=args.seed, rng=np.random.default_rng(args.seed),
                         patience=args.patience, max_epochs=max_epochs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    estimator = DistanceEstimator(params, config)
    estimator.save(out / "weights.rdgv")
    with open(out / "history.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_rmse", "val_rmse"])
        for row in hist.rows():
            w.writerow([row[0], repr(row[1]), repr(row[2])])
    print(json.dumps({"weights": str(out / "weights.rdgv"), "history": str(out / "history.csv"),
                      "epochs": len(hist.val_rmse), "best_epoch": hist.best_epoch + 1,
                      "best_val_rmse": hist.best_val_rmse, "stop_reason": hist.stop_reason}))
    return EXIT_OK


def _load_estimator(path: str) -> DistanceEstimator:
    try:
        return DistanceEstimator.load(path)
    except (OSError, VersionMismatch, ChecksumFailure, ShapeMismatch) as exc:
        raise CliError(EXIT_WEIGHTS, f"cannot load weights {path}: {exc}") from exc


def cmd_evaluate(args) -> int:
    fitted, residuals = read_residual_csv(args.input)
    n = fitted.size
    if args.design:
        X = read_design_csv(args.design)
        if X.shape[0] != n:
            raise CliError(EXIT_CSV, f"design has {X.shape[0]} rows, residual file has {n}")
        design_kind = "supplied"
    else:
        X = np.column_stack([np.ones(n), fitted])
        design_kind = "fallback"
    if args.nulls < 1:
        raise CliError(EXIT_ARGS, "--nulls must be >= 1")
    estimator = _load_estimator(args.weights)
    try:
        data = RegressionData(X, fitted + residuals)
        model = fit_ols(data)
    except (RankDeficient, ValueError) as exc:
        raise CliError(EXIT_CSV, f"cannot refit the model from the inputs: {exc}") from exc

    rng = np.random.default_rng(args.seed)
    nulls = dx.null_residual_sets(model, args.nulls, rng)
    scores = dx.score_plots(estimator, [residuals] + nulls, [fitted] * (args.nulls + 1))
    lineup = dx.lineup_test(scores[0], scores[1:])
    mres = dx.mvi(lineup.d_hat_true, n)
    boot = None
    if args.bootstrap:
        boot = dx.bootstrap_assess(data, estimator, args.bootstrap, lineup.q95_null, rng)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    side = estimator.config.input_side
    att = estimator.attention(residuals, fitted)
    (out / "attention.pgm").write_bytes(write_pgm(1.0 - att))
    cells = SHEET_ROWS * SHEET_COLS
    shown = [residuals] + nulls[: cells - 1]
    position = int(rng.integers(0, len(shown)))
    order = list(range(1, len(shown)))
    order.insert(position, 0)
    tiles = [rasterize(shown[i], fitted, side, side).pixels for i in order]
    (out / "lineup.pgm").write_bytes(write_pgm(contact_sheet(tiles, SHEET_ROWS, SHEET_COLS)))

    report = {
        "d_hat": lineup.d_hat_true,
        "p_value": lineup.p_value,
        "q95_null": lineup.q95_null,
        "mvi": mres.mvi,
        "category": mres.category,
        "bootstrap_rejection_ratio": None if boot is None else boot.rejection_ratio,
        "delta_adjusted": dx.delta_adjusted(lineup.d_hat_true, lineup.d_hat_nulls),
        "reject_at_95": lineup.reject_at_95,
        "n": n,
        "nulls": args.nulls,
        "design": design_kind,
        "lineup_true_position": position + 1,
        "attention_map": str(out / "attention.pgm"),
        "lineup_image": str(out / "lineup.pgm"),
    }
    print(json.dumps(report, indent=2))
    return EXIT_OK


# -- parser ----------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ARGS, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="resdiag", description="Residual-plot distance estimation and diagnostics.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="simulate one scenario and write its residual CSV")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--j", type=int, default=2)
    s.add_argument("--a", type=float, default=0.0)
    s.add_argument("--b", type=float, default=0.0)
    s.add_argument("--beta1", type=int, default=0, choices=(0, 1))
    s.add_argument("--beta2", type=int, default=0, choices=(0, 1))
    for name in ("dist-e", "dist-x1", "dist-x2"):
        s.add_argument(f"--{name}", choices=DISTRIBUTIONS, default="normal")
    s.add_argument("--sigma-e", type=float, default=1.0)
    s.add_argument("--sigma-x1", type=float, default=0.3)
    s.add_argument("--sigma-x2", type=float, default=0.3)
    s.add_argument("--n", type=int, default=100)
    s.add_argument("--mc-sets", type=int, default=DEFAULT_MC_SETS)
    s.set_defaults(func=cmd_simulate)

    d = sub.add_parser("dataset", help="build a bucket-balanced labelled dataset")
    d.add_argument("--count", type=int, required=True)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--out", required=True)
    d.add_argument("--threads", type=int, default=None)
    d.add_argument("--mc-sets", type=int, default=DEFAULT_MC_SETS)
    d.add_argument("--max-proposals", type=int, default=None)
    d.set_defaults(func=cmd_dataset)

    t = sub.add_parser("train", help="train the estimator on a manifest")
    src = t.add_mutually_exclusive_group(required=True)
    src.add_argument("--manifest")
    src.add_argument("--data", help="dataset directory containing manifest.csv")
    t.add_argument("--preset", choices=sorted(PRESETS), default="desk")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True)
    t.add_argument("--max-epochs", type=int, default=None)
    t.add_argument("--patience", type=int, default=50)
    t.add_argument("--threads", type=int, default=None)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="score a fitted model's residual plot")
    e.add_argument("--input", required=True, help="CSV with header 'fitted,residual'")
    e.add_argument("--weights", required=True)
    e.add_argument("--design", default=None, help="design matrix CSV (with header)")
    e.add_argument("--nulls", type=int, default=200)
    e.add_argument("--bootstrap", type=int, default=0)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out", required=True)
    e.add_argument("--threads", type=int, default=None)
    e.set_defaults(func=cmd_evaluate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"resdiag: error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
