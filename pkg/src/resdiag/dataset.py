"""Balanced labelled datasets and their on-disk manifest."""

from __future__ import annotations

import csv
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .dgp import N_BUCKETS, DgpSpec, bucket_of, propose_spec, simulate_dgp
from .distance import DEFAULT_MC_SETS
from .errors import BucketTimeout, ConstantVector
from .raster import ResidualPlotImage, rasterize, read_pgm, write_pgm
from .scagnostics import AuxFeatures, compute_aux

log = logging.getLogger(__name__)

MANIFEST_COLUMNS = (
    "id", "target_d", "method", "j", "a", "b", "beta1", "beta2", "dist_e", "dist_x1",
    "dist_x2", "sigma_e", "sigma_x1", "sigma_x2", "n", "monotonic", "sparse", "splines",
    "striped", "image_path",
)
_SPEC_FIELDS = tuple(f.name for f in fields(DgpSpec))


@dataclass
class LabeledExample:
    image: ResidualPlotImage
    aux: AuxFeatures
    target: float
    spec: DgpSpec
    bucket: int
    method: str = "closed-form"
    proposal_index: int = -1


def proposal_streams(seed: int, index: int) -> tuple[np.random.Generator, np.random.Generator]:
    """Independent (scenario, label) generators for proposal ``index`` of run ``seed``."""
    ss = np.random.SeedSequence(seed, spawn_key=(index,))
    a, b = ss.spawn(2)
    return np.random.default_rng(a), np.random.default_rng(b)


def _evaluate_proposal(args):
    seed, index, m = args
    scen_rng, label_rng = proposal_streams(seed, index)
    spec = propose_spec(scen_rng)
    try:
        scen = simulate_dgp(spec, scen_rng, label_m=m, label_rng=label_rng)
    except ConstantVector:
        return index, spec, None, None, None, None
    lab = scen.label_d
    return index, spec, lab.d, lab.method, scen.residuals, scen.fitted


def build_balanced_dataset(
    total: int,
    m: int = DEFAULT_MC_SETS,
    seed: int = 0,
    max_proposals: int | None = None,
    workers: int = 1,
    chunk: int = 256,
    side: int = 32,
) -> list[LabeledExample]:
    """Rejection-sample labelled examples until all 50 buckets hold ``total/50``.

    Proposal ``i`` draws from its own seeded substream and proposals are
    accepted in index order, so the output depends only on ``seed`` (not on
    ``workers``).
    """
    if total < N_BUCKETS or total % N_BUCKETS:
        raise ValueError(f"total must be a positive multiple of {N_BUCKETS}, got {total}")
    per_bucket = total // N_BUCKETS
    budget = max_proposals if max_proposals is not None else 2000 * total
    filled = np.zeros(N_BUCKETS + 1, dtype=int)
    out: list[LabeledExample] = []
    next_index = 0
    pool = ProcessPoolExecutor(workers) if workers > 1 else None
    try:
        while len(out) < total:
            if next_index >= budget:
                empty = [i for i in range(1, N_BUCKETS + 1) if filled[i] < per_bucket]
                raise BucketTimeout(f"buckets {empty} unfilled after {budget} proposals")
            batch = [(seed, i, m) for i in range(next_index, min(next_index + chunk, budget))]
            next_index += len(batch)
            results = pool.map(_evaluate_proposal, batch) if pool else map(_evaluate_proposal, batch)
            for index, spec, d, method, resid, fitted in results:
                if d is None:
                    continue
                bucket = bucket_of(d)
                if filled[bucket] >= per_bucket or len(out) >= total:
                    continue
                filled[bucket] += 1
                out.append(LabeledExample(
                    image=rasterize(resid, fitted, side, side),
                    aux=compute_aux(resid, fitted),
                    target=d,
                    spec=spec,
                    bucket=bucket,
                    method=method,
                    proposal_index=index,
                ))
            log.info("%d/%d examples after %d proposals", len(out), total, next_index)
    finally:
        if pool:
            pool.shutdown()
    out.sort(key=lambda ex: ex.proposal_index)
    return out


def write_manifest(examples: list[LabeledExample], out_dir, image_dir: str = "images") -> Path:
    """Write PGM images plus ``manifest.csv`` under ``out_dir``."""
    out_dir = Path(out_dir)
    (out_dir / image_dir).mkdir(parents=True, exist_ok=True)
    path = out_dir / "manifest.csv"
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_COLUMNS)
        for i, ex in enumerate(examples):
            rel = f"{image_dir}/{i:06d}.pgm"
            (out_dir / rel).write_bytes(write_pgm(ex.image))
            spec = ex.spec.as_dict()
            writer.writerow(
                [i, repr(ex.target), ex.method]
                + [repr(spec[k]) if isinstance(spec[k], float) else spec[k] for k in _SPEC_FIELDS]
                + [repr(ex.aux.monotonic), repr(ex.aux.sparse), repr(ex.aux.splines), repr(ex.aux.striped)]
                + [rel]
            )
    return path


def _parse_spec(row: dict) -> DgpSpec:
    kw = {}
    for f in fields(DgpSpec):
        raw = row[f.name]
        kw[f.name] = raw if f.type in ("str", str) else (int(raw) if f.type in ("int", int) else float(raw))
    return DgpSpec(**kw)


def read_manifest(path) -> list[LabeledExample]:
    """Load a manifest and its images back into :class:`LabeledExample` objects."""
    path = Path(path)
    base = path.parent
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(MANIFEST_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"manifest lacks columns {sorted(missing)}")
        for row in reader:
            pixels = read_pgm((base / row["image_path"]).read_bytes())
            spec = _parse_spec(row)
            target = float(row["target_d"])
            aux = AuxFeatures(
                float(row["monotonic"]), float(row["sparse"]), float(row["splines"]),
                float(row["striped"]), int(row["n"]),
            )
            out.append(LabeledExample(
                image=ResidualPlotImage(pixels, (np.nan, np.nan), (np.nan, np.nan)),
                aux=aux,
                target=target,
                spec=spec,
                bucket=bucket_of(target),
                method=row["method"],
                proposal_index=int(row["id"]),
            ))
    return out


def default_workers(threads: int | None) -> int:
    if threads is None:
        return 1
    return max(1, min(threads, os.cpu_count() or 1))
