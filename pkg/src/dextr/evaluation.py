"""Correlation, stability and per-layer profiling harness."""
from __future__ import annotations

import csv
import io
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import archspace, proxy
from .archspace import SPACE_SIZE, CellArch, SpaceConfig
from .network import forward

log = logging.getLogger(__name__)


class UndefinedCorrelation(ValueError):
    pass


class BenchmarkError(ValueError):
    pass


# ---------------------------------------------------------------- ranks


def fractional_ranks(xs) -> np.ndarray:
    """1-based ranks with ties replaced by the mean of their positions."""
    x = np.asarray(xs, dtype=np.float64)
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(len(x))
    sx = x[order]
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and sx[j + 1] == sx[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + 1 + j + 1) / 2.0
        i = j + 1
    return ranks


def pearson(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    da, db = a - a.mean(), b - b.mean()
    denom = math.sqrt(float(da @ da) * float(db @ db))
    if denom == 0.0:
        raise UndefinedCorrelation("undefined correlation: constant input")
    return max(-1.0, min(1.0, float(da @ db) / denom))


def spearman(xs, ys) -> float:
    if len(xs) != len(ys):
        raise ValueError(f"length mismatch: {len(xs)} vs {len(ys)}")
    if len(xs) < 2:
        raise UndefinedCorrelation("undefined correlation: need at least 2 points")
    if len(set(map(float, xs))) < 2 or len(set(map(float, ys))) < 2:
        raise UndefinedCorrelation("undefined correlation: constant input")
    return pearson(fractional_ranks(xs), fractional_ranks(ys))


# ---------------------------------------------------------------- benchmark tables


@dataclass
class BenchmarkTable:
    encodings: list[str]
    accuracies: list[float]
    dataset: str = ""

    def __len__(self):
        return len(self.encodings)


def load_benchmark(path, dataset: str | None = None) -> BenchmarkTable:
    """Read a CSV with header ``encoding,accuracy`` (errors name the line)."""
    path = Path(path)
    with open(path, newline="") as fh:
        return parse_benchmark(fh.read(), dataset if dataset is not None else path.stem)


def parse_benchmark(text: str, dataset: str = "") -> BenchmarkTable:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or [h.strip() for h in header] != ["encoding", "accuracy"]:
        raise BenchmarkError(f"line 1: expected header 'encoding,accuracy', got {header!r}")
    encs, accs, seen = [], [], {}
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 2:
            raise BenchmarkError(f"line {lineno}: expected 2 fields, got {len(row)}")
        enc, acc_s = row[0].strip(), row[1].strip()
        try:
            archspace.parse_encoding(enc)
        except archspace.EncodingError as e:
            raise BenchmarkError(f"line {lineno}: {e}") from None
        try:
            acc = float(acc_s)
        except ValueError:
            raise BenchmarkError(f"line {lineno}: accuracy {acc_s!r} is not a number") from None
        if not (math.isfinite(acc) and 0.0 <= acc <= 100.0):
            raise BenchmarkError(f"line {lineno}: accuracy {acc} outside [0, 100]")
        if enc in seen:
            raise BenchmarkError(f"line {lineno}: duplicate encoding (first on line {seen[enc]})")
        seen[enc] = lineno
        encs.append(enc)
        accs.append(acc)
    if not encs:
        raise BenchmarkError("benchmark table is empty")
    return BenchmarkTable(encs, accs, dataset)


def write_benchmark(table: BenchmarkTable, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["encoding", "accuracy"])
        for e, a in zip(table.encodings, table.accuracies):
            w.writerow([e, repr(float(a))])


# ---------------------------------------------------------------- scoring fan-out


def _score_one(args) -> float:
    enc, variant, cfg, seed, beta = args
    return proxy.score_report(enc, variant, cfg, seed, beta=beta).score


def score_many(encodings, variant="dextr", cfg=None, seed=42, threads=1, beta=8) -> list[float]:
    """Scores in input order; NaN marks invalid reports."""
    jobs = [(e, variant, cfg or SpaceConfig(), seed, beta) for e in encodings]
    if threads <= 1 or len(jobs) < 2:
        return [_score_one(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(_score_one, jobs, chunksize=max(1, len(jobs) // (4 * threads))))


@dataclass
class CorrelationReport:
    n: int
    rho: float
    rho_std: float
    rhos: list[float]
    invalid: int
    variant: str
    dataset: str = ""
    seeds: list[int] = field(default_factory=list)
    timing: float = 0.0

    def to_json(self) -> dict:
        # timing is left out so reports are byte-reproducible
        return {
            "dataset": self.dataset,
            "variant": self.variant,
            "n": self.n,
            "rho": self.rho,
            "rho_std": self.rho_std,
            "rhos": self.rhos,
            "invalid": self.invalid,
            "seeds": self.seeds,
        }


def correlate(table: BenchmarkTable, variant="dextr", runs=1, seeds=None, cfg=None, threads=1, beta=8) -> CorrelationReport:
    if len(table) == 0:
        raise BenchmarkError("benchmark table is empty")
    seeds = list(seeds) if seeds is not None else [42 + r for r in range(runs)]
    if len(seeds) != runs:
        raise ValueError(f"need {runs} seeds, got {len(seeds)}")
    t0 = time.perf_counter()
    rhos, invalid = [], 0
    for seed in seeds:
        scores = np.array(score_many(table.encodings, variant, cfg, seed, threads, beta))
        ok = np.isfinite(scores)
        bad = int((~ok).sum())
        invalid = max(invalid, bad)
        if bad > len(scores) / 2:
            raise BenchmarkError(f"{bad} of {len(scores)} architectures scored invalid (seed {seed})")
        acc = np.asarray(table.accuracies)[ok]
        rhos.append(spearman(scores[ok], acc))
        log.info("seed %d: rho=%.4f (%d invalid)", seed, rhos[-1], bad)
    return CorrelationReport(
        n=len(table),
        rho=float(np.mean(rhos)),
        rho_std=float(np.std(rhos)),
        rhos=rhos,
        invalid=invalid,
        variant=variant,
        dataset=table.dataset,
        seeds=seeds,
        timing=time.perf_counter() - t0,
    )


# ---------------------------------------------------------------- stability / profiles


def stability(arch, k: int = 10, seed: int = 42, cfg=None, kappa_mode="single") -> tuple[float, float, list[float]]:
    """Mean and (sample) std of Dextr over ``k`` paired data/circle draws.

    Network weights stay fixed (``seed``); draw ``i`` uses its own data
    sample and its own circular input.
    """
    if k < 2:
        raise ValueError("stability needs k >= 2")
    cfg = cfg or SpaceConfig()
    scores = []
    for i in range(k):
        data = proxy.default_data_sample(cfg.input_shape, proxy.derive_seed(seed, f"data/{i}"))
        circ = proxy.CircularInputConfig(tuple(cfg.input_shape), seed=proxy.derive_seed(seed, f"circle/{i}"))
        scores.append(proxy.dextr_score(arch, cfg, data, circ, seed, kappa_mode).dextr)
    return float(np.mean(scores)), float(np.std(scores, ddof=1)), scores


def layer_profile(arch, data_sample=None, cfg=None, seed: int = 42) -> list[tuple[int, float]]:
    """(layer_id, 1/c) for every qualifying layer, in forward order."""
    cfg = cfg or SpaceConfig()
    if isinstance(arch, str):
        arch = archspace.parse_encoding(arch)
    net = archspace.instantiate(arch, cfg, seed)
    if data_sample is None:
        data_sample = proxy.default_data_sample(cfg.input_shape, proxy.derive_seed(seed, "data"))
    res = forward(net, data_sample)
    return [(r.layer_id, r.inv_cond) for r in res.records if r.qualifying]


def profile_csv(profile) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["layer_id", "fmi"])
    for lid, fmi in profile:
        w.writerow([lid, repr(float(fmi))])
    return buf.getvalue()


# ---------------------------------------------------------------- exhaustive table


def cache_dir() -> Path:
    return Path(os.environ.get("DEXTR_CACHE", Path.home() / ".cache" / "dextr"))


def score_space(cfg=None, seed: int = 42, threads: int = 1, cache: bool = True, progress=None) -> dict:
    """Dextr, params and FLOPs of all 15625 cells, indexed by ``CellArch.index()``.

    Cached as ``.npz`` under :func:`cache_dir` keyed by config and seed.
    """
    cfg = cfg or SpaceConfig()
    key = f"space_s{seed}_c{cfg.stem_channels}_n{cfg.cells_per_stage}_st{cfg.num_stages}_k{cfg.num_classes}_" + "x".join(
        map(str, cfg.input_shape)
    )
    path = cache_dir() / f"{key}.npz"
    if cache and path.exists():
        z = np.load(path)
        return {k: z[k] for k in z.files}
    archs = [CellArch.from_index(i) for i in range(SPACE_SIZE)]
    scores = np.empty(SPACE_SIZE)
    block = 256
    for start in range(0, SPACE_SIZE, block):
        encs = [a.encode() for a in archs[start:start + block]]
        scores[start:start + block] = score_many(encs, "dextr", cfg, seed, threads)
        if progress:
            progress(min(start + block, SPACE_SIZE), SPACE_SIZE)
    params = np.empty(SPACE_SIZE, dtype=np.int64)
    flops = np.empty(SPACE_SIZE, dtype=np.int64)
    for i, a in enumerate(archs):
        net = archspace.instantiate(a, cfg, seed)
        params[i] = archspace.count_params(net)
        flops[i] = archspace.count_flops(net)
    out = {"score": scores, "params": params, "flops": flops}
    if cache:
        path.parent.mkdir(parents=True, exist_ok=True)
        np.savez(path, **out)
    return out
