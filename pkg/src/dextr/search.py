"""Zero-shot search over the cell space: constrained random and aging evolution."""
from __future__ import annotations

import csv
import io
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import archspace, proxy
from .archspace import SPACE_SIZE, CellArch, SpaceConfig

# arch -> (score, params, flops); score NaN when invalid
Scorer = Callable[[CellArch], tuple[float, int, int]]


class NoValidCandidate(RuntimeError):
    pass


@dataclass(frozen=True)
class SearchConfig:
    mode: str = "random"
    budget: int = 100
    population: int = 32
    max_params: int | None = None
    max_flops: int | None = None
    seed: int = 0
    tournament: int = 2

    def __post_init__(self):
        if self.mode not in ("random", "evolutionary"):
            raise ValueError(f"mode must be 'random' or 'evolutionary', got {self.mode!r}")
        if self.budget < 1:
            raise ValueError("budget must be >= 1")
        if self.mode == "evolutionary" and not 1 <= self.population <= self.budget:
            raise ValueError("population must be in [1, budget]")
        for name in ("max_params", "max_flops"):
            v = getattr(self, name)
            if v is not None and v < 0:
                raise ValueError(f"{name} must be non-negative")


@dataclass(frozen=True)
class TraceRow:
    step: int
    encoding: str
    score: float
    params: int
    flops: int
    accepted: bool


@dataclass
class SearchResult:
    best: str
    best_score: float
    evaluated: int
    rejected: int
    trace: list[TraceRow] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "best": self.best,
            "best_score": self.best_score,
            "evaluated": self.evaluated,
            "rejected": self.rejected,
        }


def trace_csv(trace) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["step", "encoding", "score", "params", "flops", "accepted"])
    for r in trace:
        score = "" if not math.isfinite(r.score) else repr(r.score)
        w.writerow([r.step, r.encoding, score, r.params, r.flops, int(r.accepted)])
    return buf.getvalue()


def proxy_scorer(cfg: SpaceConfig | None = None, seed: int = 42, variant: str = "dextr", beta: int = 8) -> Scorer:
    """Scorer backed by :mod:`dextr.proxy`; params/FLOPs come from the instantiation."""
    cfg = cfg or SpaceConfig()
    memo: dict[CellArch, tuple[float, int, int]] = {}

    def size(arch):
        net = archspace.instantiate(arch, cfg, seed)
        return archspace.count_params(net), archspace.count_flops(net)

    def score(arch):
        if arch not in memo:
            rep = proxy.score_report(arch, variant, cfg, seed, beta=beta)
            memo[arch] = (rep.score, rep.params, rep.flops)
        return memo[arch]

    score.size = size
    return score


def table_scorer(table: dict) -> Scorer:
    """Scorer reading a precomputed :func:`dextr.evaluation.score_space` table."""

    def score(arch):
        i = arch.index()
        return float(table["score"][i]), int(table["params"][i]), int(table["flops"][i])

    score.size = lambda arch: score(arch)[1:]
    return score


class _Run:
    def __init__(self, cfg: SearchConfig, scorer: Scorer):
        self.cfg, self.scorer = cfg, scorer
        self.trace: list[TraceRow] = []
        self.best: tuple[float, str] | None = None
        self.rejected = 0

    def allowed(self, params, flops) -> bool:
        c = self.cfg
        return (c.max_params is None or params <= c.max_params) and (c.max_flops is None or flops <= c.max_flops)

    def evaluate(self, arch: CellArch) -> float | None:
        """Score ``arch`` unless it breaks a constraint; returns None if rejected."""
        params, flops = getattr(self.scorer, "size", lambda a: self.scorer(a)[1:])(arch)
        step = len(self.trace)
        if not self.allowed(params, flops):
            self.rejected += 1
            self.trace.append(TraceRow(step, arch.encode(), math.nan, params, flops, False))
            return None
        s, params, flops = self.scorer(arch)
        self.trace.append(TraceRow(step, arch.encode(), s, params, flops, True))
        if math.isfinite(s) and (self.best is None or s > self.best[0]):
            self.best = (s, arch.encode())
        return s

    def result(self) -> SearchResult:
        if self.best is None:
            raise NoValidCandidate(
                f"no valid candidate within constraints ({self.rejected} of {len(self.trace)} rejected)"
            )
        return SearchResult(self.best[1], self.best[0], len(self.trace), self.rejected, self.trace)


def _initial(rng: np.random.Generator, n: int) -> list[CellArch]:
    idx = rng.choice(SPACE_SIZE, size=min(n, SPACE_SIZE), replace=False)
    return [CellArch.from_index(int(i)) for i in idx]


def random_search(cfg: SearchConfig, scorer: Scorer | None = None) -> SearchResult:
    """Score ``budget`` distinct uniformly drawn cells and keep the best."""
    run = _Run(cfg, scorer or proxy_scorer(seed=42))
    rng = np.random.default_rng(cfg.seed)
    for arch in _initial(rng, cfg.budget):
        run.evaluate(arch)
    return run.result()


def evolutionary_search(cfg: SearchConfig, scorer: Scorer | None = None) -> SearchResult:
    """Regularized (aging) evolution with tournament selection and one-edge mutation."""
    run = _Run(cfg, scorer or proxy_scorer(seed=42))
    rng = np.random.default_rng(cfg.seed)
    population: deque[tuple[CellArch, float]] = deque()
    for arch in _initial(rng, cfg.population):
        s = run.evaluate(arch)
        if s is not None and math.isfinite(s):
            population.append((arch, s))
    if not population:
        return run.result()
    while len(run.trace) < cfg.budget:
        k = min(cfg.tournament, len(population))
        picks = rng.choice(len(population), size=k, replace=False)
        parent = max((population[int(i)] for i in picks), key=lambda p: p[1])[0]
        child = archspace.mutate(parent, rng)
        s = run.evaluate(child)
        if s is None or not math.isfinite(s):
            continue
        population.append((child, s))
        if len(population) > cfg.population:
            population.popleft()
    return run.result()


def search(cfg: SearchConfig, scorer: Scorer | None = None) -> SearchResult:
    if cfg.mode == "random":
        return random_search(cfg, scorer)
    return evolutionary_search(cfg, scorer)
