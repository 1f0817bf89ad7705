"""Desk-scale checks of the conditioning theory on a two-layer ReLU network.

The network is ``f(x) = m^{-1/2} sum_r a_r relu(w_r . x)`` with the output
signs ``a`` frozen; only ``W`` is trained by full-batch gradient descent on
``0.5 * sum_i (u_i - y_i)^2``.  Cohorts of input sets are pushed toward a
rank-1 configuration to vary their conditioning, and rank correlations
between conditioning and training speed / held-out error are reported.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from . import archspace, proxy
from .archspace import SpaceConfig
from .evaluation import spearman
from .linalg import spectrum
from .network import forward

DIVERGENCE_LOSS = 1e8
ALPHAS = (0.0, 0.25, 0.5, 0.75, 0.95)


class TheoryError(RuntimeError):
    pass


@dataclass
class TwoLayerNet:
    W: np.ndarray  # (d, m)
    a: np.ndarray  # (m,), entries +-1

    @classmethod
    def init(cls, d: int, m: int, rng: np.random.Generator) -> TwoLayerNet:
        return cls(rng.standard_normal((d, m)), rng.choice([-1.0, 1.0], size=m))

    @property
    def width(self) -> int:
        return self.W.shape[1]

    def __call__(self, X: np.ndarray) -> np.ndarray:
        return np.maximum(X @ self.W, 0.0) @ self.a / math.sqrt(self.width)

    def loss(self, X, y) -> float:
        r = self(X) - y
        return 0.5 * float(r @ r)

    def grad(self, X, y) -> np.ndarray:
        """dL/dw_r = m^{-1/2} a_r sum_i (u_i - y_i) 1{w_r.x_i > 0} x_i, stacked as columns."""
        pre = X @ self.W
        r = np.maximum(pre, 0.0) @ self.a / math.sqrt(self.width) - y
        return X.T @ ((r[:, None] * (pre > 0)) * self.a[None, :]) / math.sqrt(self.width)


@dataclass
class TrainRun:
    losses: np.ndarray
    gamma: float
    steps: int
    tau: float = 0.1
    diverged: bool = False
    net: TwoLayerNet | None = None

    @property
    def converged_at(self) -> int | None:
        """First step with loss <= tau * loss_0, or None."""
        if self.losses[0] == 0.0:
            return 0
        hit = np.flatnonzero(self.losses <= self.tau * self.losses[0])
        return int(hit[0]) if len(hit) else None

    @property
    def speed(self) -> float:
        """1 / steps-to-threshold; a run that never gets there counts as T+1 steps."""
        if self.diverged:
            return 0.0
        k = self.converged_at
        k = self.steps + 1 if k is None else k
        return 1.0 / max(k, 1)

    def decay_rate(self) -> float:
        """Least-squares slope of -log(loss) over the recorded trace."""
        L = self.losses
        ok = L > 0
        if ok.sum() < 2:
            return math.inf if L[0] > 0 else 0.0
        t = np.arange(len(L))[ok]
        return float(-np.polyfit(t, np.log(L[ok]), 1)[0])


def train_two_layer(net: TwoLayerNet, X, y, gamma: float, T: int, tau: float = 0.1) -> TrainRun:
    """Full-batch gradient descent on W; ``a`` stays fixed. ``net`` is not modified."""
    if not gamma > 0:
        raise ValueError(f"step size must be positive, got {gamma}")
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    cur = TwoLayerNet(net.W.copy(), net.a.copy())
    losses = [cur.loss(X, y)]
    diverged = False
    for _ in range(T):
        cur.W -= gamma * cur.grad(X, y)
        loss = cur.loss(X, y)
        if not math.isfinite(loss) or loss > DIVERGENCE_LOSS:
            diverged = True
            break
        losses.append(loss)
    return TrainRun(np.array(losses), gamma, T, tau, diverged, cur)


def gram_h_infty(X, mc_samples: int = 20000, seed: int = 0, normalize: bool = False, chunk: int = 4096) -> np.ndarray:
    """Monte Carlo E_w[x_i.x_j 1{w.x_i >= 0, w.x_j >= 0}] with w ~ N(0, I)."""
    X = np.asarray(X, dtype=np.float64)
    if normalize:
        X = X / np.linalg.norm(X, axis=1, keepdims=True)
    rng = np.random.default_rng(seed)
    n, d = X.shape
    both = np.zeros((n, n))
    done = 0
    while done < mc_samples:
        k = min(chunk, mc_samples - done)
        ind = (X @ rng.standard_normal((d, k)) >= 0).astype(np.float64)
        both += ind @ ind.T
        done += k
    return (X @ X.T) * (both / mc_samples)


# ---------------------------------------------------------------- cohorts


@dataclass(frozen=True)
class TheoryConfig:
    num_sets: int = 30
    m: int = 512
    n: int = 16
    d: int = 20
    gamma: float = 0.1
    steps: int = 3000
    tau: float = 0.1
    alphas: tuple[float, ...] = ALPHAS
    seed: int = 0
    teacher_width: int = 8

    def __post_init__(self):
        if self.num_sets < 10:
            raise ValueError(f"need at least 10 input sets, got {self.num_sets}")
        if min(self.m, self.n, self.d, self.steps, self.teacher_width) < 1:
            raise ValueError("sizes must be positive")
        if self.d < 2:
            raise ValueError("input dimension must be >= 2")


def collinear_inputs(Z: np.ndarray, u: np.ndarray, alpha: float) -> np.ndarray:
    """Rows of Z pulled toward the common direction ``u`` and renormalised.

    Each row moves toward ``|z_i| u`` so that alpha -> 1 approaches a rank-1
    set without the norms collapsing.
    """
    R = np.linalg.norm(Z, axis=1, keepdims=True) * u[None, :]
    X = (1.0 - alpha) * Z + alpha * R
    return X / np.linalg.norm(X, axis=1, keepdims=True)


@dataclass
class CohortRow:
    set_id: int
    alpha: float
    inv_cond: float
    steps_to_tau: int | None
    speed: float
    final_loss: float
    test_mse: float
    test_mse_swapped: float
    diverged: bool


@dataclass
class ExperimentResult:
    kind: str
    rho: float
    rows: list[CohortRow] = field(default_factory=list)
    rho_swapped: float | None = None
    config: TheoryConfig | None = None

    def to_json(self) -> dict:
        def clean(x):
            return None if isinstance(x, float) and not math.isfinite(x) else x

        out = {"experiment": self.kind, "rho": self.rho}
        if self.rho_swapped is not None:
            out["rho_swapped"] = self.rho_swapped
        if self.config is not None:
            c = self.config
            out["config"] = {
                "num_sets": c.num_sets, "m": c.m, "n": c.n, "d": c.d, "gamma": c.gamma,
                "steps": c.steps, "tau": c.tau, "alphas": list(c.alphas), "seed": c.seed,
                "teacher_width": c.teacher_width,
            }
        out["median_by_alpha"] = {
            repr(a): clean(float(np.median([r.test_mse if self.kind == "generalisation" else r.speed
                                             for r in self.rows if r.alpha == a])))
            for a in sorted({r.alpha for r in self.rows})
        }
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["set_id", "alpha", "inv_cond", "steps_to_tau", "speed", "final_loss",
                    "test_mse", "test_mse_swapped", "diverged"])
        for r in self.rows:
            w.writerow([r.set_id, repr(r.alpha), repr(r.inv_cond), "" if r.steps_to_tau is None else r.steps_to_tau,
                        repr(r.speed), repr(r.final_loss), repr(r.test_mse), repr(r.test_mse_swapped), int(r.diverged)])
        return buf.getvalue()


def _set_rng(cfg: TheoryConfig, s: int) -> np.random.Generator:
    return np.random.default_rng([int(cfg.seed) & 0xFFFFFFFF, s])


def convergence_experiment(cfg: TheoryConfig | None = None) -> ExperimentResult:
    """Spearman(inv_cond^2, 1/steps-to-tau) over collinearity cohorts.

    Set ``s`` uses ``alphas[s % len(alphas)]``, random N(0, 1) labels and its
    own network initialisation.
    """
    cfg = cfg or TheoryConfig()
    rows = []
    for s in range(cfg.num_sets):
        alpha = cfg.alphas[s % len(cfg.alphas)]
        rng = _set_rng(cfg, s)
        u = rng.standard_normal(cfg.d)
        u /= np.linalg.norm(u)
        X = collinear_inputs(rng.standard_normal((cfg.n, cfg.d)), u, alpha)
        y = rng.standard_normal(cfg.n)
        net = TwoLayerNet.init(cfg.d, cfg.m, rng)
        run = train_two_layer(net, X, y, cfg.gamma, cfg.steps, cfg.tau)
        rows.append(CohortRow(s, alpha, spectrum(X).inv_cond, run.converged_at, run.speed,
                              float(run.losses[-1]), math.nan, math.nan, run.diverged))
    ok = [r for r in rows if not r.diverged]
    if not ok:
        raise TheoryError("every training run diverged; lower the step size")
    rho = spearman([r.inv_cond ** 2 for r in ok], [r.speed for r in ok])
    return ExperimentResult("convergence", rho, rows, config=cfg)


def generalisation_experiment(cfg: TheoryConfig | None = None) -> ExperimentResult:
    """Spearman(inv_cond, -test MSE) with a realizable two-layer ReLU teacher.

    Train and test inputs of a set share the collinearity direction; labels
    are the teacher's outputs on the (unit-norm) inputs.  ``rho_swapped``
    repeats the fit with the roles of the two splits exchanged.
    """
    cfg = cfg or TheoryConfig()
    rows = []
    for s in range(cfg.num_sets):
        alpha = cfg.alphas[s % len(cfg.alphas)]
        rng = _set_rng(cfg, s)
        u = rng.standard_normal(cfg.d)
        u /= np.linalg.norm(u)
        X = collinear_inputs(rng.standard_normal((cfg.n, cfg.d)), u, alpha)
        Xt = collinear_inputs(rng.standard_normal((cfg.n, cfg.d)), u, alpha)
        teacher = TwoLayerNet.init(cfg.d, cfg.teacher_width, rng)
        y, yt = teacher(X), teacher(Xt)
        net = TwoLayerNet.init(cfg.d, cfg.m, rng)
        run = train_two_layer(net, X, y, cfg.gamma, cfg.steps, cfg.tau)
        swap = train_two_layer(net, Xt, yt, cfg.gamma, cfg.steps, cfg.tau)
        te = float(np.mean((run.net(Xt) - yt) ** 2)) if not run.diverged else math.nan
        te2 = float(np.mean((swap.net(X) - y) ** 2)) if not swap.diverged else math.nan
        rows.append(CohortRow(s, alpha, spectrum(X).inv_cond, run.converged_at, run.speed,
                              float(run.losses[-1]), te, te2, run.diverged or swap.diverged))
    ok = [r for r in rows if not r.diverged]
    if not ok:
        raise TheoryError("every training run diverged; lower the step size")
    rho = spearman([r.inv_cond for r in ok], [-r.test_mse for r in ok])
    rho2 = spearman([r.inv_cond for r in ok], [-r.test_mse_swapped for r in ok])
    return ExperimentResult("generalisation", rho, rows, rho_swapped=rho2, config=cfg)


# ---------------------------------------------------------------- lemma check


@dataclass
class LemmaResult:
    fraction: float
    per_net: list[float]
    archs: list[str]
    seed: int

    def to_json(self) -> dict:
        return {"fraction": self.fraction, "nets": len(self.per_net), "seed": self.seed, "per_net": self.per_net}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["net", "arch", "fraction"])
        for i, (a, f) in enumerate(zip(self.archs, self.per_net)):
            w.writerow([i, a, repr(f)])
        return buf.getvalue()


def lemma1_check(cfg: SpaceConfig | None = None, num_nets: int = 100, seed: int = 0) -> LemmaResult:
    """Mean per-network share of qualifying layers whose top singular value is >= 1.

    Net ``i`` is a uniformly sampled cell with its own weights and a uniform
    [0, 1) input.  Nets without any qualifying layer are skipped.
    """
    if num_nets < 10:
        raise ValueError(f"num_nets must be >= 10, got {num_nets}")
    cfg = cfg or SpaceConfig()
    fracs, archs = [], []
    for i in range(num_nets):
        s = proxy.derive_seed(seed, f"lemma/{i}")
        arch = archspace.sample(s)
        net = archspace.instantiate(arch, cfg, s)
        x = proxy.default_data_sample(cfg.input_shape, proxy.derive_seed(s, "data"))
        recs = [r for r in forward(net, x).records if r.qualifying]
        if not recs:
            continue
        fracs.append(sum(r.sigma_max >= 1.0 for r in recs) / len(recs))
        archs.append(arch.encode())
    if not fracs:
        raise TheoryError("no sampled network had a qualifying layer")
    return LemmaResult(float(np.mean(fracs)), fracs, archs, seed)
