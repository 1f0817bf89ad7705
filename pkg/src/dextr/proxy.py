"""Dextr scoring: feature-map conditioning combined with output curvature.

Two forward passes share one weight instantiation.  The first pushes a
single label-free data sample through the network and sums the inverse
condition numbers of every qualifying layer.  The second pushes a circular
input ``g(theta)`` carrying jets in ``theta`` and reads velocity and
acceleration of the logits to get the extrinsic curvature.  The two log-terms
are combined as half their harmonic mean.
"""
from __future__ import annotations

import math
import zlib
from dataclasses import asdict, dataclass, field

import numpy as np

from . import archspace, jet
from .archspace import CellArch, SpaceConfig
from .linalg import ConvergenceError, spectrum
from .network import LayerRecord, NetworkSpec, count_flops, count_params, forward

KAPPA_GRID = 8
VARIANTS = ("dextr", "dextr_opt", "cond_only", "curv_only", "params", "flops")


def derive_seed(seed: int, tag: str) -> int:
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFF, zlib.crc32(tag.encode())])
    return int(ss.generate_state(1)[0])


@dataclass(frozen=True)
class CircularInputConfig:
    shape: tuple[int, ...] = (3, 32, 32)
    q: float = 1.0
    theta: float | None = None  # None: drawn uniformly in [0, 2pi) from seed
    seed: int = 0

    @property
    def n1(self) -> int:
        return int(np.prod(self.shape))


def _circle_basis(cfg: CircularInputConfig):
    if cfg.n1 < 2:
        raise ValueError(f"circular input needs dimension >= 2, got {cfg.n1}")
    if not cfg.q > 0:
        raise ValueError(f"q must be positive, got {cfg.q}")
    rng = np.random.default_rng(cfg.seed)
    a, b = rng.standard_normal(cfg.n1), rng.standard_normal(cfg.n1)
    o0 = a / np.linalg.norm(a)
    b = b - (o0 @ b) * o0
    o1 = b / np.linalg.norm(b)
    theta = cfg.theta if cfg.theta is not None else float(rng.uniform(0.0, 2.0 * math.pi))
    return o0, o1, theta


def circular_input(cfg: CircularInputConfig, theta: float | None = None) -> jet.Tensor:
    """Point on the great circle sqrt(n1 q)(o0 cos t + o1 sin t) with d/dt jets."""
    o0, o1, th = _circle_basis(cfg)
    if theta is not None:
        th = theta
    r = math.sqrt(cfg.n1 * cfg.q)
    c, s = math.cos(th), math.sin(th)
    v = r * (o0 * c + o1 * s)
    d1 = r * (-o0 * s + o1 * c)
    shape = (1,) + tuple(cfg.shape)
    return jet.Tensor(np.stack([v, d1, -v]).reshape((3,) + shape))


def resolved_theta(cfg: CircularInputConfig) -> float:
    return _circle_basis(cfg)[2]


def curvature(output: jet.Tensor) -> float:
    """Extrinsic curvature of the curve traced by ``output`` (NaN if non-finite)."""
    if output.size < 2:
        raise ValueError("curvature needs an output with at least 2 elements")
    vel = output.d1.ravel()
    acc = output.d2.ravel()
    if not (np.isfinite(vel).all() and np.isfinite(acc).all()):
        return math.nan
    vv = float(vel @ vel)
    if vv < 1e-18:
        return 0.0
    aa = float(acc @ acc)
    va = float(vel @ acc)
    return vv ** -1.5 * math.sqrt(max(0.0, vv * aa - va * va))


def combine(cond_term: float, curv_term: float) -> float:
    """Half the harmonic mean of the two log-terms; 0 if either is 0."""
    if cond_term <= 0.0 or curv_term <= 0.0:
        return 0.0
    return cond_term * curv_term / (cond_term + curv_term)


@dataclass
class ProxyReport:
    arch: str
    records: list[LayerRecord]
    cond_sum: float
    cond_term: float
    kappa: float
    curv_term: float
    dextr: float
    params: int
    flops: int
    valid: bool
    seeds: dict = field(default_factory=dict)
    variant: str = "dextr"

    @property
    def score(self) -> float:
        """Value of the requested variant; NaN for invalid reports."""
        if not self.valid:
            return math.nan
        return {
            "dextr": self.dextr,
            "dextr_opt": self.dextr,
            "cond_only": self.cond_term,
            "curv_only": self.curv_term,
            "params": float(self.params),
            "flops": float(self.flops),
        }[self.variant]

    def to_json(self, with_layers: bool = False) -> dict:
        def clean(x):
            return None if isinstance(x, float) and not math.isfinite(x) else x

        out = {
            "arch": self.arch,
            "variant": self.variant,
            "valid": self.valid,
            "dextr": clean(self.dextr if self.valid else math.nan),
            "cond_sum": clean(self.cond_sum),
            "cond_term": clean(self.cond_term),
            "kappa": clean(self.kappa),
            "curv_term": clean(self.curv_term),
            "params": self.params,
            "flops": self.flops,
            "qualifying_layers": sum(r.qualifying for r in self.records),
            "seeds": self.seeds,
        }
        if with_layers:
            out["layers"] = [{k: clean(v) for k, v in asdict(r).items()} for r in self.records]
        return out


def default_data_sample(shape, seed: int) -> jet.Tensor:
    rng = np.random.default_rng(seed)
    return jet.Tensor.constant(rng.uniform(0.0, 1.0, size=(1,) + tuple(shape)))


def kappa_of(net: NetworkSpec, circ: CircularInputConfig, mode: str = "single") -> tuple[float, bool]:
    """Curvature of the logits at theta (or the mean over a K=8 theta grid)."""
    if mode == "single":
        thetas = [resolved_theta(circ)]
    elif mode == "mean":
        t0 = resolved_theta(circ)
        thetas = [t0 + 2.0 * math.pi * k / KAPPA_GRID for k in range(KAPPA_GRID)]
    else:
        raise ValueError(f"unknown kappa mode {mode!r}")
    ks = []
    for th in thetas:
        res = forward(net, circular_input(circ, th), spectra=False)
        k = curvature(res.output) if res.valid else math.nan
        ks.append(k)
    kappa = float(np.mean(ks))
    return kappa, math.isfinite(kappa)


def _report(arch, net, records, cond_sum, kappa, valid, seeds, variant="dextr") -> ProxyReport:
    valid = valid and math.isfinite(cond_sum) and math.isfinite(kappa)
    cond_term = math.log1p(cond_sum) if valid else math.nan
    curv_term = math.log1p(kappa) if valid else math.nan
    score = combine(cond_term, curv_term) if valid else math.nan
    return ProxyReport(
        arch=arch.encode() if isinstance(arch, CellArch) else str(arch),
        records=records,
        cond_sum=cond_sum,
        cond_term=cond_term,
        kappa=kappa,
        curv_term=curv_term,
        dextr=score,
        params=count_params(net),
        flops=count_flops(net),
        valid=valid,
        seeds=seeds,
        variant=variant,
    )


def _prepare(arch, cfg, data_sample, circ, seed):
    cfg = cfg or SpaceConfig()
    if isinstance(arch, str):
        arch = archspace.parse_encoding(arch)
    net = archspace.instantiate(arch, cfg, seed)
    if data_sample is None:
        data_sample = default_data_sample(cfg.input_shape, derive_seed(seed, "data"))
    if circ is None:
        circ = CircularInputConfig(tuple(cfg.input_shape), seed=derive_seed(seed, "circle"))
    seeds = {"init": int(seed), "circle": int(circ.seed), "theta": resolved_theta(circ), "q": circ.q}
    return arch, cfg, net, data_sample, circ, seeds


def dextr_score(
    arch: CellArch | str,
    cfg: SpaceConfig | None = None,
    data_sample: jet.Tensor | None = None,
    circ: CircularInputConfig | None = None,
    seed: int = 42,
    kappa_mode: str = "single",
) -> ProxyReport:
    arch, cfg, net, data_sample, circ, seeds = _prepare(arch, cfg, data_sample, circ, seed)
    res = forward(net, data_sample)
    cond_sum = float(sum(r.inv_cond for r in res.records if r.qualifying))
    kappa, kvalid = kappa_of(net, circ, kappa_mode)
    return _report(arch, net, res.records, cond_sum, kappa, res.valid and kvalid, seeds)


def _subsampled_cond_sum(res, beta: int, rng: np.random.Generator) -> tuple[float, bool]:
    total = 0.0
    for rec, mat in zip(res.records, res.features):
        if not rec.qualifying:
            continue
        alpha = mat.shape[0]
        keep = np.sort(rng.choice(alpha, size=min(beta, alpha), replace=False))
        try:
            total += alpha / beta * spectrum(mat[keep]).inv_cond
        except ConvergenceError:
            return math.nan, False
    return total, True


def dextr_opt_score(
    arch: CellArch | str,
    cfg: SpaceConfig | None = None,
    data_sample: jet.Tensor | None = None,
    circ: CircularInputConfig | None = None,
    seed: int = 42,
    beta: int = 8,
    sample_seed: int | None = None,
    kappa_mode: str = "single",
) -> ProxyReport:
    """Channel-subsampled variant: each layer weighted by (its channels)/beta."""
    if beta < 2:
        raise ValueError(f"beta must be >= 2, got {beta}")
    arch, cfg, net, data_sample, circ, seeds = _prepare(arch, cfg, data_sample, circ, seed)
    if sample_seed is None:
        sample_seed = derive_seed(seed, "channels")
    seeds.update(channels=int(sample_seed), beta=int(beta))
    res = forward(net, data_sample, keep_features=True)
    cond_sum, ok = _subsampled_cond_sum(res, beta, np.random.default_rng(sample_seed))
    kappa, kvalid = kappa_of(net, circ, kappa_mode)
    return _report(arch, net, res.records, cond_sum, kappa, res.valid and ok and kvalid, seeds, "dextr_opt")


def ablation_scores(arch, cfg=None, data_sample=None, circ=None, seed: int = 42) -> dict:
    rep = dextr_score(arch, cfg, data_sample, circ, seed)
    return {
        "cond_only": rep.cond_term,
        "curv_only": rep.curv_term,
        "n_params": rep.params,
        "flops": rep.flops,
        "dextr": rep.dextr,
    }


def score_report(
    arch, variant: str = "dextr", cfg=None, seed: int = 42, data_sample=None, circ=None,
    beta: int = 8, kappa_mode: str = "single",
) -> ProxyReport:
    """Report for any variant; ``report.score`` is the variant's value."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; choose from {', '.join(VARIANTS)}")
    if variant == "dextr_opt":
        return dextr_opt_score(arch, cfg, data_sample, circ, seed, beta, kappa_mode=kappa_mode)
    rep = dextr_score(arch, cfg, data_sample, circ, seed, kappa_mode)
    rep.variant = variant
    return rep
