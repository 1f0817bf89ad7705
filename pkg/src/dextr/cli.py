"""Command-line interface: ``dextr <command> [flags]``.

Exit codes: 0 ok, 1 usage error, 2 invalid score, 3 data error.
Reports go to stdout (or ``--output``); logs and timing go to stderr.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import struct
import sys
import time
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__, archspace, evaluation, jet, proxy, search, theory
from .archspace import SpaceConfig

log = logging.getLogger("dextr")

EXIT_OK, EXIT_USAGE, EXIT_INVALID, EXIT_DATA = 0, 1, 2, 3


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------- tensor files


def write_tensor(path, arr):
    """Raw tensor: uint32 ndim, uint32 extents, then little-endian float64 data."""
    arr = np.ascontiguousarray(arr, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        fh.write(arr.tobytes())


def read_tensor(path) -> np.ndarray:
    path = Path(path)
    try:
        if path.suffix == ".npy":
            return np.load(path, allow_pickle=False).astype(np.float64)
        raw = path.read_bytes()
    except (OSError, ValueError) as e:
        raise DataError(f"cannot read tensor {path}: {e}") from None
    if len(raw) < 4:
        raise DataError(f"{path}: truncated header")
    (ndim,) = struct.unpack_from("<I", raw, 0)
    if not 1 <= ndim <= 8 or len(raw) < 4 + 4 * ndim:
        raise DataError(f"{path}: bad header (ndim={ndim})")
    shape = struct.unpack_from(f"<{ndim}I", raw, 4)
    body = raw[4 + 4 * ndim:]
    count = int(np.prod(shape))
    if len(body) != 8 * count:
        raise DataError(f"{path}: expected {8 * count} data bytes for shape {shape}, found {len(body)}")
    return np.frombuffer(body, dtype="<f8").reshape(shape).astype(np.float64)


# ---------------------------------------------------------------- shared helpers


def _space_cfg(args) -> SpaceConfig:
    return SpaceConfig(stem_channels=args.stem_channels, cells_per_stage=args.cells_per_stage)


def _arch(enc: str):
    try:
        return archspace.parse_encoding(enc)
    except archspace.EncodingError as e:
        raise UsageError(f"malformed encoding {enc!r}: {e}") from None


def _data_sample(args, cfg):
    if args.input == "random":
        return None
    x = read_tensor(args.input)
    if x.shape == tuple(cfg.input_shape):
        x = x[None]
    if x.shape != (1,) + tuple(cfg.input_shape):
        raise DataError(f"input tensor has shape {x.shape}, expected {tuple(cfg.input_shape)}")
    if not np.isfinite(x).all():
        raise DataError("input tensor contains non-finite values")
    return jet.Tensor.constant(x)


def _circle(args, cfg):
    if args.theta == "random":
        theta = None
    else:
        try:
            theta = float(args.theta)
        except ValueError:
            raise UsageError(f"--theta must be 'random' or a number, got {args.theta!r}") from None
    if not args.q > 0:
        raise UsageError("--q must be positive")
    return proxy.CircularInputConfig(tuple(cfg.input_shape), args.q, theta, proxy.derive_seed(args.seed, "circle"))


def _emit(args, text: str):
    if not text.endswith("\n"):
        text += "\n"
    if args.output:
        with open(args.output, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False)


def _kv_csv(d: dict) -> str:
    keys = [k for k, v in d.items() if not isinstance(v, (dict, list))]
    vals = ["" if d[k] is None else (repr(d[k]) if isinstance(d[k], float) else str(d[k])) for k in keys]
    return ",".join(keys) + "\n" + ",".join(vals) + "\n"


# ---------------------------------------------------------------- commands


def cmd_score(args) -> int:
    cfg = _space_cfg(args)
    arch = _arch(args.arch)
    circ = _circle(args, cfg)
    rep = proxy.score_report(arch, args.variant, cfg, args.seed, _data_sample(args, cfg), circ, args.beta)
    log.info("seeds: init=%d circle=%d theta=%r", args.seed, circ.seed, rep.seeds["theta"])
    out = rep.to_json(with_layers=args.layers)
    if args.variant not in ("dextr", "dextr_opt"):
        # the requested variant takes the place of the combined score
        del out["dextr"]
        out[args.variant] = None if not rep.valid else rep.score
    if args.format == "csv":
        _emit(args, _kv_csv(out))
    else:
        _emit(args, _dump(out))
    return EXIT_OK if rep.valid else EXIT_INVALID


def _load_table(spec: str) -> evaluation.BenchmarkTable:
    try:
        if spec == "sample":
            text = resources.files("dextr").joinpath("data/sample_benchmark.csv").read_text()
            return evaluation.parse_benchmark(text, "sample")
        return evaluation.load_benchmark(spec)
    except OSError as e:
        raise DataError(f"cannot read benchmark {spec}: {e}") from None


def cmd_correlate(args) -> int:
    table = _load_table(args.benchmark)
    seeds = [args.seed + r for r in range(args.runs)]
    log.info("seeds: %s", seeds)
    rep = evaluation.correlate(table, args.variant, args.runs, seeds, _space_cfg(args), args.threads, args.beta)
    log.info("correlate took %.2fs", rep.timing)
    if args.format == "csv":
        lines = ["seed,rho"] + [f"{s},{r!r}" for s, r in zip(rep.seeds, rep.rhos)]
        _emit(args, "\n".join(lines))
    else:
        _emit(args, _dump(rep.to_json()))
    return EXIT_OK


def cmd_search(args) -> int:
    cfg = search.SearchConfig(
        mode=args.mode,
        budget=args.budget,
        population=min(args.population, args.budget),
        max_params=args.constraint_params,
        max_flops=args.constraint_flops,
        seed=args.seed,
    )
    log.info("seeds: search=%d init=%d", cfg.seed, args.seed)
    scorer = search.proxy_scorer(_space_cfg(args), args.seed, args.variant, args.beta)
    res = search.search(cfg, scorer)
    if args.format == "csv":
        _emit(args, search.trace_csv(res.trace))
    else:
        _emit(args, _dump(res.to_json()))
    return EXIT_OK


def cmd_stability(args) -> int:
    mean, std, scores = evaluation.stability(_arch(args.arch), args.draws, args.seed, _space_cfg(args))
    log.info("seeds: init=%d draws=%d", args.seed, args.draws)
    out = {"arch": args.arch, "mean": mean, "std": std, "scores": scores, "seed": args.seed}
    if args.format == "csv":
        _emit(args, "draw,dextr\n" + "".join(f"{i},{s!r}\n" for i, s in enumerate(scores)))
    else:
        _emit(args, _dump(out))
    return EXIT_OK if all(math.isfinite(s) for s in scores) else EXIT_INVALID


def cmd_profile(args) -> int:
    cfg = _space_cfg(args)
    prof = evaluation.layer_profile(_arch(args.arch), _data_sample(args, cfg), cfg, args.seed)
    log.info("seeds: init=%d", args.seed)
    if args.format == "json":
        _emit(args, _dump([{"layer_id": i, "fmi": f} for i, f in prof]))
    else:
        _emit(args, evaluation.profile_csv(prof))
    return EXIT_OK


def cmd_theory(args) -> int:
    cfg = theory.TheoryConfig(
        num_sets=args.sets, m=args.width, n=args.samples, d=args.dim, gamma=args.gamma,
        steps=args.steps, tau=args.tau, seed=args.seed,
    )
    log.info("seeds: theory=%d", args.seed)
    results = []
    if args.experiment in ("convergence", "both"):
        results.append(theory.convergence_experiment(cfg))
    if args.experiment in ("generalisation", "both"):
        results.append(theory.generalisation_experiment(cfg))
    if args.format == "csv":
        _emit(args, _theory_csv(results))
    else:
        _emit(args, _dump({r.kind: r.to_json() for r in results}))
    return EXIT_OK


def _theory_csv(results) -> str:
    lines = []
    for r in results:
        head, *rows = r.to_csv().rstrip("\n").split("\n")
        if not lines:
            lines.append("experiment," + head)
        lines.extend(f"{r.kind},{row}" for row in rows)
    return "\n".join(lines)


def cmd_lemma(args) -> int:
    res = theory.lemma1_check(_space_cfg(args), args.nets, args.seed)
    log.info("seeds: lemma=%d nets=%d", args.seed, args.nets)
    _emit(args, res.to_csv() if args.format == "csv" else _dump(res.to_json()))
    return EXIT_OK


# ---------------------------------------------------------------- parser


def _positive(v: str) -> int:
    try:
        i = int(v)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {v!r}") from None
    if i < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {i}")
    return i


def _nonneg(v: str) -> int:
    i = int(v)
    if i < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {i}")
    return i


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("global")
    g.add_argument("--seed", type=int, default=42, help="master seed (default 42)")
    g.add_argument("--threads", type=_positive, default=1)
    g.add_argument("--stem-channels", type=_positive, default=8)
    g.add_argument("--cells-per-stage", type=_positive, default=1)
    g.add_argument("--output", "-o", help="write the report here instead of stdout")
    g.add_argument("--format", choices=("json", "csv"), default="json")
    g.add_argument("-q", "--quiet", action="store_true", help="suppress the seed/timing log on stderr")

    scoring = argparse.ArgumentParser(add_help=False)
    s = scoring.add_argument_group("scoring")
    s.add_argument("--variant", choices=proxy.VARIANTS, default="dextr")
    s.add_argument("--beta", type=_positive, default=8, help="channels kept per layer for dextr_opt")

    probe = argparse.ArgumentParser(add_help=False)
    p = probe.add_argument_group("inputs")
    p.add_argument("--input", default="random", help="tensor file (.npy or raw) or 'random'")
    p.add_argument("--q", type=float, default=1.0, help="circle radius parameter")
    p.add_argument("--theta", default="random", help="'random' or an angle in radians")

    parser = _Parser(prog="dextr", description="Training-free architecture scoring.")
    parser.add_argument("--version", action="version", version=f"dextr {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sp = sub.add_parser("score", parents=[common, scoring, probe], help="score one cell")
    sp.add_argument("arch")
    sp.add_argument("--layers", action="store_true", help="include per-layer records")
    sp.set_defaults(func=cmd_score)

    sp = sub.add_parser("correlate", parents=[common, scoring], help="Spearman rho against a benchmark table")
    sp.add_argument("benchmark", help="CSV with header encoding,accuracy, or 'sample'")
    sp.add_argument("--runs", type=_positive, default=1)
    sp.set_defaults(func=cmd_correlate)

    sp = sub.add_parser("search", parents=[common, scoring], help="zero-shot search")
    sp.add_argument("--mode", choices=("random", "evolutionary"), default="random")
    sp.add_argument("--budget", type=_positive, default=100)
    sp.add_argument("--population", type=_positive, default=32)
    sp.add_argument("--constraint-params", type=_nonneg)
    sp.add_argument("--constraint-flops", type=_nonneg)
    sp.set_defaults(func=cmd_search)

    sp = sub.add_parser("stability", parents=[common], help="score spread over input draws")
    sp.add_argument("arch")
    sp.add_argument("--draws", type=_positive, default=10)
    sp.set_defaults(func=cmd_stability)

    sp = sub.add_parser("profile", parents=[common, probe], help="per-layer 1/c profile")
    sp.add_argument("arch")
    sp.set_defaults(func=cmd_profile, format=None)

    sp = sub.add_parser("theory", parents=[common], help="two-layer network experiments")
    sp.add_argument("--experiment", choices=("convergence", "generalisation", "both"), default="both")
    sp.add_argument("--sets", type=_positive, default=30)
    sp.add_argument("--width", type=_positive, default=512)
    sp.add_argument("--samples", type=_positive, default=16)
    sp.add_argument("--dim", type=_positive, default=20)
    sp.add_argument("--gamma", type=float, default=0.1)
    sp.add_argument("--steps", type=_positive, default=3000)
    sp.add_argument("--tau", type=float, default=0.1)
    sp.set_defaults(func=cmd_theory)

    sp = sub.add_parser("lemma", aliases=["lemma-check"], parents=[common], help="share of layers with sigma_max >= 1")
    sp.add_argument("--nets", type=_positive, default=100)
    sp.set_defaults(func=cmd_lemma)
    return parser


def _setup_logging(level):
    # own handler so the seed log reaches stderr regardless of root config
    log.handlers.clear()
    h = logging.StreamHandler(sys.stderr)
    h.setFormatter(logging.Formatter("%(name)s: %(message)s"))
    log.addHandler(h)
    log.setLevel(level)
    log.propagate = False


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "profile" and args.format is None:
        args.format = "csv"
    _setup_logging(logging.WARNING if args.quiet else logging.INFO)
    t0 = time.perf_counter()
    try:
        code = args.func(args)
    except UsageError as e:
        print(f"dextr: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, search.NoValidCandidate) as e:
        # data problems surface as ValueError subclasses from the modules
        if isinstance(e, (DataError, evaluation.BenchmarkError, evaluation.UndefinedCorrelation)):
            print(f"dextr: data error: {e}", file=sys.stderr)
            return EXIT_DATA
        if isinstance(e, search.NoValidCandidate):
            print(f"dextr: {e}", file=sys.stderr)
            return EXIT_INVALID
        print(f"dextr: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, theory.TheoryError) as e:
        print(f"dextr: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    log.info("elapsed %.3fs", time.perf_counter() - t0)
    return code


if __name__ == "__main__":
    sys.exit(main())
