"""Command-line front end: simulate, gradcheck, identify, compare.

Exit codes: 0 success, 1 usage error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import re
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .benchmarks import BALLS_TRUTH, CAUER_TRUTH, generate_synthetic_data, make_model
from .errors import HybridDAEError, InvalidArgumentError, NumericalFailure, SetupError
from .io import read_targets, sidecar_path, write_history, write_json, write_trajectory
from .optim import IdentifyConfig, compare_methods, log_uniform_bias, run_identify
from .simulator import SimConfig, simulate
from .targets import BlendConfig

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2

# sub-sampled event checks guard against missed crossings on ballistic arcs
EVENT_SAMPLES = {"balls": 4, "cauer": 1}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


def _positive(kind):
    def conv(s):
        try:
            v = kind(s)
        except ValueError:
            raise argparse.ArgumentTypeError(f"invalid {kind.__name__} value: {s!r}")
        if not v > 0:
            raise argparse.ArgumentTypeError(f"must be positive: {s!r}")
        return v

    conv.__name__ = kind.__name__
    return conv


def _nonneg(kind):
    def conv(s):
        try:
            v = kind(s)
        except ValueError:
            raise argparse.ArgumentTypeError(f"invalid {kind.__name__} value: {s!r}")
        if v < 0:
            raise argparse.ArgumentTypeError(f"must be non-negative: {s!r}")
        return v

    conv.__name__ = kind.__name__
    return conv


def _seed_range(s):
    m = re.fullmatch(r"(\d+)\.\.(\d+)", s)
    if not m or int(m.group(1)) > int(m.group(2)):
        raise argparse.ArgumentTypeError(f"expected a..b with a <= b, got {s!r}")
    return list(range(int(m.group(1)), int(m.group(2)) + 1))


def _param_list(s):
    try:
        v = [float(t) for t in s.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {s!r}")
    if not all(x > 0 for x in v):
        raise argparse.ArgumentTypeError("parameters must be positive")
    return v


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = _Parser(prog="hybrid-dae", description=__doc__.splitlines()[0], formatter_class=fmt)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, out_default):
        p.add_argument("--model", choices=("cauer", "balls"), required=True, help="benchmark model")
        p.add_argument("--n-balls", type=_positive(int), default=1, help="number of balls (balls model)")
        p.add_argument("--t1", type=_positive(float), default=None, help="horizon (model default when omitted)")
        p.add_argument("--seed", type=_nonneg(int), default=0, help="seed for layout, bias and noise")
        p.add_argument("--rtol", type=_positive(float), default=1e-8, help="integrator relative tolerance")
        p.add_argument("--atol", type=_positive(float), default=1e-8, help="integrator absolute tolerance")
        p.add_argument("--k-max", type=_positive(int), default=64, help="maximum number of segments")
        p.add_argument("--event-samples", type=_positive(int), default=None,
                       help="guard checks per step (4 for balls, 1 for cauer when omitted)")
        p.add_argument("--out", required=True, metavar=out_default.upper().replace(".", "_"),
                       default=argparse.SUPPRESS, help="output path (required)")

    def data_opts(p):
        p.add_argument("--targets", type=_positive(int), default=500, help="number of uniform target times")
        p.add_argument("--noise", type=_nonneg(float), default=0.0, help="Gaussian noise std of synthetic data")
        p.add_argument("--data", default=None, help="target CSV (t, y* columns) instead of synthetic data")
        p.add_argument("--bias", type=_nonneg(float), default=0.1, help="log-uniform half-width of the start bias")
        p.add_argument("--nodes", type=_positive(int), default=33, help="adjoint nodes per segment")

    p = sub.add_parser("simulate", help="simulate and write a trajectory CSV", formatter_class=fmt)
    common(p, "traj.csv")
    p.add_argument("--params", type=_param_list, default=None, help="comma-separated parameters (truth when omitted)")

    p = sub.add_parser("gradcheck", help="forward, adjoint and FD gradients at one point", formatter_class=fmt)
    common(p, "report.json")
    data_opts(p)
    p.add_argument("--method", choices=("fwd", "adjoint", "both"), default="both", help="route under test")
    p.add_argument("--blend", choices=("hard", "soft"), default="hard", help="target evaluation mode")
    p.add_argument("--beta", type=_positive(float), default=150.0, help="soft blend sharpness")
    p.add_argument("--eps-rel", type=_positive(float), default=1e-6, help="relative FD step")

    p = sub.add_parser("identify", help="Adam identification from a biased start", formatter_class=fmt)
    common(p, "run.json")
    data_opts(p)
    p.add_argument("--method", choices=("fwd", "adjoint"), default="fwd", help="gradient route")
    p.add_argument("--iters", type=_nonneg(int), default=500, help="Adam iterations")
    p.add_argument("--lr", type=_positive(float), default=1e-2, help="Adam step size")
    p.add_argument("--beta", type=_positive(float), default=150.0, help="soft blend sharpness for training")
    p.add_argument("--blend", choices=("hard", "soft"), default="soft", help="training loss selection mode")
    p.add_argument("--grad-tol", type=_nonneg(float), default=0.0, help="stop when max |grad| falls below")
    p.add_argument("--seeds", type=_seed_range, default=None, help="run seeds a..b concurrently")
    p.add_argument("--workers", type=_positive(int), default=4, help="threads for --seeds")

    p = sub.add_parser("compare", help="identify with both routes from the same start", formatter_class=fmt)
    common(p, "compare.json")
    data_opts(p)
    p.add_argument("--iters", type=_nonneg(int), default=500, help="Adam iterations")
    p.add_argument("--lr", type=_positive(float), default=1e-2, help="Adam step size")
    p.add_argument("--beta", type=_positive(float), default=150.0, help="soft blend sharpness for training")
    return parser


# -- helpers --------------------------------------------------------------------------


def _truth(model_name):
    return CAUER_TRUTH if model_name == "cauer" else BALLS_TRUTH


def _sim_config(a) -> SimConfig:
    es = a.event_samples if a.event_samples is not None else EVENT_SAMPLES[a.model]
    return SimConfig(K_max=a.k_max, rtol=a.rtol, atol=a.atol, event_samples=es)


def _model(a, seed: Optional[int] = None):
    return make_model(a.model, n_balls=a.n_balls, seed=a.seed if seed is None else seed, T=a.t1)


def _targets(a, model, seed):
    if a.data:
        try:
            return read_targets(a.data)
        except OSError as exc:
            raise InvalidArgumentError(f"cannot read {a.data}: {exc}") from exc
    return generate_synthetic_data(model, _truth(a.model), a.targets, a.noise, seed, _sim_config(a))


def _identify_config(a, method) -> IdentifyConfig:
    sc = _sim_config(a)
    return IdentifyConfig(method=method, iters=a.iters, lr=a.lr, beta=a.beta, grad_tol=getattr(a, "grad_tol", 0.0),
                          n_nodes=a.nodes, rtol=a.rtol, atol=a.atol, K_max=a.k_max, event_samples=sc.event_samples,
                          blend_mode=getattr(a, "blend", "soft"))


def _run_record(a, model, run, truth):
    rec = run.to_json()
    rec["model"] = {"name": a.model, "n_balls": a.n_balls, "T": model.T}
    best = np.asarray(run.best["p_opt"])
    rec["best"]["rel_error"] = list(np.abs(best - truth) / np.abs(truth))
    return rec


# -- commands -------------------------------------------------------------------------


def cmd_simulate(a) -> int:
    model = _model(a)
    p_opt = _truth(a.model) if a.params is None else np.asarray(a.params)
    if len(p_opt) != model.dims.n_opt:
        raise InvalidArgumentError(f"--params needs {model.dims.n_opt} values, got {len(p_opt)}")
    traj = simulate(model, model.full_params(p_opt), None, _sim_config(a))
    side = write_trajectory(a.out, model, traj)
    print(f"wrote {a.out} and {side}: {traj.n_events} events, saturated={traj.saturated}")
    for w in traj.warnings:
        print(f"warning: {w}", file=sys.stderr)
    return EXIT_OK


def cmd_gradcheck(a) -> int:
    model = _model(a)
    targets = _targets(a, model, a.seed)
    p0 = log_uniform_bias(_truth(a.model), a.bias, a.seed)
    blend = BlendConfig(a.blend, a.beta)
    tab = compare_methods(model, p0, targets, _sim_config(a), blend, a.nodes, a.eps_rel)
    rec = tab.to_json()
    rec.update({"method": a.method, "p_opt": p0, "blend": a.blend, "model": a.model})
    write_json(a.out, rec)
    for r in tab.rows():
        print(f"{r['param']:>4}  fwd={r['fwd']: .10e}  adjoint={r['adjoint']: .10e}  fd={r['fd']: .10e}"
              f"{'  [event-count flag]' if r['event_count_flag'] else ''}")
    return EXIT_OK


def _one_identify(a, method, seed, out: Path):
    model = _model(a, seed)
    targets = _targets(a, model, seed)
    truth = _truth(a.model)
    p0 = log_uniform_bias(truth, a.bias, seed)
    run = run_identify(model, targets, p0, _identify_config(a, method))
    rec = _run_record(a, model, run, truth)
    rec["seed"] = seed
    write_history(sidecar_path(out, ".history.csv"), run)
    write_json(out, rec)
    return rec


def cmd_identify(a) -> int:
    out = Path(a.out)
    if a.seeds is None:
        rec = _one_identify(a, a.method, a.seed, out)
        print(f"stop={rec['stop_reason']} best eval loss {rec['best']['eval_loss']:.6e} at iter {rec['best']['iter']}")
        return EXIT_OK
    outs = {s: out.with_name(f"{out.stem}.seed{s}{out.suffix}") for s in a.seeds}
    with ThreadPoolExecutor(max_workers=a.workers) as pool:
        futures = {s: pool.submit(_one_identify, a, a.method, s, outs[s]) for s in a.seeds}
        recs = {s: f.result() for s, f in futures.items()}
    summary = {"seeds": a.seeds, "runs": [{"seed": s, "path": str(outs[s]), "best": recs[s]["best"],
                                           "stop_reason": recs[s]["stop_reason"]} for s in a.seeds]}
    write_json(out, summary)
    for s in a.seeds:
        print(f"seed {s}: best eval loss {recs[s]['best']['eval_loss']:.6e}")
    return EXIT_OK


def cmd_compare(a) -> int:
    out = Path(a.out)
    summary = {"model": a.model, "seed": a.seed, "routes": {}}
    for method in ("fwd", "adjoint"):
        t0 = time.perf_counter()
        rec = _one_identify(a, method, a.seed, out.with_name(f"{out.stem}.{method}{out.suffix}"))
        summary["routes"][method] = {"initial_eval_loss": rec["iterates"][0]["eval_loss"],
                                     "best": rec["best"], "stop_reason": rec["stop_reason"],
                                     "wall_s": time.perf_counter() - t0}
    write_json(out, summary)
    for m, r in summary["routes"].items():
        print(f"{m:>7}: eval loss {r['initial_eval_loss']:.3e} -> {r['best']['eval_loss']:.3e} in {r['wall_s']:.1f} s")
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "gradcheck": cmd_gradcheck, "identify": cmd_identify, "compare": cmd_compare}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args)
    except InvalidArgumentError as exc:
        print(f"usage error: {exc.describe()}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalFailure, SetupError) as exc:
        print(f"numerical failure: {exc.describe()}", file=sys.stderr)
        return EXIT_NUMERIC
    except HybridDAEError as exc:
        print(f"error: {exc.describe()}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
