"""Command-line surface.

Subcommands: fit, project, potential, prox-reweight, prox-oracle, denoise,
train, eval.  Exit codes are part of the stable interface: 0 success,
2 malformed input, 3 solver did not converge (result still written),
4 precondition failure, 5 toy-scale limit exceeded.  All randomness flows
from ``--seed`` (default 0); identical inputs and seed give byte-identical
outputs.
"""

import argparse
import json
import sys

import jsonschema
import numpy as np

from . import serialize
from .constraints import SlopeBounds, project_slopes
from .errors import (
    DidNotConverge,
    LambdaOutOfRange,
    NotNondecreasing,
    ScaleTooLarge,
    SplinetoolError,
    WeakConvexityTooLarge,
)
from .fit import SolverConfig, fit
from .potentials import (
    numeric_prox_oracle,
    potential_from_derivative,
    potential_from_prox,
    reweight_prox,
)
from .pwl import Grid, NodalSpline, eval_spline
from .recon import (
    ChannelNonlinearity,
    FilterBank,
    TrainConfig,
    UnrollArch,
    denoising_problem,
    difference_bank,
    haar_bank_2d,
    identity_bank,
    identity_op,
    matrix_op,
    psnr,
    run_prox_grad,
    run_steepest_descent,
    train_unrolled,
    InverseProblem,
)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NO_CONVERGE = 3
EXIT_PRECONDITION = 4
EXIT_SCALE = 5

TRAIN_SCHEMA = {
    "type": "object",
    "properties": {
        "dataset": {
            "type": "object",
            "properties": {
                "pairs": {
                    "type": "array",
                    "items": {
                        "type": "array",
                        "items": {"type": "string"},
                        "minItems": 2,
                        "maxItems": 2,
                    },
                },
                "synthetic": {
                    "type": "object",
                    "properties": {
                        "count": {"type": "integer", "minimum": 1},
                        "shape": {
                            "type": "array",
                            "items": {"type": "integer", "minimum": 1},
                            "minItems": 1,
                            "maxItems": 2,
                        },
                        "noise_sigma": {"type": "number", "minimum": 0},
                    },
                    "required": ["count", "shape", "noise_sigma"],
                    "additionalProperties": False,
                },
            },
            "additionalProperties": False,
        },
        "arch": {
            "type": "object",
            "properties": {
                "bank": {"type": ["string", "object"]},
                "steps": {"type": "integer", "minimum": 1},
                "gamma": {"type": "number"},
                "alphas": {"type": "array", "items": {"type": "number"}},
                "mode": {"enum": ["derivative", "prox"]},
                "profile": serialize.SPLINE_SCHEMA,
                "profile_grid": {"type": "array", "items": {"type": "number"}},
            },
            "required": ["steps", "mode"],
            "additionalProperties": False,
        },
        "opt": {
            "type": "object",
            "properties": {
                "step": {"type": "number"},
                "epochs": {"type": "integer", "minimum": 0},
                "lambda_tv2": {"type": "number", "minimum": 0},
                "bounds": serialize.BOUNDS_SCHEMA,
            },
            "required": ["step", "epochs"],
            "additionalProperties": False,
        },
    },
    "required": ["dataset", "arch", "opt"],
    "additionalProperties": False,
}

DENOISE_SCHEMA = {
    "type": "object",
    "properties": {
        "model": {"type": ["string", "object"]},
        "input": {"type": "string"},
        "iters": {"type": "integer", "minimum": 1},
        "tol": {"type": "number", "exclusiveMinimum": 0},
        "gamma": {"type": "number", "minimum": 0},
        "operator": {
            "type": "object",
            "properties": {
                "kind": {"enum": ["identity", "matrix"]},
                "path": {"type": "string"},
                "lip": {"type": "number", "exclusiveMinimum": 0},
            },
            "required": ["kind"],
            "additionalProperties": False,
        },
    },
    "required": ["model", "input"],
    "additionalProperties": False,
}

EVAL_SCHEMA = {
    "type": "object",
    "properties": {
        "model": {"type": ["string", "object"]},
        "pairs": {
            "type": "array",
            "items": {
                "type": "array",
                "items": {"type": "string"},
                "minItems": 2,
                "maxItems": 2,
            },
            "minItems": 1,
        },
        "iters": {"type": "integer", "minimum": 1},
        "tol": {"type": "number", "exclusiveMinimum": 0},
        "gamma": {"type": "number", "minimum": 0},
        "peak": {"type": "number", "exclusiveMinimum": 0},
        "psnr_csv": {"type": "string"},
        "trace_csv": {"type": "string"},
    },
    "required": ["model", "pairs", "psnr_csv", "trace_csv"],
    "additionalProperties": False,
}


class InputError(Exception):
    pass


def _load_validated(path, schema):
    try:
        obj = serialize.load_json(path)
    except FileNotFoundError as exc:
        raise InputError(f"{path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(
            f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}"
        ) from exc
    try:
        jsonschema.validate(obj, schema)
    except jsonschema.ValidationError as exc:
        raise InputError(f"{path}: field {exc.json_path}: {exc.message}") from exc
    return obj


def _bounds_from_args(args, default=None):
    if args.smin is None and args.smax is None:
        return default
    lo = -np.inf if args.smin is None else args.smin
    hi = np.inf if args.smax is None else args.smax
    return SlopeBounds(lo, hi)


def _write_fit_outputs(result, problem, out_path, plot_csv):
    serialize.dump_json(serialize.result_to_json(result), out_path)
    if plot_csv:
        t = problem.grid.t
        dense = np.union1d(np.linspace(t[0], t[-1], 401), problem.x)
        fitted = eval_spline(result.spline, dense)
        resid = {float(x): float(y - eval_spline(result.spline, x))
                 for x, y in zip(problem.x, problem.y)}
        with open(plot_csv, "w") as fh:
            fh.write("x,fitted,residual\n")
            for x, v in zip(dense, fitted):
                r = resid.get(float(x))
                fh.write(
                    format(x, ".17g")
                    + ","
                    + format(v, ".17g")
                    + ","
                    + (format(r, ".17g") if r is not None else "nan")
                    + "\n"
                )


def cmd_fit(args) -> int:
    obj = _load_validated(args.problem, serialize.PROBLEM_SCHEMA)
    try:
        problem, config = serialize.problem_from_json(obj)
        if args.lam is not None or args.smin is not None or args.smax is not None:
            from .fit import make_problem

            bounds = SlopeBounds(
                problem.bounds.s_min if args.smin is None else args.smin,
                problem.bounds.s_max if args.smax is None else args.smax,
            )
            problem = make_problem(
                np.column_stack((problem.x, problem.y)),
                grid=problem.grid,
                lam=problem.lam if args.lam is None else args.lam,
                bounds=bounds,
            )
        if args.tol is not None or args.max_iters is not None:
            config = SolverConfig(
                tol=config.tol if args.tol is None else args.tol,
                max_iters=config.max_iters if args.max_iters is None else args.max_iters,
            )
    except (SplinetoolError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    try:
        result = fit(problem, config)
    except DidNotConverge as exc:
        _write_fit_outputs(exc.result, problem, args.out, args.plot_csv)
        print(f"warning: {exc}", file=sys.stderr)
        return EXIT_NO_CONVERGE
    _write_fit_outputs(result, problem, args.out, args.plot_csv)
    return EXIT_OK


def cmd_project(args) -> int:
    obj = _load_validated(args.spline, serialize.SPLINE_SCHEMA)
    try:
        spline = serialize.spline_from_json(obj)
        bounds = _bounds_from_args(args, SlopeBounds())
    except (SplinetoolError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    projected = project_slopes(spline, bounds)
    serialize.dump_json(serialize.spline_to_json(projected), args.out)
    return EXIT_OK


def cmd_potential(args) -> int:
    obj = _load_validated(args.spline, serialize.SPLINE_SCHEMA)
    try:
        spline = serialize.spline_from_json(obj)
    except (SplinetoolError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    try:
        if args.mode == "derivative":
            potential = potential_from_derivative(spline)
        else:
            potential = potential_from_prox(spline)
    except (NotNondecreasing, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    serialize.dump_json(serialize.potential_to_json(potential), args.out)
    return EXIT_OK


def cmd_prox_reweight(args) -> int:
    obj = _load_validated(args.curve, serialize.CURVE_SCHEMA)
    try:
        curve = serialize.curve_from_json(obj)
    except (SplinetoolError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    try:
        out = reweight_prox(curve, args.lam)
    except (LambdaOutOfRange, NotNondecreasing) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    serialize.dump_json(serialize.curve_to_json(out), args.out)
    return EXIT_OK


def cmd_prox_oracle(args) -> int:
    obj = _load_validated(args.potential, serialize.POTENTIAL_SCHEMA)
    try:
        potential = serialize.potential_from_json(obj)
    except (SplinetoolError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    try:
        values = [
            numeric_prox_oracle(
                potential, x, search_halfwidth=args.halfwidth, grid_step=args.grid_step
            )
            for x in args.x
        ]
    except WeakConvexityTooLarge as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    serialize.dump_json({"x": list(args.x), "prox": values}, args.out)
    return EXIT_OK


def _resolve_model(entry):
    if isinstance(entry, str):
        obj = _load_validated(entry, serialize.MODEL_SCHEMA)
    else:
        try:
            jsonschema.validate(entry, serialize.MODEL_SCHEMA)
        except jsonschema.ValidationError as exc:
            raise InputError(f"model: field {exc.json_path}: {exc.message}") from exc
        obj = entry
    return serialize.model_from_json(obj)


def _resolve_operator(entry, signal_shape):
    if entry is None or entry["kind"] == "identity":
        return identity_op(), 1.0
    mat = np.load(entry["path"], allow_pickle=False)
    lip = entry.get("lip", float(np.linalg.norm(mat, 2) ** 2))
    return matrix_op(mat), lip


def cmd_denoise(args) -> int:
    cfg = _load_validated(args.config, DENOISE_SCHEMA)
    try:
        bank, nl = _resolve_model(cfg["model"])
        signal = serialize.load_signal(cfg["input"])
        op, lip = _resolve_operator(cfg.get("operator"), signal.shape)
    except (SplinetoolError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    gamma = cfg.get("gamma", args.gamma if args.gamma is not None else 0.5)
    iters = cfg.get("iters", args.max_iters or 200)
    tol = cfg.get("tol", args.tol or 1e-10)
    problem = InverseProblem(y=signal, op=op, lip=lip, gamma=gamma)
    if nl.mode == "derivative":
        out = run_steepest_descent(problem, bank, nl, iters=iters, tol=tol).x
    else:
        out = run_prox_grad(problem, bank, nl, iters=iters, tol=tol).x
    serialize.save_signal(args.out, out)
    return EXIT_OK


def _make_bank(entry):
    if isinstance(entry, str):
        factory = {
            "difference-1d": lambda: difference_bank(1),
            "difference-2d": lambda: difference_bank(2),
            "haar-2d": haar_bank_2d,
            "identity-1d": lambda: identity_bank(1),
            "identity-2d": lambda: identity_bank(2),
        }.get(entry)
        if factory is None:
            raise InputError(f"unknown bank kind {entry!r}")
        return factory()
    return FilterBank(
        tuple(np.array(k, dtype=float) for k in entry["filters"]),
        spectral_norm_bound=float(entry["spectral_norm_bound"]),
        boundary=entry.get("boundary", "wrap"),
    )


def _synthetic_pairs(entry, rng):
    shape = tuple(entry["shape"])
    pairs = []
    for _ in range(entry["count"]):
        base = rng.uniform(-1.0, 1.0)
        ramp = np.zeros(shape)
        if ramp.ndim == 1:
            ramp += np.linspace(-0.5, 0.5, shape[0]) * rng.uniform(-1, 1)
        else:
            ramp += np.linspace(-0.5, 0.5, shape[0])[:, None] * rng.uniform(-1, 1)
            ramp += np.linspace(-0.5, 0.5, shape[1])[None, :] * rng.uniform(-1, 1)
        clean = base + ramp
        noisy = clean + entry["noise_sigma"] * rng.standard_normal(shape)
        pairs.append((clean, noisy))
    return pairs


def cmd_train(args) -> int:
    cfg = _load_validated(args.config, TRAIN_SCHEMA)
    rng = np.random.default_rng(args.seed)
    try:
        dataset_cfg = cfg["dataset"]
        if "pairs" in dataset_cfg:
            dataset = [
                (serialize.load_signal(c), serialize.load_signal(n))
                for c, n in dataset_cfg["pairs"]
            ]
        elif "synthetic" in dataset_cfg:
            dataset = _synthetic_pairs(dataset_cfg["synthetic"], rng)
        else:
            raise InputError("dataset needs 'pairs' or 'synthetic'")
        arch_cfg = cfg["arch"]
        bank = _make_bank(arch_cfg.get("bank", "difference-1d"))
        if "profile" in arch_cfg:
            profile = serialize.spline_from_json(arch_cfg["profile"])
        else:
            grid = Grid(np.array(arch_cfg.get("profile_grid", np.linspace(-2, 2, 21))))
            profile = NodalSpline(grid, np.zeros(grid.n))
        alphas = np.array(arch_cfg.get("alphas", np.ones(bank.n_channels)))
        nl = ChannelNonlinearity(profile=profile, alphas=alphas, mode=arch_cfg["mode"])
        arch = UnrollArch(
            bank=bank, nl=nl, steps=arch_cfg["steps"], gamma=arch_cfg.get("gamma", 0.5)
        )
        opt_cfg = cfg["opt"]
        opt = TrainConfig(
            step=opt_cfg["step"],
            epochs=opt_cfg["epochs"],
            lambda_tv2=opt_cfg.get("lambda_tv2", 0.0),
            bounds=(
                serialize.bounds_from_json(opt_cfg["bounds"])
                if "bounds" in opt_cfg
                else None
            ),
        )
    except (SplinetoolError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    try:
        result = train_unrolled(dataset, arch, opt)
    except ScaleTooLarge as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCALE
    for epoch, loss in enumerate(result.losses[:-1]):
        print(f"epoch {epoch}: loss {loss:.17g}")
    print(f"final: loss {result.losses[-1]:.17g}")
    serialize.dump_json(serialize.model_to_json(result.bank, result.nl), args.out)
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _load_validated(args.config, EVAL_SCHEMA)
    try:
        bank, nl = _resolve_model(cfg["model"])
        pairs = [
            (serialize.load_signal(ref), serialize.load_signal(noisy))
            for ref, noisy in cfg["pairs"]
        ]
    except (SplinetoolError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    peak = cfg.get("peak", 1.0)
    gamma = cfg.get("gamma", 0.5)
    iters = cfg.get("iters", 200)
    tol = cfg.get("tol", 1e-10)
    rows = []
    traces = []
    for ref, noisy in pairs:
        problem = denoising_problem(noisy, gamma)
        if nl.mode == "derivative":
            res = run_steepest_descent(problem, bank, nl, iters=iters, tol=tol)
            estimate, trace = res.x, res.trace
        else:
            res = run_prox_grad(problem, bank, nl, iters=iters, tol=tol)
            estimate, trace = res.x, res.residuals
        rows.append((psnr(ref, noisy, peak), psnr(ref, estimate, peak)))
        traces.append(trace)
    with open(cfg["psnr_csv"], "w") as fh:
        fh.write("image,psnr_in,psnr_out\n")
        for i, (p_in, p_out) in enumerate(rows):
            fh.write(f"{i},{format(p_in, '.17g')},{format(p_out, '.17g')}\n")
    with open(cfg["trace_csv"], "w") as fh:
        fh.write("image,step,value\n")
        for i, trace in enumerate(traces):
            for k, v in enumerate(trace):
                fh.write(f"{i},{k},{format(v, '.17g')}\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="splinetool",
        description="Slope-constrained adaptive linear splines: fitting, "
        "potentials, proximal maps, and toy reconstruction.",
    )
    parser.add_argument("--seed", type=int, default=0, help="seed for all randomness")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="solve a penalized spline-fitting problem")
    p.add_argument("problem", help="problem JSON")
    p.add_argument("--out", required=True, help="result JSON path")
    p.add_argument("--plot-csv", default=None, help="dense fit CSV for plotting")
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    p.add_argument("--smin", type=float, default=None)
    p.add_argument("--smax", type=float, default=None)
    p.add_argument("--tol", type=float, default=None)
    p.add_argument("--max-iters", type=int, default=None)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("project", help="clip a spline's slopes into a box")
    p.add_argument("spline", help="spline JSON")
    p.add_argument("--out", required=True)
    p.add_argument("--smin", type=float, default=None)
    p.add_argument("--smax", type=float, default=None)
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("potential", help="potential whose derivative or prox is the spline")
    p.add_argument("spline", help="spline JSON")
    p.add_argument("--mode", choices=["derivative", "prox"], required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_potential)

    p = sub.add_parser("prox-reweight", help="reweight a proximal curve")
    p.add_argument("curve", help="curve JSON")
    p.add_argument("--lambda", dest="lam", type=float, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_prox_reweight)

    p = sub.add_parser("prox-oracle", help="brute-force prox of a potential")
    p.add_argument("potential", help="potential JSON")
    p.add_argument("--x", type=float, action="append", required=True)
    p.add_argument("--grid-step", type=float, default=1e-4)
    p.add_argument("--halfwidth", type=float, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_prox_oracle)

    p = sub.add_parser("denoise", help="run a model bundle on a signal")
    p.add_argument("config", help="denoise config JSON")
    p.add_argument("--out", required=True, help="output signal path")
    p.add_argument("--tol", type=float, default=None)
    p.add_argument("--max-iters", type=int, default=None)
    p.add_argument("--gamma", type=float, default=None)
    p.set_defaults(func=cmd_denoise)

    p = sub.add_parser("train", help="train a toy unrolled denoiser")
    p.add_argument("config", help="train config JSON")
    p.add_argument("--out", required=True, help="model bundle JSON path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="PSNR table and trace CSVs for a model")
    p.add_argument("config", help="eval config JSON")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ScaleTooLarge as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCALE


if __name__ == "__main__":
    sys.exit(main())
