"""JSON persistence for all shared data types, plus signal file IO.

Schemas are enforced with ``jsonschema`` before any decoding work; the
decoders then run the ordinary constructors so semantic invariants
(monotone grids, valid bounds, consistent potentials) are re-checked on
load.  Signals travel either as ``.npy`` or as CSV with a shape header
line (``# shape: 32,32``) and full-precision values.
"""

import json

import numpy as np

from .constraints import SlopeBounds
from .fit import FitProblem, FitResult, SolverConfig, make_problem
from .potentials import Convexity, PwQuadPotential
from .pwl import Grid, NodalSpline, PwlCurve
from .recon import ChannelNonlinearity, FilterBank

_NUMBER_ARRAY = {"type": "array", "items": {"type": "number"}}
_POINT = {
    "type": "array",
    "items": {"type": "number"},
    "minItems": 2,
    "maxItems": 2,
}

SPLINE_SCHEMA = {
    "type": "object",
    "properties": {
        "t": {**_NUMBER_ARRAY, "minItems": 2},
        "f": {**_NUMBER_ARRAY, "minItems": 2},
        "meta": {"type": "object", "additionalProperties": {"type": "string"}},
    },
    "required": ["t", "f"],
    "additionalProperties": False,
}

CURVE_SCHEMA = {
    "type": "object",
    "properties": {"points": {"type": "array", "items": _POINT, "minItems": 2}},
    "required": ["points"],
    "additionalProperties": False,
}

BOUNDS_SCHEMA = {
    "type": "object",
    "properties": {
        "s_min": {"oneOf": [{"type": "number"}, {"const": "-inf"}]},
        "s_max": {"oneOf": [{"type": "number"}, {"const": "+inf"}]},
    },
    "additionalProperties": False,
}

POTENTIAL_SCHEMA = {
    "type": "object",
    "properties": {
        "breakpoints": _NUMBER_ARRAY,
        "pieces": {
            "type": "array",
            "items": {
                "type": "array",
                "items": {"type": "number"},
                "minItems": 3,
                "maxItems": 3,
            },
            "minItems": 1,
        },
        "convexity": {
            "type": "object",
            "properties": {
                "kind": {"enum": ["convex", "weak", "strong"]},
                "rho": {"type": "number", "minimum": 0},
            },
            "required": ["kind"],
            "additionalProperties": False,
        },
    },
    "required": ["breakpoints", "pieces", "convexity"],
    "additionalProperties": False,
}

PROBLEM_SCHEMA = {
    "type": "object",
    "properties": {
        "data": {"type": "array", "items": _POINT, "minItems": 1},
        "grid": {"oneOf": [{**_NUMBER_ARRAY, "minItems": 2}, {"type": "null"}]},
        "lambda": {"type": "number", "minimum": 0},
        "bounds": BOUNDS_SCHEMA,
        "solver": {
            "type": "object",
            "properties": {
                "tol": {"type": "number", "exclusiveMinimum": 0},
                "max_iters": {"type": "integer", "minimum": 1},
            },
            "additionalProperties": False,
        },
    },
    "required": ["data", "lambda"],
    "additionalProperties": False,
}

MODEL_SCHEMA = {
    "type": "object",
    "properties": {
        "bank": {
            "type": "object",
            "properties": {
                "filters": {"type": "array", "minItems": 1},
                "boundary": {"enum": ["wrap", "reflect"]},
                "spectral_norm_bound": {"type": "number", "exclusiveMinimum": 0},
            },
            "required": ["filters", "spectral_norm_bound"],
            "additionalProperties": False,
        },
        "profile": SPLINE_SCHEMA,
        "alphas": {**_NUMBER_ARRAY, "minItems": 1},
        "mode": {"enum": ["derivative", "prox"]},
    },
    "required": ["bank", "profile", "alphas", "mode"],
    "additionalProperties": False,
}


def spline_to_json(spline: NodalSpline) -> dict:
    out = {"t": spline.grid.t.tolist(), "f": spline.f.tolist()}
    if spline.meta:
        out["meta"] = dict(spline.meta)
    return out


def spline_from_json(obj) -> NodalSpline:
    return NodalSpline(Grid(np.array(obj["t"])), np.array(obj["f"]), dict(obj.get("meta", {})))


def curve_to_json(curve: PwlCurve) -> dict:
    return {"points": curve.points.tolist()}


def curve_from_json(obj) -> PwlCurve:
    return PwlCurve(np.array(obj["points"], dtype=float))


def bounds_to_json(bounds: SlopeBounds) -> dict:
    return {
        "s_min": "-inf" if np.isneginf(bounds.s_min) else bounds.s_min,
        "s_max": "+inf" if np.isposinf(bounds.s_max) else bounds.s_max,
    }


def bounds_from_json(obj) -> SlopeBounds:
    lo = obj.get("s_min", "-inf")
    hi = obj.get("s_max", "+inf")
    return SlopeBounds(
        s_min=-np.inf if lo == "-inf" else float(lo),
        s_max=np.inf if hi == "+inf" else float(hi),
    )


def potential_to_json(potential: PwQuadPotential) -> dict:
    return {
        "breakpoints": potential.breakpoints.tolist(),
        "pieces": potential.pieces.tolist(),
        "convexity": {
            "kind": potential.convexity.kind,
            "rho": potential.convexity.rho,
        },
    }


def _derivative_curve_from_pieces(bp, pieces) -> PwlCurve:
    """Piecewise-linear derivative implied by the quadratic pieces."""
    c, b, a = pieces.T
    if bp.size == 0:
        return PwlCurve(np.array([[-1.0, b[0] - a[0]], [1.0, b[0] + a[0]]]))
    pts = [(bp[0] - 1.0, b[0] + a[0] * (bp[0] - 1.0))]
    for j, beta in enumerate(bp):
        lower = b[j] + a[j] * beta
        upper = b[j + 1] + a[j + 1] * beta
        pts.append((beta, lower))
        if upper != lower:
            pts.append((beta, upper))
    pts.append((bp[-1] + 1.0, b[-1] + a[-1] * (bp[-1] + 1.0)))
    return PwlCurve(np.array(pts))


def potential_from_json(obj) -> PwQuadPotential:
    bp = np.array(obj["breakpoints"], dtype=float)
    pieces = np.array(obj["pieces"], dtype=float)
    conv = Convexity(obj["convexity"]["kind"], float(obj["convexity"].get("rho", 0.0)))
    return PwQuadPotential(bp, pieces, _derivative_curve_from_pieces(bp, pieces), conv)


def problem_to_json(problem: FitProblem, config: SolverConfig | None = None) -> dict:
    out = {
        "data": np.column_stack((problem.x, problem.y)).tolist(),
        "grid": problem.grid.t.tolist(),
        "lambda": problem.lam,
        "bounds": bounds_to_json(problem.bounds),
    }
    if config is not None:
        out["solver"] = {"tol": config.tol, "max_iters": config.max_iters}
    return out


def problem_from_json(obj) -> tuple[FitProblem, SolverConfig]:
    bounds = bounds_from_json(obj.get("bounds", {}))
    problem = make_problem(
        np.array(obj["data"], dtype=float),
        grid=None if obj.get("grid") is None else np.array(obj["grid"], dtype=float),
        lam=float(obj["lambda"]),
        bounds=bounds,
    )
    solver = obj.get("solver", {})
    config = SolverConfig(
        tol=float(solver.get("tol", SolverConfig.tol)),
        max_iters=int(solver.get("max_iters", SolverConfig.max_iters)),
    )
    return problem, config


def result_to_json(result: FitResult) -> dict:
    return {
        "spline": spline_to_json(result.spline),
        "objective": result.objective,
        "data_term": result.data_term,
        "reg_term": result.reg_term,
        "max_slope_violation": result.max_slope_violation,
        "optimality_residual": result.optimality_residual,
        "iterations": result.iterations,
    }


def model_to_json(bank: FilterBank, nl: ChannelNonlinearity) -> dict:
    return {
        "bank": {
            "filters": [k.tolist() for k in bank.filters],
            "boundary": bank.boundary,
            "spectral_norm_bound": bank.spectral_norm_bound,
        },
        "profile": spline_to_json(nl.profile),
        "alphas": nl.alphas.tolist(),
        "mode": nl.mode,
    }


def model_from_json(obj) -> tuple[FilterBank, ChannelNonlinearity]:
    bank_obj = obj["bank"]
    bank = FilterBank(
        tuple(np.array(k, dtype=float) for k in bank_obj["filters"]),
        spectral_norm_bound=float(bank_obj["spectral_norm_bound"]),
        boundary=bank_obj.get("boundary", "wrap"),
    )
    nl = ChannelNonlinearity(
        profile=spline_from_json(obj["profile"]),
        alphas=np.array(obj["alphas"], dtype=float),
        mode=obj["mode"],
    )
    if bank.n_channels != nl.n_channels:
        raise ValueError("bank and alphas disagree on the channel count")
    return bank, nl


def dump_json(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_json(path):
    with open(path) as fh:
        return json.load(fh)


# ---------------------------------------------------------------------------
# signals


def save_signal(path, arr):
    """Write a signal as ``.npy`` or as CSV with a shape header."""
    arr = np.asarray(arr, dtype=float)
    path = str(path)
    if path.endswith(".npy"):
        np.save(path, arr)
        return
    with open(path, "w") as fh:
        fh.write("# shape: " + ",".join(str(s) for s in arr.shape) + "\n")
        for row in np.atleast_2d(arr):
            fh.write(",".join(format(v, ".17g") for v in row) + "\n")


def load_signal(path):
    path = str(path)
    if path.endswith(".npy"):
        return np.load(path, allow_pickle=False)
    with open(path) as fh:
        header = fh.readline()
        if not header.startswith("# shape:"):
            raise ValueError(f"{path}: missing '# shape:' header")
        shape = tuple(int(s) for s in header.split(":", 1)[1].split(","))
        values = [
            [float(v) for v in line.split(",")]
            for line in fh
            if line.strip()
        ]
    return np.array(values, dtype=float).reshape(shape)
