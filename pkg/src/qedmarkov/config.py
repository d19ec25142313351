"""Run configuration: JSON schema, defaults, and construction of models and
observables from a config dict."""

import copy
import json

import jsonschema
import numpy as np

from .model import CutoffFn, build_harmonic_model, build_quartic_model, build_spin_model


class ConfigError(ValueError):
    pass


_POS = {"type": "number", "exclusiveMinimum": 0}
_NONNEG = {"type": "number", "minimum": 0}
_POS_LIST = {"type": "array", "items": _POS, "minItems": 1}
_NONNEG_LIST = {"type": "array", "items": _NONNEG, "minItems": 1}


def _obj(props, required=()):
    return {"type": "object", "properties": props, "required": list(required),
            "additionalProperties": False}


OBSERVABLE = _obj({
    "kind": {"enum": ["projector", "pair", "diagonal", "matrix"]},
    "index": {"type": "integer", "minimum": 0},
    "a": {"type": "integer", "minimum": 0},
    "b": {"type": "integer", "minimum": 0},
    "values": {"type": "array", "items": {"type": "number"}},
    "re": {"type": "array", "items": {"type": "array", "items": {"type": "number"}}},
    "im": {"type": "array", "items": {"type": "array", "items": {"type": "number"}}},
}, ["kind"])

SCHEMA = _obj({
    "model": _obj({
        "kind": {"enum": ["harmonic", "quartic", "spin"]},
        "dimension": {"enum": [1, 3]},
        "n_max": {"type": "integer", "minimum": 0},
        "n_basis": {"type": "integer", "minimum": 1},
        "B": _POS,
        "x0": {"type": "array", "items": {"type": "number"}, "minItems": 3, "maxItems": 3},
        "cutoff": _obj({"kind": {"enum": ["gauss", "gauss_vanishing"]}, "scale": _POS}, ["kind"]),
    }, ["kind"]),
    "quadrature": _obj({
        "sphere_order": {"type": "integer", "minimum": 6},
        "kernel_sphere_order": {"type": "integer", "minimum": 2},
        "r_max": _POS,
        "tail_tol": _POS,
    }),
    "fock": _obj({
        "n_max": {"enum": [0, 1, 2]},
        "sphere_order": {"type": "integer", "minimum": 2},
        "min_radial": {"type": "integer", "minimum": 1},
        "dim_cap": {"type": "integer", "minimum": 1},
        "tol": _POS,
    }),
    "experiment": _obj({
        "seed": {"type": "integer", "minimum": 0},
        "observable": OBSERVABLE,
        "populations": _obj({
            "g": _NONNEG,
            "t_grid": _NONNEG_LIST,
            "g2t_max": _POS,
            "n_t": {"type": "integer", "minimum": 2},
            "initial": {"type": "array", "items": {"type": "integer", "minimum": 0}},
        }),
        "convergence": _obj({"g": _NONNEG, "t_grid": _POS_LIST}),
        "residual": _obj({"g_grid": _NONNEG_LIST, "t_grid": _POS_LIST, "fd_step": _POS}),
        "phi": _obj({"s_min": _POS, "s_max": _POS, "n_s": {"type": "integer", "minimum": 2}}),
        "markov_limit": _obj({
            "g_grid": _POS_LIST, "g2t_max": _POS, "n_t": {"type": "integer", "minimum": 2},
            "initial": {"type": "integer", "minimum": 0},
        }),
        "thresholds": _obj({
            "convergence_gauss_max": {"type": "number"},
            "convergence_vanishing_max": {"type": "number"},
            "exponent_gap_min": {"type": "number"},
            "remainder_exponent_min": {"type": "number"},
            "heisenberg_residual_max": _POS,
            "phi_stability_max": _POS,
            "gap_ratio_min": _POS,
        }),
    }),
    "output": _obj({
        "directory": {"type": "string", "minLength": 1},
        "formats": {"type": "array", "items": {"enum": ["csv", "json"]}, "minItems": 1},
    }),
}, ["model"])

DEFAULTS = {
    "model": {"dimension": 3, "n_max": 1, "n_basis": 4, "B": 1.0, "x0": [0.0, 0.0, 0.0],
              "cutoff": {"kind": "gauss", "scale": 1.0}},
    "quadrature": {"sphere_order": 12, "kernel_sphere_order": 12, "tail_tol": 1e-14},
    "fock": {"n_max": 1, "sphere_order": 4, "min_radial": 50, "dim_cap": 200000, "tol": 1e-10},
    "experiment": {
        "seed": 0,
        "observable": {"kind": "pair", "a": 0, "b": 1},
        "populations": {"g": 0.1, "g2t_max": 3.0, "n_t": 31},
        "convergence": {"g": 0.5, "t_grid": [10.0, 17.78279410038923, 31.622776601683793,
                                             56.23413251903491, 100.0, 177.82794100389228,
                                             316.22776601683796, 562.341325190349, 1000.0]},
        "residual": {"g_grid": [0.0, 0.2, 0.1, 0.05, 0.025], "t_grid": [2.0, 5.0, 10.0],
                     "fd_step": 0.01},
        "phi": {"s_min": 1.0, "s_max": 200.0, "n_s": 400},
        "thresholds": {
            "convergence_gauss_max": -0.9,
            "convergence_vanishing_max": -1.9,
            "exponent_gap_min": 0.7,
            "remainder_exponent_min": 2.5,
            "heisenberg_residual_max": 1e-6,
            "phi_stability_max": 0.01,
            "gap_ratio_min": 2.0,
        },
    },
    "output": {"directory": "out", "formats": ["csv", "json"]},
}


def _merge(base, over):
    out = copy.deepcopy(base)
    for key, val in over.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def _line_of(text, path):
    """Best-effort line number of a JSON path: follow the keys in order."""
    pos = 0
    for key in path:
        if isinstance(key, str):
            hit = text.find(json.dumps(key), pos)
            if hit < 0:
                break
            pos = hit
    return text.count("\n", 0, pos) + 1


def parse_config(text):
    """Parse and validate config text; returns the config merged with defaults."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"line {exc.lineno}: invalid JSON: {exc.msg}") from None
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(map(str, e.absolute_path)))
    if errors:
        err = errors[0]
        path = list(err.absolute_path)
        if err.validator == "additionalProperties":
            extra = [k for k in err.instance if k not in err.schema.get("properties", {})]
            path = path + extra[:1]
        where = "/".join(map(str, path)) or "<root>"
        raise ConfigError(f"line {_line_of(text, path)}: {where}: {err.message}")
    cfg = _merge(DEFAULTS, raw)
    _semantic_checks(cfg)
    return cfg


def load_config(path):
    with open(path) as fh:
        return parse_config(fh.read())


def _semantic_checks(cfg):
    m = cfg["model"]
    if m["kind"] == "quartic" and m["dimension"] != 1:
        raise ConfigError("model/dimension: the quartic model is one dimensional")
    for block in ("convergence", "residual"):
        ts = cfg["experiment"][block]["t_grid"]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ConfigError(f"experiment/{block}/t_grid: must be increasing")


def build_model(cfg):
    m = cfg["model"]
    cutoff = CutoffFn(m["cutoff"]["kind"], m["cutoff"].get("scale", 1.0))
    if m["kind"] == "harmonic":
        return build_harmonic_model(m["dimension"], m["n_max"], cutoff)
    if m["kind"] == "quartic":
        return build_quartic_model(1, m["n_basis"], cutoff)
    return build_spin_model(m["B"], tuple(m["x0"]), cutoff)


def build_observable(spec, n):
    """Observable matrix from its config description."""
    kind = spec["kind"]
    X = np.zeros((n, n), dtype=complex)
    if kind == "projector":
        j = spec.get("index", 0)
        _check_index(j, n)
        X[j, j] = 1.0
    elif kind == "pair":
        a, b = spec.get("a", 0), spec.get("b", 1)
        _check_index(a, n)
        _check_index(b, n)
        X[a, b] += 1.0
        X[b, a] += 1.0
    elif kind == "diagonal":
        vals = spec.get("values", [])
        if len(vals) != n:
            raise ConfigError("experiment/observable/values: length must equal the basis size")
        X[np.diag_indices(n)] = vals
    else:
        re = np.array(spec.get("re", []), dtype=float)
        im = np.array(spec.get("im", np.zeros_like(re)), dtype=float)
        if re.shape != (n, n) or im.shape != (n, n):
            raise ConfigError("experiment/observable: matrix must be N x N")
        X = re + 1j * im
    return X


def _check_index(j, n):
    if not 0 <= j < n:
        raise ConfigError(f"experiment/observable: index {j} outside basis of size {n}")


def population_times(pop, g):
    if "t_grid" in pop:
        return np.array(sorted(pop["t_grid"]), dtype=float)
    if g == 0:
        raise ConfigError("experiment/populations: g = 0 needs an explicit t_grid")
    return np.linspace(0.0, pop["g2t_max"] / g**2, pop["n_t"])
