"""Command line interface.

    qedmarkov rates    --config run.json
    qedmarkov evolve   --config run.json
    qedmarkov validate --config run.json [--dry-run]
    qedmarkov dry-run  --config run.json

Exit codes: 0 success, 1 a configured threshold (or structural check) failed,
2 bad config, 3 numerical failure. QEDMARKOV_THREADS caps BLAS threads.
"""

import argparse
import csv
import io
import json
import os
import sys
import tempfile

import numpy as np
from threadpoolctl import threadpool_limits

from . import harness
from ._hermite import QuadratureError
from .config import ConfigError, build_model, build_observable, load_config, population_times
from .fock import PropagationError
from .lindblad import RadialKernel, RateStructureError, eval_phi, transition_rate_matrix
from .model import ConvergenceError, ModelError

# FockDimensionError is a ModelError: an oversized request is a config problem (exit 2)
NUMERICAL_ERRORS = (ConvergenceError, QuadratureError, RateStructureError, PropagationError,
                    harness.FiniteDifferenceError, np.linalg.LinAlgError)

REPORT_SCHEMA = {
    "type": "object",
    "required": ["config_hash", "model", "checks", "passed", "failed"],
    "properties": {
        "config_hash": {"type": "string"},
        "model": {"type": "string"},
        "passed": {"type": "boolean"},
        "failed": {"type": "array", "items": {"type": "string"}},
        "checks": {
            "type": "object",
            "additionalProperties": {
                "type": "object",
                "required": ["value", "threshold", "pass"],
                "properties": {"value": {"type": "number"}, "threshold": {"type": "number"},
                               "pass": {"type": "boolean"}},
            },
        },
    },
}


def _dump_json(obj):
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return buf.getvalue()


def write_outputs(directory, files):
    """Write every file to a temp name first, then rename; nothing is left
    behind if any write fails."""
    os.makedirs(directory, exist_ok=True)
    staged = []
    try:
        for name, text in files.items():
            fd, tmp = tempfile.mkstemp(dir=directory, prefix=f".{name}.")
            with os.fdopen(fd, "w") as fh:
                fh.write(text)
            staged.append((tmp, os.path.join(directory, name)))
    except BaseException:
        for tmp, _ in staged:
            os.unlink(tmp)
        raise
    for tmp, final in staged:
        os.replace(tmp, final)


def _wanted(cfg, files):
    fmts = set(cfg["output"]["formats"])
    return {k: v for k, v in files.items() if k.rsplit(".", 1)[-1] in fmts}


# -- rates --------------------------------------------------------------------

def structure_checks(rate):
    M, mu = rate.M, rate.energies
    up = mu[None, :] > mu[:, None]
    lower = mu[None, :] < mu[:, None]
    degen = (mu[None, :] == mu[:, None]) & ~np.eye(len(mu), dtype=bool)
    return {
        "upper_block_zero": bool(np.all(M[up] == 0)),
        "strict_lower_nonnegative": bool(np.all(M[lower] >= 0)),
        "degenerate_offdiag_zero": bool(np.all(M[degen] == 0)),
        "max_abs_column_sum": float(np.max(np.abs(M.sum(axis=0)))),
        "max_abs_generator_column_sum": float(np.max(np.abs(rate.generator.sum(axis=0)))),
    }


def cmd_rates(cfg, out_dir):
    model = build_model(cfg)
    rate = transition_rate_matrix(model, cfg["quadrature"]["sphere_order"])
    checks = structure_checks(rate)
    files = _wanted(cfg, {"rate_matrix.csv": rate.to_csv(), "rate_matrix.json": rate.to_json()})
    write_outputs(out_dir, files)
    print(f"rate matrix: N={model.n_states}, cutoff {rate.cutoff_id}, sphere order {rate.quad_order}")
    for key, val in checks.items():
        print(f"  {key}: {val}")
    print("  convention: M[m, j] is the rate m -> j; columns of M sum to zero; "
          "the Markov generator uses the out-rate diagonal")
    ok = (checks["upper_block_zero"] and checks["strict_lower_nonnegative"]
          and checks["degenerate_offdiag_zero"] and checks["max_abs_column_sum"] <= 1e-10
          and checks["max_abs_generator_column_sum"] <= 1e-10)
    return 0 if ok else 1


# -- evolve -------------------------------------------------------------------

def _fock(cfg, model, t_max):
    f = cfg["fock"]
    return harness.fock_for_window(model, t_max, sphere_order=f["sphere_order"], n_max=f["n_max"],
                                   min_radial=f["min_radial"], dim_cap=f["dim_cap"])


def cmd_evolve(cfg, out_dir):
    model = build_model(cfg)
    rate = transition_rate_matrix(model, cfg["quadrature"]["sphere_order"])
    pop = cfg["experiment"]["populations"]
    g = pop["g"]
    ts = population_times(pop, g)
    initial = pop.get("initial")
    if initial is not None and any(i >= model.n_states for i in initial):
        raise ConfigError("experiment/populations/initial: index outside the basis")
    sys_ = _fock(cfg, model, float(ts.max()))
    rows = harness.population_comparison(model, rate, g, ts, sys_, initial=initial,
                                         tol=cfg["fock"]["tol"])
    colsum = 0.0
    for t in np.unique([r[0] for r in rows]):
        for m in {r[1] for r in rows}:
            s = sum(r[4] for r in rows if r[0] == t and r[1] == m)
            colsum = max(colsum, abs(s - 1.0))
    summary = {
        "g": g, "n_times": len(ts), "fock_dim": sys_.dim, "fock_modes": sys_.n_modes,
        "max_gap": max(r[5] for r in rows),
        "max_markov_column_defect": colsum,
        "columns": list(harness.POPULATION_COLUMNS),
    }
    files = {"populations.csv": _csv_text(harness.POPULATION_COLUMNS, rows),
             "populations.json": _dump_json(summary)}
    write_outputs(out_dir, _wanted(cfg, files))
    print(f"populations: {len(rows)} rows, max gap {summary['max_gap']:.3e}, "
          f"Fock dim {sys_.dim}")
    return 0


# -- validate -----------------------------------------------------------------

def _phi_sup(model, X, ph, power, kernel):
    s = np.linspace(ph["s_min"], ph["s_max"], ph["n_s"])
    nrm = np.linalg.norm(eval_phi(model, X, s, kernel), 2, axis=(1, 2))
    return float(np.max((1 + s**power) * nrm))


def phi_decay(model, X, ph, sphere_order):
    """sup (1+s^p)||Phi(s,X)|| with p = 2 (Gaussian) or 3 (vanishing cutoff), and
    its relative change when the sphere order and radial nodes are doubled."""
    power = 3 if model.cutoff.kind == "gauss_vanishing" else 2
    base = _phi_sup(model, X, ph, power, RadialKernel(model, sphere_order))
    fine = _phi_sup(model, X, ph, power,
                    RadialKernel(model, 2 * sphere_order, nodes_per_panel=32, degree=96))
    return {"power": power, "sup": base, "sup_refined": fine,
            "relative_change": abs(fine - base) / max(abs(fine), 1e-300)}


def _check(checks, name, value, threshold, ok):
    checks[name] = {"value": float(value), "threshold": float(threshold), "pass": bool(ok)}


def cmd_validate(cfg, out_dir):
    model = build_model(cfg)
    exp = cfg["experiment"]
    thr = exp["thresholds"]
    seed = exp["seed"]
    X = build_observable(exp["observable"], model.n_states)
    checks = {}
    report = {"config_hash": harness.config_hash(cfg), "model": model.name}

    conv = exp["convergence"]
    cmp_ = harness.cutoff_comparison(model, X, conv["g"], conv["t_grid"], seed=seed)
    report["convergence"] = cmp_
    _check(checks, "convergence_gauss", cmp_["gauss"]["convergence"]["ci_high"],
           thr["convergence_gauss_max"],
           cmp_["gauss"]["convergence"]["ci_high"] <= thr["convergence_gauss_max"])
    _check(checks, "convergence_vanishing", cmp_["gauss_vanishing"]["convergence"]["ci_high"],
           thr["convergence_vanishing_max"],
           cmp_["gauss_vanishing"]["convergence"]["ci_high"] <= thr["convergence_vanishing_max"])
    _check(checks, "exponent_gap", cmp_["exponent_gap"], thr["exponent_gap_min"],
           cmp_["exponent_gap"] >= thr["exponent_gap_min"])

    phi = {}
    for kind in ("gauss", "gauss_vanishing"):
        m = model.with_cutoff(type(model.cutoff)(kind, model.cutoff.scale))
        phi[kind] = phi_decay(m, X, exp["phi"], cfg["quadrature"]["kernel_sphere_order"])
        _check(checks, f"phi_stability_{kind}", phi[kind]["relative_change"],
               thr["phi_stability_max"], phi[kind]["relative_change"] < thr["phi_stability_max"])
    report["phi"] = phi

    res = exp["residual"]
    recs = harness.residual_experiment(model, X, res["g_grid"], res["t_grid"],
                                       fd_step=res["fd_step"], seed=seed)
    report["residual"] = [r.to_dict() for r in recs]
    zero = [r for r in recs if r.g == 0]
    if zero:
        worst = max(r.total_residual for r in zero)
        bound = min(thr["heisenberg_residual_max"], max(r.fd_change for r in zero) + 1e-15)
        _check(checks, "heisenberg_residual", worst, bound, worst <= bound)
    lows = [r.exponents["remainder_g"]["ci_low"] for r in recs if r.exponents]
    if lows:
        _check(checks, "remainder_exponent", min(lows), thr["remainder_exponent_min"],
               min(lows) >= thr["remainder_exponent_min"])

    if "markov_limit" in exp:
        report["markov_limit"] = _markov_limit(cfg, model, exp["markov_limit"], seed)
        low = min(r["ci_low"] for r in report["markov_limit"]["ratios"])
        _check(checks, "gap_ratio", low, thr["gap_ratio_min"], low >= thr["gap_ratio_min"])

    failed = sorted(k for k, v in checks.items() if not v["pass"])
    report.update(checks=checks, failed=failed, passed=not failed)
    write_outputs(out_dir, {"validation_report.json": _dump_json(report)})
    for name, c in sorted(checks.items()):
        print(f"{'PASS' if c['pass'] else 'FAIL'} {name}: {c['value']:.4g} (threshold {c['threshold']:.4g})")
    return 0 if not failed else 1


def _markov_limit(cfg, model, ml, seed):
    rate = transition_rate_matrix(model, cfg["quadrature"]["sphere_order"])
    m = ml.get("initial", model.n_states - 1)
    rows_by_g = {}
    for g in ml["g_grid"]:
        ts = np.linspace(0.0, ml["g2t_max"] / g**2, ml["n_t"])
        sys_ = _fock(cfg, model, float(ts.max()))
        rows_by_g[g] = harness.population_comparison(model, rate, g, ts, sys_, initial=[m],
                                                     tol=cfg["fock"]["tol"])
    return {"initial": m,
            "max_gap": {str(g): harness.max_gap(r, m, m) for g, r in rows_by_g.items()},
            "ratios": harness.gap_ratio(rows_by_g, m, m, seed=seed)}


# -- entry point --------------------------------------------------------------

COMMANDS = {"rates": cmd_rates, "evolve": cmd_evolve, "validate": cmd_validate}


def build_parser():
    p = argparse.ArgumentParser(prog="qedmarkov", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("rates", "evolve", "validate", "dry-run"):
        sp_ = sub.add_parser(name)
        sp_.add_argument("--config", required=True)
        sp_.add_argument("--output-dir", help="overrides output.directory from the config")
        if name == "validate":
            sp_.add_argument("--dry-run", action="store_true", help="echo the config and exit")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    if args.command == "dry-run" or getattr(args, "dry_run", False):
        print(_dump_json(cfg), end="")
        return 0
    out_dir = args.output_dir or cfg["output"]["directory"]
    threads = os.environ.get("QEDMARKOV_THREADS")
    try:
        limit = int(threads) if threads else None
    except ValueError:
        print("config error: QEDMARKOV_THREADS must be an integer", file=sys.stderr)
        return 2
    try:
        with threadpool_limits(limits=limit):
            return COMMANDS[args.command](cfg, out_dir)
    except (ConfigError, ModelError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
