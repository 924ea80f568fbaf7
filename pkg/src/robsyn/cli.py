"""Batch front end tying the pipeline together.

One JSON config file per invocation; command-line flags override config
values and nothing reads the environment, so an invocation is a complete
record of an experiment.  Subcommands:

    mpc-build    build the saturated-MPC fixture (network + condensed QP)
    synthesize   robustify a network file under weight-deviation tolerances
    analyze      certify a network file as-is
    verify       sample-test a certificate file against its network
    sweep        synthesis across a tolerance grid, CSV + plot data out
    simulate     closed-loop rollout of a network against the exact QP law

Exit codes: 0 success, 1 runtime failure (including verify finding
violations and mpc-build failing its oracle-agreement check), 2 config or
schema problem (the offending key is named), 3 infeasible, 4 numerical
failure.  CSV output is comma-separated with '.' decimals, a header row and
LF line endings; the leading timestamp comment can be disabled with
--no-timestamp so reruns are byte-identical.
"""

from __future__ import annotations

import argparse
import copy
import dataclasses
import json
import os
import sys

import numpy as np

from .conic import SolverOptions
from .errors import DimensionMismatch, Infeasible, NumericalFailure, RobsynError, SchemaError
from .mpc import (
    MpcProblem,
    condense_qp,
    qp_to_implicit_network,
    reference_mpc_problem,
    simulate_closed_loop,
    solve_qp_oracle,
)
from .multipliers import InputPairSet
from .network import evaluate, evaluate_batch, load_network, save_network
from .synthesis import (
    ObjectiveWeights,
    RobustnessCertificate,
    SimilarityTolerances,
    SynthesisProblem,
    analyze_network,
    synthesize,
)
from .verification import (
    SampleSpec,
    empirical_bound_check,
    max_weight_deviation,
    sweep_tolerance,
)

_DEFAULTS = {
    "preset": None,
    "network": None,
    "qp": None,
    "certificate": None,
    "out": ".",
    "seed": 0,
    "backend": "bundled",
    "jobs": 1,
    "timestamp": True,
    "mpc": None,
    "pairset": {"eps_u1": 1.0, "eps_u2": 1.0},
    "weights": {"gamma": 1.0, "gamma_u1": 1.0, "gamma_u2": 1.0},
    "tolerances": {"uniform": 1e-5},
    "fixed_gamma_u1": None,
    "fixed_gamma_u2": None,
    "fix_gains": True,
    "sweep_grid": [1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0],
    "samples": 10000,
    "base_box": [-5.0, 5.0],
    "steps": 30,
    "w0": [1.0, -1.0],
    "solver": None,
    "strictness_shift": 1e-8,
    "t_floor": 1e-6,
}

_SECTION_KEYS = {
    "mpc": {"A", "B", "Q", "R", "P", "horizon", "v_bound"},
    "pairset": {"eps_u1", "eps_u2"},
    "weights": {"gamma", "gamma_u1", "gamma_u2"},
    "tolerances": {"uniform", "w_x", "w_u", "w_fx", "w_fu"},
    "solver": {f.name for f in dataclasses.fields(SolverOptions)},
}

ORACLE_AGREEMENT_TOL = 1e-5


def _validate_config(raw: dict) -> None:
    if not isinstance(raw, dict):
        raise SchemaError("config document must be a mapping")
    for key, value in raw.items():
        if key not in _DEFAULTS:
            raise SchemaError(f"unknown config key: {key!r}")
        if key in _SECTION_KEYS and value is not None:
            if not isinstance(value, dict):
                raise SchemaError(f"config key {key!r} must be an object")
            for sub in value:
                if sub not in _SECTION_KEYS[key]:
                    raise SchemaError(f"unknown config key: '{key}.{sub}'")
    tol = raw.get("tolerances")
    if isinstance(tol, dict) and "uniform" in tol and len(tol) > 1:
        raise SchemaError("config key 'tolerances.uniform' excludes the per-block keys")


def _preset_sections(name: str) -> dict:
    if name == "paper-mpc":
        p = reference_mpc_problem()
        return {
            "mpc": {
                "A": p.A.tolist(),
                "B": p.B.tolist(),
                "Q": p.Q.tolist(),
                "R": p.R.tolist(),
                "P": p.P.tolist(),
                "horizon": p.horizon,
                "v_bound": p.v_bound,
            }
        }
    raise SchemaError(f"unknown preset {name!r}")


def _merge(cfg: dict, updates: dict) -> None:
    for key, value in updates.items():
        if key in _SECTION_KEYS and isinstance(value, dict) and isinstance(cfg.get(key), dict):
            cfg[key].update(value)
        else:
            cfg[key] = copy.deepcopy(value)


def resolve_config(args: argparse.Namespace) -> dict:
    """Defaults, then preset, then the config file, then flags."""
    cfg = copy.deepcopy(_DEFAULTS)
    raw = {}
    if args.config:
        with open(args.config) as fh:
            try:
                raw = json.load(fh)
            except json.JSONDecodeError as ex:
                raise SchemaError(f"config file is not valid JSON: {ex}") from None
        _validate_config(raw)
    preset = raw.get("preset")
    if preset:
        _merge(cfg, _preset_sections(preset))
    _merge(cfg, raw)
    for flag in ("out", "seed", "backend", "jobs"):
        value = getattr(args, flag)
        if value is not None:
            cfg[flag] = value
    if args.no_timestamp:
        cfg["timestamp"] = False
    if not 0 <= int(cfg["seed"]) < 2**64:
        raise SchemaError("config key 'seed' must fit in an unsigned 64-bit integer")
    if int(cfg["jobs"]) < 1:
        raise SchemaError("config key 'jobs' must be a positive integer")
    return cfg


def _artifact(cfg: dict, key: str, default_name: str) -> str:
    return cfg[key] if cfg[key] else os.path.join(cfg["out"], default_name)


def _out_path(cfg: dict, name: str) -> str:
    os.makedirs(cfg["out"], exist_ok=True)
    return os.path.join(cfg["out"], name)


def _pairset(cfg: dict) -> InputPairSet:
    return InputPairSet(float(cfg["pairset"]["eps_u1"]), float(cfg["pairset"]["eps_u2"]))


def _weights(cfg: dict) -> ObjectiveWeights:
    w = cfg["weights"]
    return ObjectiveWeights(float(w["gamma"]), float(w["gamma_u1"]), float(w["gamma_u2"]))


def _tolerances(cfg: dict) -> SimilarityTolerances:
    tol = cfg["tolerances"]
    if "uniform" in tol:
        return SimilarityTolerances.uniform(float(tol["uniform"]))
    return SimilarityTolerances(
        w_x=float(tol.get("w_x", 0.0)),
        w_u=float(tol.get("w_u", 0.0)),
        w_fx=float(tol.get("w_fx", 0.0)),
        w_fu=float(tol.get("w_fu", 0.0)),
    )


def _solver_options(cfg: dict) -> SolverOptions | None:
    return SolverOptions(**cfg["solver"]) if cfg["solver"] else None


def _sample_spec(cfg: dict, num_pairs: int | None = None) -> SampleSpec:
    lo, hi = cfg["base_box"]
    return SampleSpec(
        num_pairs=int(num_pairs if num_pairs is not None else cfg["samples"]),
        base_box=(float(lo), float(hi)),
    )


def _problem_from_cfg(cfg: dict) -> MpcProblem:
    m = cfg["mpc"]
    if not m:
        return reference_mpc_problem()
    filled = dict(_preset_sections("paper-mpc")["mpc"])
    filled.update(m)
    return MpcProblem(
        A=np.asarray(filled["A"], dtype=float),
        B=np.asarray(filled["B"], dtype=float),
        Q=np.asarray(filled["Q"], dtype=float),
        R=np.asarray(filled["R"], dtype=float),
        P=np.asarray(filled["P"], dtype=float),
        horizon=int(filled["horizon"]),
        v_bound=float(filled["v_bound"]),
    )


def _write_json(doc: dict, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


_CERT_FIELDS = (
    "gamma",
    "gamma_u1",
    "gamma_u2",
    "eps_u1",
    "eps_u2",
    "lmi_margin",
    "objective_value",
    "strictness_relaxed",
)


def _write_certificate(sol, path: str) -> None:
    cert = sol.certificate
    _write_json(
        {
            "gamma": cert.gamma,
            "gamma_u1": cert.gamma_u1,
            "gamma_u2": cert.gamma_u2,
            "eps_u1": cert.input_set.eps_u1,
            "eps_u2": cert.input_set.eps_u2,
            "lmi_margin": cert.lmi_margin,
            "objective_value": cert.objective_value,
            "strictness_relaxed": sol.strictness_relaxed,
        },
        path,
    )


def _load_certificate(path: str) -> RobustnessCertificate:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as ex:
            raise SchemaError(f"certificate file is not valid JSON: {ex}") from None
    if not isinstance(doc, dict):
        raise SchemaError("certificate document must be a mapping")
    for key in doc:
        if key not in _CERT_FIELDS:
            raise SchemaError(f"unknown certificate key: {key!r}")
    missing = [k for k in _CERT_FIELDS if k not in doc and k != "strictness_relaxed"]
    if missing:
        raise SchemaError(f"certificate document is missing keys: {missing}")
    return RobustnessCertificate(
        gamma=float(doc["gamma"]),
        gamma_u1=float(doc["gamma_u1"]),
        gamma_u2=float(doc["gamma_u2"]),
        input_set=InputPairSet(float(doc["eps_u1"]), float(doc["eps_u2"])),
        lmi_margin=float(doc["lmi_margin"]),
        objective_value=float(doc["objective_value"]),
    )


def _csv_open(path: str, timestamp: bool):
    from datetime import datetime, timezone

    fh = open(path, "w", newline="")
    if timestamp:
        fh.write(f"# generated {datetime.now(timezone.utc).isoformat()}\n")
    return fh


def _state_grid(n_x: int, base_box, seed: int) -> np.ndarray:
    lo, hi = float(base_box[0]), float(base_box[1])
    if n_x == 2:
        axis = np.linspace(lo, hi, 10)
        g1, g2 = np.meshgrid(axis, axis)
        return np.column_stack([g1.ravel(), g2.ravel()])
    return np.random.default_rng(seed).uniform(lo, hi, size=(100, n_x))


def cmd_mpc_build(cfg: dict) -> int:
    problem = _problem_from_cfg(cfg)
    qp = condense_qp(problem)
    net = qp_to_implicit_network(qp, attach_hint=False)
    states = _state_grid(problem.n_x, cfg["base_box"], int(cfg["seed"]))
    G = evaluate_batch(net, states.T)[0]
    err = 0.0
    for j, w in enumerate(states):
        err = max(err, float(np.max(np.abs(G[:, j] - solve_qp_oracle(qp, w).v))))
    net_path = _out_path(cfg, "network.json")
    save_network(net, net_path)
    _write_json(
        {
            "A": problem.A.tolist(),
            "B": problem.B.tolist(),
            "Q": problem.Q.tolist(),
            "R": problem.R.tolist(),
            "P": problem.P.tolist(),
            "horizon": problem.horizon,
            "v_bound": problem.v_bound,
            "H": qp.H.tolist(),
            "F": qp.F.tolist(),
            "E": qp.E.tolist(),
            "G": qp.G.tolist(),
            "c": qp.c.tolist(),
            "S_w": qp.S_w.tolist(),
        },
        _out_path(cfg, "qp.json"),
    )
    print(f"network dims: n={net.n} n_u={net.n_u} n_g={net.n_g}")
    if qp.n_dec == 1:
        print(f"condensed cost H = {qp.H[0, 0]:.4f}")
    print(f"wrote {net_path}")
    print(f"oracle agreement max error = {err:.3e} over {states.shape[0]} states")
    return 0 if err <= ORACLE_AGREEMENT_TOL else 1


def _synthesis_problem(cfg: dict, net) -> SynthesisProblem:
    return SynthesisProblem(
        network=net,
        input_set=_pairset(cfg),
        tolerances=_tolerances(cfg),
        weights=_weights(cfg),
        fixed_gamma_u1=cfg["fixed_gamma_u1"],
        fixed_gamma_u2=cfg["fixed_gamma_u2"],
        strictness_shift=float(cfg["strictness_shift"]),
        t_floor=float(cfg["t_floor"]),
    )


def _summary(sol, extra: str = "") -> str:
    cert = sol.certificate
    return (
        f"gamma={cert.gamma:.6g} gamma_u1={cert.gamma_u1:.6g} "
        f"gamma_u2={cert.gamma_u2:.6g} objective={cert.objective_value:.6g}"
        f"{extra} status={sol.status_label}"
    )


def cmd_synthesize(cfg: dict) -> int:
    net = load_network(_artifact(cfg, "network", "network.json"))
    sol = synthesize(
        _synthesis_problem(cfg, net),
        options=_solver_options(cfg),
        backend=cfg["backend"],
    )
    save_network(sol.network, _out_path(cfg, "synthesized_network.json"))
    _write_certificate(sol, _out_path(cfg, "certificate.json"))
    dev = max_weight_deviation(sol.network, net)
    print(_summary(sol, extra=f" max_weight_deviation={dev:.3e}"))
    return 0


def cmd_analyze(cfg: dict) -> int:
    net = load_network(_artifact(cfg, "network", "network.json"))
    sol = analyze_network(
        net,
        _pairset(cfg),
        weights=_weights(cfg),
        fixed_gamma_u1=cfg["fixed_gamma_u1"],
        fixed_gamma_u2=cfg["fixed_gamma_u2"],
        strictness_shift=float(cfg["strictness_shift"]),
        t_floor=float(cfg["t_floor"]),
        options=_solver_options(cfg),
        backend=cfg["backend"],
    )
    _write_certificate(sol, _out_path(cfg, "certificate.json"))
    cert = sol.certificate
    with _csv_open(_out_path(cfg, "analysis.csv"), cfg["timestamp"]) as fh:
        fh.write("gamma,gamma_u1,gamma_u2,objective,lmi_margin\n")
        fh.write(
            f"{cert.gamma:.17g},{cert.gamma_u1:.17g},{cert.gamma_u2:.17g},"
            f"{cert.objective_value:.17g},{cert.lmi_margin:.17g}\n"
        )
    print(_summary(sol))
    return 0


def cmd_verify(cfg: dict) -> int:
    net = load_network(_artifact(cfg, "network", "network.json"))
    cert = _load_certificate(_artifact(cfg, "certificate", "certificate.json"))
    check = empirical_bound_check(net, cert, _sample_spec(cfg), seed=int(cfg["seed"]))
    with _csv_open(_out_path(cfg, "verify.csv"), cfg["timestamp"]) as fh:
        fh.write("num_pairs,violations,worst_margin,max_lhs,empirical_gamma_lb\n")
        fh.write(
            f"{check.num_pairs},{check.violations},{check.worst_margin:.17g},"
            f"{check.max_lhs:.17g},{check.empirical_gamma_lb:.17g}\n"
        )
    print(
        f"violations={check.violations}/{check.num_pairs} "
        f"worst_margin={check.worst_margin:.6g} "
        f"empirical_gamma_lb={check.empirical_gamma_lb:.6g}"
    )
    return 1 if check.violations > 0 else 0


def cmd_sweep(cfg: dict) -> int:
    net = load_network(_artifact(cfg, "network", "network.json"))
    result = sweep_tolerance(
        net,
        _pairset(cfg),
        cfg["sweep_grid"],
        fix_gains=bool(cfg["fix_gains"]),
        weights=_weights(cfg),
        backend=cfg["backend"],
        spec=_sample_spec(cfg),
        seed=int(cfg["seed"]),
        jobs=int(cfg["jobs"]),
    )
    csv_path = _out_path(cfg, "sweep.csv")
    result.write_csv(csv_path, timestamp=cfg["timestamp"])
    result.write_gnuplot(_out_path(cfg, "sweep.dat"), timestamp=cfg["timestamp"])
    solved = sum(1 for r in result.rows if r.status.startswith("optimal"))
    print(f"wrote {len(result.rows)} sweep rows ({solved} solved) to {csv_path}")
    return 0


def cmd_simulate(cfg: dict) -> int:
    with open(_artifact(cfg, "qp", "qp.json")) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as ex:
            raise SchemaError(f"qp file is not valid JSON: {ex}") from None
    try:
        problem = MpcProblem(
            A=doc["A"], B=doc["B"], Q=doc["Q"], R=doc["R"], P=doc["P"],
            horizon=int(doc["horizon"]), v_bound=float(doc["v_bound"]),
        )
    except KeyError as ex:
        raise SchemaError(f"qp document is missing key {ex}") from None
    qp = condense_qp(problem)
    net = load_network(_artifact(cfg, "network", "synthesized_network.json"))
    w0 = np.asarray(cfg["w0"], dtype=float)
    steps = int(cfg["steps"])
    W_ref, V_ref = simulate_closed_loop(problem, w0, steps, qp=qp)
    W_net, V_net = simulate_closed_loop(
        problem, w0, steps, controller=lambda w: evaluate(net, w).g, qp=qp
    )
    dev = float(np.max(np.abs(W_ref - W_net)))
    with _csv_open(_out_path(cfg, "trajectory.csv"), cfg["timestamp"]) as fh:
        cols = (
            ["k"]
            + [f"w_ref_{i}" for i in range(problem.n_x)]
            + [f"w_net_{i}" for i in range(problem.n_x)]
            + [f"v_ref_{i}" for i in range(problem.n_v)]
            + [f"v_net_{i}" for i in range(problem.n_v)]
        )
        fh.write(",".join(cols) + "\n")
        for k in range(steps + 1):
            row = [str(k)]
            row += [f"{x:.17g}" for x in W_ref[k]]
            row += [f"{x:.17g}" for x in W_net[k]]
            if k < steps:
                row += [f"{x:.17g}" for x in V_ref[k]]
                row += [f"{x:.17g}" for x in V_net[k]]
            else:
                row += [""] * (2 * problem.n_v)
            fh.write(",".join(row) + "\n")
    print(f"max trajectory deviation = {dev:.6g} over {steps} steps")
    return 0


_COMMANDS = [
    ("mpc-build", cmd_mpc_build, "build the saturated-MPC network and condensed-QP files"),
    ("synthesize", cmd_synthesize, "robustify a network under weight tolerances"),
    ("analyze", cmd_analyze, "certify a network file without changing it"),
    ("verify", cmd_verify, "sample-test a certificate against its network"),
    ("sweep", cmd_sweep, "synthesis across a tolerance grid"),
    ("simulate", cmd_simulate, "closed-loop rollout against the exact QP law"),
]


def _seed_type(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON config file")
    common.add_argument("--out", metavar="DIR", help="output directory (default '.')")
    common.add_argument("--seed", type=_seed_type, metavar="U64")
    common.add_argument("--backend", metavar="NAME", help="conic backend (default 'bundled')")
    common.add_argument("--jobs", type=int, metavar="K", help="parallel sweep workers")
    common.add_argument(
        "--no-timestamp",
        action="store_true",
        help="omit the generated-at comment so reruns are byte-identical",
    )
    parser = argparse.ArgumentParser(
        prog="robsyn",
        description="certified robustness synthesis for implicit networks",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn, text in _COMMANDS:
        p = sub.add_parser(name, parents=[common], help=text)
        p.set_defaults(func=fn)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as ex:
        return int(ex.code or 0)
    try:
        cfg = resolve_config(args)
        return args.func(cfg)
    except (SchemaError, DimensionMismatch, ValueError) as ex:
        print(f"config error: {ex}", file=sys.stderr)
        return 2
    except Infeasible as ex:
        print(f"infeasible: {ex}", file=sys.stderr)
        return 3
    except NumericalFailure as ex:
        print(f"numerical failure: {ex}", file=sys.stderr)
        return 4
    except RobsynError as ex:
        print(f"error: {ex}", file=sys.stderr)
        return 1
    except OSError as ex:
        print(f"error: {ex}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
