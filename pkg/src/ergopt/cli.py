"""Command-line frontend: ``ergopt <subcommand> --config FILE [--set k=v]... [--out DIR]``.

Every run validates its JSON config against a published schema, writes its
artifacts (``result.json``, ``schema.json`` plus CSV tables) into the output
directory and prints a one-line summary.  Exit status: 0 success,
1 invalid input, 2 numerical non-convergence or overflow, 3 infeasible
perturbation constants.
"""
from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import math
import os
import sys
from fractions import Fraction
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .dynamics import random_points, system_from_config
from .errors import ConvergenceError, ErgoptError, ValidationError
from .grid import make_grid
from .laxcore import default_resolution, solve_subaction
from .observables import observable_from_config

COMMANDS = ("subaction", "alpha", "maxorbit", "shadow", "perturb", "gibbs", "sweep",
            "entropy", "bq", "morris", "returns")

_num = {"type": "number"}
_int = {"type": "integer"}
_point = {"anyOf": [{"type": "number"}, {"type": "array", "items": {"type": "integer"}}]}
_points = {"type": "array", "items": _point, "minItems": 1}

PARAMS_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "p_max": {"type": "integer", "minimum": 1},
        "beta": {"type": "number", "minimum": 0},
        "beta_schedule": {"type": "array", "items": _num, "minItems": 1},
        "stabilize": {"type": "boolean"},
        "epsilon": {"type": "number", "minimum": 0},
        "delta": {"type": "number", "exclusiveMinimum": 0},
        "gamma_delta": {"type": "number", "exclusiveMinimum": 0},
        "M": {"type": "integer", "minimum": 1},
        "safety": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "methods": {"type": "array", "items": {"enum": ["enumeration", "gibbs", "preorbit"]}},
        "n_preorbits": {"type": "integer", "minimum": 1},
        "preorbit_depth": {"type": "integer", "minimum": 1},
        "mass_threshold": _num,
        "radius": {"type": "number", "exclusiveMinimum": 0},
        "segment": _points,
        "periodic": {"type": "boolean"},
        "orbit": _points,
        "target": _points,
        "K_set": _points,
        "n_max": {"type": "integer", "minimum": 1},
        "beta_size": {"type": "number", "exclusiveMinimum": 0},
        "sample_size": {"type": "integer", "minimum": 1},
        "L_max": {"type": "integer", "minimum": 1},
        "ball_radius": {"type": "number", "exclusiveMinimum": 0},
        "w": _point,
        "k_max": {"type": "integer", "minimum": 1},
        "q": {"anyOf": [{"type": "number"}, {"type": "string"},
                        {"type": "array", "items": {"type": "integer"}}]},
        "Q": {"type": "number", "exclusiveMinimum": 1},
        "N0": _int,
        "N": _int,
        "horizon": {"type": "integer", "minimum": 1},
        "test_functions": {"type": "object", "additionalProperties": {"type": "object"}},
        "refine_pmax": {"type": "integer", "minimum": 1},
    },
}

CONFIG_SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "title": "ergopt run configuration",
    "type": "object",
    "additionalProperties": False,
    "required": ["system"],
    "properties": {
        "system": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["circle", "shift", "sft"]},
                "m": {"type": "integer", "minimum": 2},
                "symbols": {"type": "integer", "minimum": 2},
                "matrix": {"type": "array", "items": {"type": "array", "items": {"enum": [0, 1]}}},
                "lambda": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "depth": {"type": "integer", "minimum": 2},
            },
        },
        "observable": {"type": "object", "required": ["type"]},
        "grid": {"type": "integer", "minimum": 1},
        "tol": {"type": "number", "exclusiveMinimum": 0},
        "max_iter": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0},
        "params": PARAMS_SCHEMA,
    },
}

CSV_COLUMNS = {
    "subaction": {"u.csv": ["node", "value"]},
    "alpha": {},
    "maxorbit": {"orbits.csv": ["rank", "period", "average", "points"]},
    "shadow": {"shadow.csv": ["index", "pseudo_point", "shadow_point", "distance"]},
    "perturb": {},
    "gibbs": {"measure.csv": ["node", "density", "weight"]},
    "sweep": {"sweep.csv": ["beta", "pressure", "integral_<name>...", "mass_<orbit>..."]},
    "entropy": {"entropy.csv": ["L", "fraction", "per_L_estimate"],
                "partition.csv": ["k", "entropy_per_k"]},
    "bq": {"bq.csv": ["n", "value", "period", "points"]},
    "morris": {},
    "returns": {"returns.csv": ["return_time", "gap_to_next"]},
}


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else repr(f)
    return obj


def _canonical(obj) -> str:
    return json.dumps(_clean(obj), sort_keys=True, separators=(",", ":"))


def config_hash(config: dict) -> str:
    return hashlib.sha256(_canonical(config).encode()).hexdigest()


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(config: dict, overrides) -> dict:
    """Apply ``path.to.key=value`` overrides (values parsed as JSON when possible)."""
    cfg = copy.deepcopy(config)
    for item in overrides or ():
        if "=" not in item:
            raise ValidationError(f"--set expects path=value, got {item!r}")
        path, text = item.split("=", 1)
        keys = path.split(".")
        node = cfg
        for k in keys[:-1]:
            node = node.setdefault(k, {})
            if not isinstance(node, dict):
                raise ValidationError(f"--set path {path!r} crosses a non-object value")
        node[keys[-1]] = _parse_value(text)
    return cfg


def validate_config(config: dict):
    try:
        jsonschema.validate(config, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(map(str, exc.absolute_path)) or "<root>"
        raise ValidationError(f"config invalid at {where}: {exc.message}") from None


class Run:
    """Everything a subcommand needs: parsed objects and the output sink."""

    def __init__(self, name: str, config: dict, out: Path):
        self.name = name
        self.config = config
        self.out = out
        self.hash = config_hash(config)
        self.system = system_from_config(config["system"])
        self.params = config.get("params", {})
        self.seed = int(config.get("seed", 0))
        self.grid = config.get("grid") or default_resolution(self.system)
        self.tol = config.get("tol")
        self.max_iter = int(config.get("max_iter", 20000))
        self.files = []

    @property
    def observable(self):
        spec = self.config.get("observable")
        if spec is None:
            raise ValidationError(f"subcommand {self.name!r} needs an observable")
        return observable_from_config(spec, self.system)

    def point(self, value):
        if isinstance(value, list):
            return self.system.validate(tuple(int(s) for s in value))
        return self.system.validate(float(value))

    def points(self, key, default=None):
        vals = self.params.get(key, default)
        if vals is None:
            raise ValidationError(f"params.{key} is required for {self.name!r}")
        return [self.point(v) for v in vals]

    def write_csv(self, filename: str, header, rows):
        path = self.out / filename
        with open(path, "w", newline="") as fh:
            fh.write(f"# ergopt {__version__} config_sha256={self.hash}\n")
            wr = csv.writer(fh)
            wr.writerow(header)
            for r in rows:
                wr.writerow([_fmt(v) for v in r])
        self.files.append(filename)


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (tuple, list)) and all(isinstance(x, (int, np.integer)) for x in v):
        return "".join(map(str, v))
    if isinstance(v, (tuple, list)):
        return " ".join(str(_fmt(x)) for x in v)
    return v


def _pt(x):
    return list(x) if isinstance(x, tuple) else float(x)


def _cmd_subaction(run: Run):
    F = run.observable
    sol = solve_subaction(run.system, F, run.grid, run.tol, run.max_iter,
                          refine_pmax=run.params.get("refine_pmax"))
    u = sol.u
    run.write_csv("u.csv", ["node", "value"],
                  ((_fmt(n) if isinstance(n, tuple) else float(n), float(v))
                   for n, v in zip(u.grid.nodes, u.values)))
    if not sol.converged:
        raise ConvergenceError(f"sub-action residual {sol.residual:.3g} above tolerance")
    return sol.summary(), f"alpha={sol.alpha:.10g} residual={sol.residual:.3g}"


def _cmd_alpha(run: Run):
    from .orbits import best_periodic_orbit
    from .thermo import equilibrium_state

    F, sys_ = run.observable, run.system
    p_max = run.params.get("p_max", 12 if sys_.kind == "circle" else 10)
    sol = solve_subaction(sys_, F, run.grid, run.tol, run.max_iter)
    orb, avg = best_periodic_orbit(sys_, F, p_max)
    sched = run.params.get("beta_schedule") or [512.0, 2048.0]
    b1, b2 = sched[0], sched[-1]
    if not b2 > b1:
        raise ValidationError("alpha needs beta_schedule with increasing endpoints")
    p1 = equilibrium_state(sys_, F, b1, run.grid, measure=False).pressure
    p2 = equilibrium_state(sys_, F, b2, run.grid, measure=False).pressure
    est = {"subaction": -sol.alpha, "orbit_enumeration": avg, "pressure_slope": (p2 - p1) / (b2 - b1)}
    vals = list(est.values())
    spread = max(vals) - min(vals)
    res = {"estimates_of_minus_alpha": est, "max_pairwise_difference": spread,
           "best_orbit": orb.to_dict(), "subaction_residual": sol.residual,
           "subaction_converged": sol.converged, "betas": [b1, b2]}
    if not sol.converged:
        raise ConvergenceError(f"sub-action residual {sol.residual:.3g} above tolerance")
    return res, f"-alpha: subaction={est['subaction']:.8g} orbits={avg:.8g} " \
                f"slope={est['pressure_slope']:.8g} spread={spread:.2g}"


def _cmd_maxorbit(run: Run):
    from .orbits import ranked_periodic_orbits

    p_max = run.params.get("p_max", 8)
    ranked = ranked_periodic_orbits(run.system, run.observable, p_max, top=10)
    run.write_csv("orbits.csv", ["rank", "period", "average", "points"],
                  ((i + 1, o.period, a, [_pt(x) for x in o.points])
                   for i, (o, a) in enumerate(ranked)))
    best, avg = ranked[0]
    gap = avg - ranked[1][1] if len(ranked) > 1 else None
    return {"best_orbit": best.to_dict(), "average": avg, "runner_up_gap": gap, "p_max": p_max}, \
        f"best period {best.period} average={avg:.10g}"


def _cmd_shadow(run: Run):
    from .orbits import pseudo_orbit, shadow, shadow_points

    sys_ = run.system
    seg = run.points("segment")
    po = pseudo_orbit(sys_, seg, periodic=run.params.get("periodic", True))
    ys = shadow_points(sys_, po)
    y, eps = shadow(sys_, po)
    run.write_csv("shadow.csv", ["index", "pseudo_point", "shadow_point", "distance"],
                  ((k, _pt(x), _pt(yk), sys_.metric(x, yk)) for k, (x, yk) in enumerate(zip(seg, ys))))
    out = {"pseudo_orbit": po.to_dict(), "eps_bound": eps,
           "max_distance": max(sys_.metric(x, yk) for x, yk in zip(seg, ys))}
    out["result"] = y.to_dict() if hasattr(y, "to_dict") else _pt(y)
    return out, f"shadowed with eps_bound={eps:.6g}"


def _cmd_perturb(run: Run):
    from .orbits import orbit_from_point
    from .perturb import LockinBudget, lock_orbit

    sys_, P = run.system, run.params
    orbit = None
    if "orbit" in P:
        pts = run.points("orbit")
        orbit = orbit_from_point(sys_, pts[0], len(pts))
        if not orbit.verified:
            raise ValidationError("params.orbit is not a periodic orbit")
    budget = LockinBudget(
        methods=tuple(P.get("methods", ("enumeration", "gibbs", "preorbit"))),
        p_max=P.get("p_max", 8), betas=tuple(P.get("beta_schedule", [4096.0])),
        gibbs_resolution=run.grid, mass_threshold=P.get("mass_threshold", 0.99),
        radius=P.get("radius"), subaction_resolution=run.grid,
        n_preorbits=P.get("n_preorbits", 20), preorbit_depth=P.get("preorbit_depth", 60),
        seed=run.seed)
    res = lock_orbit(sys_, run.observable, epsilon=P.get("epsilon", 0.1), M=P.get("M", 1),
                     p_max=P.get("p_max", 8), delta=P.get("delta"),
                     gamma_delta=P.get("gamma_delta"), orbit=orbit, resolution=run.grid,
                     safety=P.get("safety", 0.5), budget=budget)
    d = res.to_dict()
    return d, f"certified={res.report.certified} K={res.constants.K:.6g} rho={res.constants.rho:.3g}"


def _cmd_gibbs(run: Run):
    from .thermo import equilibrium_state

    P = run.params
    st = equilibrium_state(run.system, run.observable, P.get("beta", 1.0), run.grid,
                           run.tol or 1e-10, run.max_iter, stabilize=P.get("stabilize", True))
    g = st.grid
    run.write_csv("measure.csv", ["node", "density", "weight"],
                  ((n if isinstance(n, tuple) else float(n), float(h), float(w))
                   for n, h, w in zip(g.nodes, st.density.values, st.measure_weights)))
    if not st.converged:
        raise ConvergenceError(f"equilibrium state not converged (residual {st.residual:.3g})")
    return st.summary(), f"pressure={st.pressure:.10g} residual={st.residual:.3g}"


def _cmd_sweep(run: Run):
    from .observables import DistToSet
    from .orbits import ranked_periodic_orbits
    from .thermo import beta_sweep

    sys_, P = run.system, run.params
    F = run.observable
    sched = P.get("beta_schedule", [2.0 ** k for k in range(1, 11)])
    tests = {k: observable_from_config(v, sys_) for k, v in sorted(P.get("test_functions", {}).items())}
    ranked = ranked_periodic_orbits(sys_, F, P.get("p_max", 8), top=3)
    orbits = {f"orbit{i + 1}": o.points for i, (o, _) in enumerate(ranked)}
    if not tests:
        tests = {"sq_dist_to_best": DistToSet(sys_, ranked[0][0].points, power=2)}
    radius = P.get("radius", 0.02)
    sw = beta_sweep(sys_, F, sched, tests, orbits, radius, run.grid, run.tol or 1e-10, run.max_iter)
    names_i = list(sw.integrals)
    names_m = list(sw.masses)
    header = ["beta", "pressure"] + [f"integral_{n}" for n in names_i] + [f"mass_{n}" for n in names_m]
    run.write_csv("sweep.csv", header,
                  ([b, sw.pressures[k]] + [sw.integrals[n][k] for n in names_i]
                   + [sw.masses[n][k] for n in names_m] for k, b in enumerate(sw.betas)))
    out = sw.summary()
    out["orbits"] = {k: [_pt(x) for x in v] for k, v in orbits.items()}
    out["radius"] = radius
    return out, f"final slope={sw.final_slope:.8g}"


def _cmd_entropy(run: Run):
    from .entropy import brin_katok_estimate, empirical_partition_entropy

    sys_, P = run.system, run.params
    rng = np.random.default_rng(run.seed)
    n = P.get("sample_size", 10 ** 5)
    L_max = P.get("L_max", 12)
    sample = random_points(sys_, n, rng, depth=max(L_max + sys_.depth, 2) if sys_.kind != "circle" else None)
    w = run.point(P["w"]) if "w" in P else sample[0]
    est = brin_katok_estimate(sys_, sample, w, range(1, L_max + 1), P.get("ball_radius", 0.25))
    run.write_csv("entropy.csv", ["L", "fraction", "per_L_estimate"],
                  ((L, est.fractions[L], est.per_L[L]) for L in sorted(est.fractions)))
    k_max = P.get("k_max", 8)
    pts = make_grid(sys_, 2 ** 16 if sys_.kind == "circle" else max(k_max, 2)).nodes
    pe = empirical_partition_entropy(sys_, pts, None, range(1, k_max + 1))
    run.write_csv("partition.csv", ["k", "entropy_per_k"], sorted(pe.per_k.items()))
    return {"brin_katok": est.to_dict(), "partition_entropy_uniform": pe.to_dict(),
            "topological_entropy": sys_.topological_entropy, "seed": run.seed}, \
        f"brin-katok estimate={est.estimate:.6g}"


def _cmd_bq(run: Run):
    from .entropy import bq_search

    rows = bq_search(run.system, run.points("K_set"), run.params.get("n_max", 8))
    run.write_csv("bq.csv", ["n", "value", "period", "points"],
                  ((r.n, r.value, r.orbit.period, [_pt(x) for x in r.orbit.points]) for r in rows))
    return {"rows": [r.to_dict() for r in rows]}, f"final value={rows[-1].value:.6g}"


def _cmd_morris(run: Run):
    from .entropy import morris_step
    from .orbits import orbit_from_point

    pts = run.points("target")
    target = orbit_from_point(run.system, pts[0], len(pts))
    if not target.verified:
        raise ValidationError("params.target is not a periodic orbit")
    _, rep = morris_step(run.system, run.observable, target, run.params.get("beta_size", 0.5),
                         run.params.get("p_max", 8))
    return rep.to_dict(), f"maximizer_on_target={rep.maximizer_on_target} " \
                          f"gap {rep.gap_before:.6g} -> {rep.gap_after:.6g}"


def _cmd_returns(run: Run):
    from .entropy import DigitPoint, return_gap_diagnostic

    sys_, P = run.system, run.params
    horizon = P.get("horizon", 10 ** 5)
    q = P.get("q", "random")
    rng = np.random.default_rng(run.seed)
    if sys_.kind == "circle":
        if q == "random":
            q = DigitPoint.random(sys_.m, horizon + 64, rng)
        elif isinstance(q, str):
            try:
                q = Fraction(q)
            except ValueError:
                raise ValidationError(f"params.q must be 'random', a number or a fraction, got {q!r}") from None
        w = float(P.get("w", 0.0))
    else:
        if q == "random":
            q = random_points(sys_, 1, rng, depth=horizon + sys_.depth)[0]
        else:
            q = tuple(int(s) for s in q)
        w = tuple(P.get("w", [0] * sys_.depth))
    st = return_gap_diagnostic(sys_, q, w, P.get("Q", 2.0), P.get("N0", 1), P.get("N", 10), horizon)
    run.write_csv("returns.csv", ["return_time", "gap_to_next"],
                  ((t, st.gaps[i] if i < len(st.gaps) else "") for i, t in enumerate(st.times)))
    return st.to_dict(), f"{len(st.times)} returns, min gap {st.min_gap}"


HANDLERS = {name: globals()[f"_cmd_{name}"] for name in COMMANDS}


def run_subcommand(name: str, config: dict, out_dir) -> int:
    """Validate, execute and write artifacts; returns the exit status."""
    out = Path(out_dir)
    try:
        if name not in COMMANDS:
            raise ValidationError(f"unknown subcommand {name!r}; choose from {', '.join(COMMANDS)}")
        validate_config(config)
        out.mkdir(parents=True, exist_ok=True)
        run = Run(name, config, out)
        _write_schema(run)
        result, line = HANDLERS[name](run)
    except ErgoptError as exc:
        kind = type(exc).__name__
        print(f"ergopt {name}: error ({kind}): {exc}", file=sys.stderr)
        if out.is_dir():
            _write_json(out / "result.json", {
                "command": name, "version": __version__, "config_sha256": config_hash(config),
                "status": exc.exit_code, "error": {"type": kind, "message": str(exc)}})
        return exc.exit_code
    doc = {"command": name, "version": __version__, "config_sha256": run.hash, "status": 0,
           "config": config, "result": result, "files": sorted(run.files + ["schema.json"])}
    _write_json(out / "result.json", doc)
    print(f"ergopt {name}: {line}")
    return 0


def _write_json(path: Path, doc):
    with open(path, "w") as fh:
        json.dump(_clean(doc), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_schema(run: Run):
    _write_json(run.out / "schema.json", {
        "version": __version__, "config_sha256": run.hash, "subcommand": run.name,
        "config_schema": CONFIG_SCHEMA, "csv_columns": CSV_COLUMNS[run.name],
        "exit_codes": {"0": "success", "1": "validation error",
                       "2": "numerical non-convergence or overflow",
                       "3": "infeasible perturbation constants"}})


def load_config(path, overrides=(), env=os.environ) -> dict:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot read config {path}: {exc}") from None
    if not isinstance(cfg, dict):
        raise ValidationError("config must be a JSON object")
    cfg = apply_overrides(cfg, overrides)
    if env.get("ERGOPT_SEED"):
        try:
            cfg["seed"] = int(env["ERGOPT_SEED"])
        except ValueError:
            raise ValidationError(f"ERGOPT_SEED must be an integer, got {env['ERGOPT_SEED']!r}") from None
    threads = env.get("ERGOPT_THREADS")
    if threads is not None and (not threads.isdigit() or int(threads) < 1):
        raise ValidationError(f"ERGOPT_THREADS must be a positive integer, got {threads!r}")
    return cfg


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ergopt", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"ergopt {__version__}")
    ap.add_argument("subcommand", choices=COMMANDS)
    ap.add_argument("--config", required=True, help="JSON run configuration")
    ap.add_argument("--set", dest="overrides", action="append", default=[], metavar="PATH=VALUE",
                    help="override a config field, e.g. params.epsilon=0.2 (repeatable)")
    ap.add_argument("--out", default="ergopt_out", help="output directory")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.overrides)
    except ValidationError as exc:
        print(f"ergopt {args.subcommand}: error (ValidationError): {exc}", file=sys.stderr)
        return 1
    return run_subcommand(args.subcommand, cfg, args.out)


if __name__ == "__main__":
    sys.exit(main())
