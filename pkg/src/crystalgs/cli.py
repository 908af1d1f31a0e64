"""Command-line front end.

Every command prints a JSON document ``{"command", "result", "metadata"}`` on
stdout; only ``metadata`` carries run-dependent fields such as the timestamp.
With ``--output-dir`` the same document and any CSV tables are written there.

Exit status: 0 on success, 1 when a check fails, 2 on usage or input errors.
"""
from __future__ import annotations

import argparse
import datetime as _dt
import json
import math
import os
import sys
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from . import energy_engine as ee
from . import gsc_verifier as gv
from . import lattice_algebra as la
from . import optimizer as opt
from . import spectral_profile as sp
from .errors import (
    ConstraintViolation,
    DegenerateBasis,
    HypothesisViolation,
    InvalidParameter,
    InvalidProfile,
    OptimizerFailed,
    ToleranceUnreachable,
    Unsupported,
    UnknownLattice,
    WindowTooSmall,
)

PRESETS = ("triangle", "cos_r4", "bump_stack")
THREADS_ENV = "CRYSTALGS_THREADS"

DEFAULTS = {
    "k0": 2.0 * math.pi, "dimension": 3, "n_bumps": 7, "density": "threshold",
    "density_factor": 1.0, "seed": 0, "r_max": None, "points": 401, "restarts": 64,
    "tolerance": None, "mode": "canonical", "trials": 10_000, "samples": 1000, "step": 0.01,
    "n_random": 20, "radii": [4.0, 6.0, 8.0, 10.0], "centers": 1, "window": 12.0,
    "method": "descent", "runs": 1, "max_iter": 100_000,
}

_USAGE_ERRORS = (InvalidParameter, InvalidProfile, ConstraintViolation, DegenerateBasis,
                 UnknownLattice, Unsupported, FileNotFoundError, json.JSONDecodeError,
                 jsonschema.ValidationError, KeyError)
_CHECK_ERRORS = (HypothesisViolation, ToleranceUnreachable, WindowTooSmall, OptimizerFailed)


class UsageError(Exception):
    pass


def _schema() -> dict:
    return json.loads(resources.files("crystalgs").joinpath("config_schema.json").read_text())


# ---------------------------------------------------------------------------
# option handling
# ---------------------------------------------------------------------------

class Options(dict):
    """Merged options: command line over config file over defaults."""

    def __getattr__(self, key):
        try:
            return self[key]
        except KeyError:
            raise AttributeError(key) from None


def _merge(args: argparse.Namespace) -> Options:
    given = {k: v for k, v in vars(args).items() if v is not None and k not in ("func", "config", "group", "cmd")}
    from_file = {}
    if args.config:
        with open(args.config) as fh:
            from_file = json.load(fh)
    merged = dict(DEFAULTS)
    merged.update(from_file)
    merged.update(given)
    schema_view = {k: v for k, v in merged.items() if v is not None}
    jsonschema.validate(schema_view, _schema())
    if merged.get("threads") is None:
        merged["threads"] = int(os.environ.get(THREADS_ENV, "1"))
    return Options(merged)


def resolve_profile(opts: Options) -> sp.SpectralProfile:
    spec = opts.get("profile") or "bump_stack"
    if isinstance(spec, dict):
        return sp.profile_from_dict(spec)
    if spec in PRESETS:
        return sp.profile_from_dict({"preset": spec, "cutoff": opts.k0, "dimension": opts.dimension,
                                     "n_bumps": opts.n_bumps})
    return sp.load_profile(spec)


def _density(opts: Options, name: str | None, k0: float) -> float | None:
    rho = opts.density
    if rho == "threshold":
        if name is None:
            return None
        rho = la.threshold_closed_form(name, k0, opts.get("c_over_a"))
    return float(rho) * opts.density_factor


def resolve_lattice(opts: Options, k0: float, spec=None) -> la.PeriodicConfiguration:
    spec = spec if spec is not None else (opts.get("lattice") or "bcc")
    if isinstance(spec, dict):
        config = la.config_from_dict(spec)
        name = None
    elif spec in la.NAMES:
        config = la.named_lattice(spec, 1.0, opts.get("c_over_a"))
        name = spec
    else:
        config = la.load_config(spec)
        name = None
    rho = _density(opts, name, k0)
    if rho is not None:
        config = la.scale_to_density(config, rho)
    return config


def _multipliers(opts: Options, d: int) -> tuple:
    m = opts.get("multipliers") or [3]
    if len(m) == 1:
        m = m * d
    if len(m) != d:
        raise InvalidParameter(f"need {d} multipliers, got {len(m)}")
    return tuple(m)


def _write_csv_rows(path: Path, header, rows) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


# ---------------------------------------------------------------------------
# commands: each returns (result, {filename: writer}, ok)
# ---------------------------------------------------------------------------

def cmd_potential_build(opts):
    prof = resolve_profile(opts)
    pot = sp.PairPotential(prof)
    result = {"profile": {k: v for k, v in sp.profile_to_dict(prof).items() if k != "parameters"},
              "parameters": {k: v for k, v in prof.parameters.items() if k != "values"},
              "phi_hat_at_zero": pot.phi_hat_at_zero, "phi_at_zero": pot.phi_at_zero}
    if pot.asymptotic_amplitude is not None:
        asym = sp.asymptotic_amplitude_3d(prof)
        result["asymptotic_amplitude"] = asym.amplitude
        result["asymptotic_constant"] = asym.constant
    return result, {"profile.json": lambda p: sp.save_profile(prof, p)}, True


def cmd_potential_eval(opts):
    pot = sp.PairPotential(resolve_profile(opts))
    r = [float(x) for x in (opts.get("r") or [0.0])]
    result = {"r": r, "phi": [float(v) for v in np.atleast_1d(pot(np.array(r)))]}
    if opts.get("k"):
        k = [float(x) for x in opts.k]
        result["k"] = k
        result["phi_hat"] = [float(v) for v in np.atleast_1d(pot.phi_hat(np.array(k)))]
    return result, {}, True


def cmd_potential_tabulate(opts):
    prof = resolve_profile(opts)
    pot = sp.PairPotential(prof)
    r_max = opts.r_max or 40.0 / prof.cutoff
    r = np.linspace(0.0, r_max, opts.points)
    k = np.linspace(0.0, prof.cutoff, opts.points)
    phi, phi_hat = pot(r), pot.phi_hat(k)
    result = {"r_max": r_max, "points": opts.points, "phi_at_zero": float(phi[0]),
              "phi_hat_at_zero": float(phi_hat[0])}
    return result, {
        "phi.csv": lambda p: sp.write_two_column_csv(p, ("r", "phi"), r, phi),
        "phi_hat.csv": lambda p: sp.write_two_column_csv(p, ("k", "phi_hat"), k, phi_hat),
    }, True


def cmd_lattice_info(opts):
    config = resolve_lattice(opts, opts.k0)
    rec = config.reciprocal
    result = {"configuration": la.config_to_dict(config), "density": config.density,
              "volume": config.basis.volume, "q": config.q, "k0": opts.k0,
              "admissible": config.is_admissible(opts.k0), "c_type": config.c_type(),
              "minimal": config.is_minimal(),
              "reciprocal_generators": rec.generators.tolist()}
    return result, {"shells.csv": lambda p: la.write_shells_csv(p, config.basis, 2.0 * opts.k0)}, True


def cmd_lattice_thresholds(opts):
    rows = la.threshold_table(opts.k0)
    table = [{"name": r.name, "closed_form": r.closed_form, "computed": r.computed,
              "relative_difference": r.relative_difference} for r in rows]
    by = {r.name: r.computed for r in rows}
    ordered = by["bcc"] < by["fcc"] < by["sc"]
    ok = ordered and all(r.relative_difference <= 1e-10 for r in rows)
    result = {"k0": opts.k0, "thresholds": table, "bcc_fcc_sc_ordered": ordered}
    return result, {"thresholds.csv": lambda p: _write_csv_rows(
        p, ["name", "closed_form", "computed", "relative_difference"],
        [(t["name"], t["closed_form"], t["computed"], t["relative_difference"]) for t in table])}, ok


def cmd_lattice_minimal_bravais(opts):
    res = la.minimal_bravais_check(opts.dimension, opts.k0, restarts=opts.restarts, seed=opts.seed)
    result = {"dimension": opts.dimension, "k0": opts.k0, "seed": opts.seed, "identified": res.name,
              "density": res.density, "closed_form": res.closed_form, "relative_error": res.relative_error,
              "shortest_norm": res.shortest_norm, "reciprocal_gram": res.reciprocal_gram.tolist()}
    ok = res.name == {1: "chain", 2: "triangular", 3: "bcc"}[opts.dimension] and res.relative_error <= 1e-6
    return result, {}, ok


def cmd_energy_density(opts):
    prof = resolve_profile(opts)
    config = resolve_lattice(opts, prof.cutoff)
    rep = ee.energy_density(prof, config)
    result = rep.to_dict()
    result["configuration"] = la.config_to_dict(config)
    result["admissible"] = config.is_admissible(prof.cutoff)
    result["relative_excess"] = rep.excess / abs(rep.energy_density) if rep.energy_density else rep.excess
    return result, {"shells.csv": rep.write_shell_csv}, True


def _load_positions(path: str, d: int) -> np.ndarray:
    data = np.loadtxt(path, delimiter=",", ndmin=2, comments="#")
    if data.shape[1] < d:
        raise InvalidParameter(f"positions file needs {d} columns")
    return data[:, :d]


def cmd_energy_box(opts):
    prof = resolve_profile(opts)
    config = resolve_lattice(opts, prof.cutoff)
    cell = la.PeriodCell(config.basis, _multipliers(opts, config.dimension))
    if opts.get("positions"):
        pts, frac = _load_positions(opts.positions, cell.dimension), False
    else:
        pts, frac = cell.configuration_points(config), True
    box = ee.box_energy(prof, cell, pts, fractional=frac)
    result = {"energy": box.energy, "structure_term": box.structure_term, "floor": box.constant_term,
              "n": box.n_particles, "volume": box.volume, "residual": box.residual(),
              "multipliers": list(cell.multipliers)}
    rows = [(float(k), " ".join(str(int(x)) for x in n), float(w), float(s))
            for k, n, w, s in zip(box.k_norms, box.labels, box.phi_hat, box.s2)]
    return result, {"structure.csv": lambda p: _write_csv_rows(p, ["k_norm", "labels", "phi_hat", "s2"], rows)}, True


def cmd_energy_field(opts):
    prof = resolve_profile(opts)
    config = resolve_lattice(opts, prof.cutoff)
    rng = np.random.default_rng(opts.seed)
    n = opts.points
    pts = rng.random((n, config.dimension)) @ config.basis.generators
    rep = ee.external_field(prof, config, pts)
    rel = rep.max_deviation / abs(rep.reference) if rep.reference else rep.max_deviation
    admissible = config.is_admissible(prof.cutoff)
    result = {"seed": opts.seed, "points": n, "reference": rep.reference, "max_deviation": rep.max_deviation,
              "relative_deviation": rel, "admissible": admissible}
    ok = (not admissible) or rel <= 1e-10
    rows = [tuple(p) + (float(v),) for p, v in zip(pts, rep.values)]
    header = [f"x{i}" for i in range(config.dimension)] + ["field"]
    return result, {"field.csv": lambda p: _write_csv_rows(p, header, rows)}, ok


def cmd_energy_oracle(opts):
    prof = resolve_profile(opts)
    config = resolve_lattice(opts, prof.cutoff)
    rc = opts.get("cutoff_radius") or 40.0 / prof.cutoff
    o = ee.realspace_energy_oracle(prof, config, rc, opts.tolerance)
    e = ee.energy_density(prof, config).energy_density
    diff = abs(o.value - e)
    result = {"reciprocal": e, "realspace": o.value, "difference": diff, "tail_bound": o.tail_bound,
              "cutoff_radius": rc, "pairs": o.pairs, "within_bound": diff <= o.tail_bound}
    return result, {}, diff <= o.tail_bound


def cmd_verify_perturb(opts):
    prof = resolve_profile(opts)
    config = resolve_lattice(opts, prof.cutoff)
    res = gv.perturbation_test(prof, config, _multipliers(opts, config.dimension), opts.mode,
                               opts.get("mu"), opts.trials, opts.seed, opts.threads)
    result = res.summary()
    result["seed"] = opts.seed
    return result, {"trials.jsonl": res.write_jsonl, "summary.csv": res.write_summary_csv}, res.passed


def cmd_verify_deform(opts):
    prof = resolve_profile(opts)
    config = resolve_lattice(opts, prof.cutoff)
    scan = gv.deformation_scan(prof, config, opts.samples, opts.step, opts.seed)
    result = {"seed": opts.seed, "samples": len(scan.samples), "admissible": len(scan.admissible),
              "plateau": scan.plateau, "max_plateau_deviation": scan.max_plateau_deviation,
              "min_inadmissible_excess": scan.min_inadmissible_excess, "passed": scan.passed}
    rows = [(s.q, int(s.admissible), s.energy_density, s.excess, s.determinant) for s in scan.samples]
    return result, {"deformations.csv": lambda p: _write_csv_rows(
        p, ["q", "admissible", "energy_density", "excess", "determinant"], rows)}, scan.passed


def cmd_verify_threshold_unique(opts):
    prof = resolve_profile(opts)
    rep = gv.uniqueness_at_threshold(prof, prof.dimension, n_random=opts.n_random, seed=opts.seed)
    result = rep.to_dict()
    result["seed"] = opts.seed
    result["min_relative_gap"] = rep.min_relative_gap
    ok = rep.passed(0.0)
    rows = [(c.name, c.n_offsets, c.q, c.energy_density, c.gap, c.relative_gap) for c in rep.competitors]
    return result, {"competitors.csv": lambda p: _write_csv_rows(
        p, ["name", "n_offsets", "q", "energy_density", "gap", "relative_gap"], rows)}, ok


def cmd_verify_global_min(opts):
    prof = resolve_profile(opts)
    x = resolve_lattice(opts, prof.cutoff)
    other = opts.get("other") or la.NAMES[{1: 0, 2: 2, 3: 4}[prof.dimension]]
    y = la.scale_to_density(resolve_lattice(opts, prof.cutoff, other), x.density)
    rep = gv.global_minimality_check(prof, x, y, opts.radii, opts.get("cutoff_radius"),
                                     centers=opts.centers, seed=opts.seed)
    result = rep.to_dict()
    result["seed"] = opts.seed
    return result, {}, True


def cmd_verify_union(opts):
    prof = resolve_profile(opts)
    items = opts.get("union") or ["bcc"]
    configs = []
    for item in items:
        name, _, rho = item.partition(":")
        cfg = la.named_lattice(name)
        rho_v = float(rho) if rho else la.threshold_closed_form(name, prof.cutoff)
        configs.append(la.scale_to_density(cfg, rho_v))
    rep = gv.union_window_check(prof, configs, opts.window, trials=min(opts.trials, 1000), seed=opts.seed)
    result = rep.to_dict()
    result.pop("gaps")
    result["seed"] = opts.seed
    ok = rep.passed and rep.field_max_deviation <= 1e-10 * abs(rep.field_reference)
    return result, {}, ok


def cmd_optimize_run(opts):
    prof = resolve_profile(opts)
    config = resolve_lattice(opts, prof.cutoff)
    cell = la.PeriodCell(config.basis, _multipliers(opts, config.dimension))
    n = opts.get("n") or cell.n_lattice_points * config.n_offsets
    runs = [opt.minimize(prof, cell, n, opts.method, opts.seed + i, opts.max_iter) for i in range(opts.runs)]
    result = {"runs": [r.to_dict() for r in runs]}
    writers = {}
    for r in runs:
        writers[f"positions-seed{r.seed}.csv"] = r.write_positions_csv
        writers[f"trajectory-seed{r.seed}.csv"] = r.write_trajectory_csv
    return result, writers, all(r.converged for r in runs)


def cmd_optimize_sfmap(opts):
    prof = resolve_profile(opts)
    config = resolve_lattice(opts, prof.cutoff)
    cell = la.PeriodCell(config.basis, _multipliers(opts, config.dimension))
    result = {}
    if opts.get("positions"):
        sf = opt.structure_factor_map(cell, _load_positions(opts.positions, cell.dimension), prof.cutoff)
    else:
        sf = opt.structure_factor_map(cell, cell.configuration_points(config), prof.cutoff, fractional=True)
        fc = opt.factorization_check(cell, config, prof.cutoff)
        result["factorization_max_deviation"] = fc.max_deviation
        result["dual_vectors_in_sublattice"] = fc.in_sublattice
    result.update({"n": sf.n, "dual_vectors": int(sf.s2.size)})
    return result, {"sfmap.csv": sf.write_csv}, True


def cmd_thermo_legendre(opts):
    prof = resolve_profile(opts)
    rhos = opts.get("rho") or [0.0, 0.5, 1.0, 2.0]
    rep = ee.legendre_check(prof, rhos)
    result = rep.to_dict()
    if prof.dimension == 3:
        rho3 = la.threshold_closed_form("bcc", prof.cutoff)
        ratio = rep.phi_at_zero / (2.0 * rep.phi_hat_at_zero)
        result["mu_zero_density"] = ratio
        result["mu_zero_above_threshold"] = ratio > rho3
    ok = rep.max_error <= 1e-6 and rep.stationary
    return result, {}, ok


COMMANDS = {
    "potential": {"build": cmd_potential_build, "eval": cmd_potential_eval, "tabulate": cmd_potential_tabulate},
    "lattice": {"info": cmd_lattice_info, "thresholds": cmd_lattice_thresholds,
                "minimal-bravais": cmd_lattice_minimal_bravais},
    "energy": {"density": cmd_energy_density, "box": cmd_energy_box, "field": cmd_energy_field,
               "oracle": cmd_energy_oracle},
    "verify": {"perturb": cmd_verify_perturb, "deform": cmd_verify_deform,
               "threshold-unique": cmd_verify_threshold_unique, "global-min": cmd_verify_global_min,
               "union": cmd_verify_union},
    "optimize": {"run": cmd_optimize_run, "sfmap": cmd_optimize_sfmap},
    "thermo": {"legendre": cmd_thermo_legendre},
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("common")
    g.add_argument("--config", help="JSON run configuration (flags override it)")
    g.add_argument("--output-dir", help="directory for the JSON summary and CSV tables")
    g.add_argument("--seed", type=int)
    g.add_argument("--threads", type=int, help=f"worker threads (default ${THREADS_ENV} or 1)")
    g.add_argument("--profile", help="preset (triangle, cos_r4, bump_stack) or profile JSON path")
    g.add_argument("--k0", type=float, help="cutoff wave number for presets (default 2 pi)")
    g.add_argument("--dimension", type=int, choices=(1, 2, 3))
    g.add_argument("--n-bumps", type=int)
    g.add_argument("--lattice", help="named lattice or configuration JSON path (default bcc)")
    g.add_argument("--density", help="number density, or 'threshold' (default)")
    g.add_argument("--density-factor", type=float, help="multiplies the density")
    g.add_argument("--c-over-a", type=float)
    g.add_argument("--multipliers", type=int, nargs="+", help="period cell multipliers L")

    parser = argparse.ArgumentParser(prog="crystalgs", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    groups = parser.add_subparsers(dest="group", required=True)
    sub = {name: groups.add_parser(name).add_subparsers(dest="cmd", required=True) for name in COMMANDS}

    def add(group, name, *extra):
        p = sub[group].add_parser(name, parents=[common])
        for args, kwargs in extra:
            p.add_argument(*args, **kwargs)
        p.set_defaults(func=COMMANDS[group][name])
        return p

    add("potential", "build")
    add("potential", "eval", (("--r",), {"type": float, "nargs": "+"}), (("--k",), {"type": float, "nargs": "+"}))
    add("potential", "tabulate", (("--r-max",), {"type": float}), (("--points",), {"type": int}))
    add("lattice", "info")
    add("lattice", "thresholds")
    add("lattice", "minimal-bravais", (("--restarts",), {"type": int}))
    add("energy", "density")
    add("energy", "box", (("--positions",), {"help": "CSV of Cartesian positions"}))
    add("energy", "field", (("--points",), {"type": int}))
    add("energy", "oracle", (("--cutoff-radius",), {"type": float}), (("--tolerance",), {"type": float}))
    add("verify", "perturb", (("--mode",), {"choices": ("canonical", "grand")}), (("--mu",), {"type": float}),
        (("--trials",), {"type": int}))
    add("verify", "deform", (("--samples",), {"type": int}), (("--step",), {"type": float}))
    add("verify", "threshold-unique", (("--n-random",), {"type": int}))
    add("verify", "global-min", (("--other",), {"help": "named lattice Y at the density of X"}),
        (("--radii",), {"type": float, "nargs": "+"}), (("--centers",), {"type": int}),
        (("--cutoff-radius",), {"type": float}))
    add("verify", "union", (("--union",), {"nargs": "+", "help": "name[:density] components"}),
        (("--window",), {"type": float}), (("--trials",), {"type": int}))
    add("optimize", "run", (("--n",), {"type": int}), (("--method",), {"choices": opt.METHODS}),
        (("--runs",), {"type": int}), (("--max-iter",), {"type": int}))
    add("optimize", "sfmap", (("--positions",), {"help": "CSV of Cartesian positions"}))
    add("thermo", "legendre", (("--rho",), {"type": float, "nargs": "+"}))
    return parser


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    raise TypeError(f"not serializable: {type(obj).__name__}")


def _coerce_density(args: argparse.Namespace) -> None:
    if getattr(args, "density", None) not in (None, "threshold"):
        try:
            args.density = float(args.density)
        except ValueError:
            raise UsageError(f"--density must be a number or 'threshold', got {args.density!r}") from None


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        _coerce_density(args)
        opts = _merge(args)
        result, tables, ok = args.func(opts)
    except (UsageError, *_USAGE_ERRORS) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except _CHECK_ERRORS as exc:
        print(f"check failed: {exc}", file=sys.stderr)
        return 1
    doc = {"command": f"{args.group} {args.cmd}", "ok": bool(ok), "result": result,
           "metadata": {"timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(),
                        "version": __version__, "threads": opts.threads, "argv": list(sys.argv[1:] if argv is None else argv)}}
    text = json.dumps(doc, indent=2, default=_jsonable)
    print(text)
    if opts.get("output_dir"):
        out = Path(opts.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        stem = f"{args.group}-{args.cmd}"
        (out / f"{stem}.json").write_text(text + "\n")
        for name, writer in tables.items():
            writer(out / f"{stem}-{name}")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
