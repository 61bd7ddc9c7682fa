"""
Run configuration, output files and the ``fsi`` command line.

A run is described by an INI file::

    [mesh]
    builtin = two_cube       ; or: path = mesh.txt
    n = 2

    [material]
    mu = 1.0

    [solver]
    T = 0.05
    dt = 0.001

    [initial]
    v0 = shear(1e-3)
    xi1 = zero

    [output]
    directory = out

Unset keys take their defaults; unknown sections or keys are errors.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import json
import logging
import math
import os
import re
import sys
import tempfile
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .assembly import InterfaceMismatchError, compose_initial, discretize
from .constitutive import MaterialParams, tensor_selftest
from .kinematics import DEFAULT_DET_FLOOR, DetFloorError, determinant
from .mesh import FLUID, MeshError, load_mesh, two_cube_mesh
from .norms import gram_norms
from .pressure import DEFAULT_INFSUP_THRESHOLD, SingularPressureError, measure_infsup
from .solvers import (IncompatibleDataError, NonContractionError, SolverConfig, make_basis, nonlinear_solve,
                      time_window_bisect)

__all__ = ["RunConfig", "ConfigError", "parse_config", "load_config", "format_config", "initial_data",
           "emit_outputs", "run", "main", "SCHEMAS", "EXIT_OK", "EXIT_CONFIG", "EXIT_SOLVER"]

log = logging.getLogger("fsi")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_CHECK = 0, 1, 2, 3

# versioned schema string and columns of every CSV output
SCHEMAS = {
    "field": ("fsi-field/1", ("dof_index", "x", "y", "z", "component", "value")),
    "timeseries": ("fsi-timeseries/1", ("step", "time", "field", "metric", "value")),
    "energy": ("fsi-energy/1", ("step",) + ("time", "kinetic_fluid", "kinetic_solid", "elastic", "dissipation",
                                             "coefficient_gradient", "mass_correction", "elastic_correction",
                                             "boundary_work", "imbalance", "relative_imbalance")),
    "contraction": ("fsi-contraction/1", ("attempt", "T", "loop", "sweep", "iteration", "update", "relative",
                                          "ratio")),
    "interface": ("fsi-interface/1", ("step", "time", "velocity_residual", "traction_residual")),
    "pressure": ("fsi-pressure/1", ("step", "time", "residual_norm", "load_norm")),
    "membership": ("fsi-membership/1", ("norm", "term", "value", "M_bound")),
    "compatibility": ("fsi-compatibility/1", ("condition", "residual", "tolerance", "severity", "status")),
}


class ConfigError(ValueError):
    """Invalid run configuration; ``key`` names the offending ``section.key``."""

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


# ---------------------------------------------------------------------------
# configuration


@dataclass
class RunConfig:
    mesh_path: str = ""
    mesh_builtin: str = "two_cube"
    mesh_n: int = 2
    mesh_length: float = 1.0
    degree: int = 2
    material: MaterialParams = field(default_factory=MaterialParams)
    solver: SolverConfig = field(default_factory=SolverConfig)
    threads: int = 1
    det_floor: float = DEFAULT_DET_FLOOR
    compatibility: str = "interface"
    infsup_threshold: float = DEFAULT_INFSUP_THRESHOLD
    v0: str = "zero"
    xi1: str = "zero"
    p0: str = "zero"
    dtp0: str = ""
    d2tp0: str = ""
    inflow: str = "zero"
    output_dir: str = "out"
    snapshots: bool = True


# (section, key) -> (attribute path, type)
_KEYS = {
    ("mesh", "path"): ("mesh_path", str),
    ("mesh", "builtin"): ("mesh_builtin", str),
    ("mesh", "n"): ("mesh_n", int),
    ("mesh", "length"): ("mesh_length", float),
    ("mesh", "degree"): ("degree", int),
    **{("material", f.name): ("material." + f.name, float) for f in fields(MaterialParams)},
    **{("solver", f.name): ("solver." + f.name, int if f.type == "int" else float) for f in fields(SolverConfig)},
    ("solver", "threads"): ("threads", int),
    ("solver", "det_floor"): ("det_floor", float),
    ("solver", "compatibility"): ("compatibility", str),
    ("solver", "infsup_threshold"): ("infsup_threshold", float),
    ("initial", "v0"): ("v0", str),
    ("initial", "xi1"): ("xi1", str),
    ("initial", "p0"): ("p0", str),
    ("initial", "dtp0"): ("dtp0", str),
    ("initial", "d2tp0"): ("d2tp0", str),
    ("initial", "inflow"): ("inflow", str),
    ("output", "directory"): ("output_dir", str),
    ("output", "snapshots"): ("snapshots", bool),
}

_PRESET = re.compile(r"^(zero|shear|dilation)(?:\(\s*([^)]*)\s*\))?$")


def _convert(text: str, kind, key: str):
    try:
        if kind is bool:
            low = text.strip().lower()
            if low not in ("true", "false", "yes", "no", "1", "0"):
                raise ValueError(text)
            return low in ("true", "yes", "1")
        if kind is int:
            return int(text)
        if kind is float:
            val = float(text)
            if not math.isfinite(val):
                raise ValueError(text)
            return val
        return text.strip()
    except ValueError:
        raise ConfigError(f"invalid value {text!r} for {key}", key) from None


def _check_spec(text: str, key: str, allow_presets: bool = True):
    if not text or text.startswith("file:"):
        return
    m = _PRESET.match(text)
    if not (allow_presets and m) and text != "zero":
        raise ConfigError(f"invalid initial data {text!r} for {key}", key)
    if m and m.group(1) != "zero":
        try:
            float(m.group(2))
        except (TypeError, ValueError):
            raise ConfigError(f"preset {text!r} for {key} needs one numeric amplitude", key) from None


def parse_config(text: str, base_dir: Path | str | None = None) -> RunConfig:
    """Parse INI text into a validated :class:`RunConfig`."""
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"), interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed configuration: {exc}") from None
    top = {"material": {}, "solver": {}}
    flat = {}
    known_sections = {s for s, _ in _KEYS}
    for section in cp.sections():
        if section not in known_sections:
            raise ConfigError(f"unknown section [{section}]", section)
        for key, raw in cp.items(section):
            name = f"{section}.{key}"
            if (section, key) not in _KEYS:
                raise ConfigError(f"unknown key {name}", name)
            attr, kind = _KEYS[(section, key)]
            val = _convert(raw, kind, name)
            if "." in attr:
                group, sub = attr.split(".")
                top[group][sub] = val
            else:
                flat[attr] = val
    try:
        material = MaterialParams(**top["material"])
    except ValueError as exc:
        raise ConfigError(str(exc), "material") from None
    try:
        solver = SolverConfig(**top["solver"])
    except ValueError as exc:
        raise ConfigError(str(exc), "solver") from None
    cfg = RunConfig(material=material, solver=solver, **flat)
    for attr in ("v0", "xi1"):
        _check_spec(getattr(cfg, attr), f"initial.{attr}")
    for attr in ("p0", "dtp0", "d2tp0"):
        _check_spec(getattr(cfg, attr), f"initial.{attr}", allow_presets=False)
    if cfg.inflow != "zero":
        raise ConfigError("only a zero inflow datum is supported (initial.inflow = zero)", "initial.inflow")
    if cfg.compatibility not in ("off", "interface", "strict"):
        raise ConfigError(f"invalid value {cfg.compatibility!r} for solver.compatibility", "solver.compatibility")
    if cfg.degree not in (1, 2):
        raise ConfigError(f"mesh.degree must be 1 or 2, got {cfg.degree}", "mesh.degree")
    if cfg.mesh_builtin != "two_cube":
        raise ConfigError(f"unknown builtin mesh {cfg.mesh_builtin!r}", "mesh.builtin")
    if cfg.mesh_n < 1 or not cfg.mesh_length > 0:
        raise ConfigError("builtin mesh needs n >= 1 and length > 0", "mesh.n")
    if cfg.threads < 1:
        raise ConfigError("solver.threads must be at least 1", "solver.threads")
    if not 0 < cfg.det_floor < 1:
        raise ConfigError("solver.det_floor must lie in (0, 1)", "solver.det_floor")
    if base_dir is not None:
        base = Path(base_dir)
        if cfg.mesh_path and not Path(cfg.mesh_path).is_absolute():
            cfg.mesh_path = str(base / cfg.mesh_path)
        if not Path(cfg.output_dir).is_absolute():
            cfg.output_dir = str(base / cfg.output_dir)
        for attr in ("v0", "xi1", "p0", "dtp0", "d2tp0"):
            spec = getattr(cfg, attr)
            if spec.startswith("file:") and not Path(spec[5:]).is_absolute():
                setattr(cfg, attr, "file:" + str(base / spec[5:]))
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read configuration {path}: {exc}") from None
    return parse_config(text, path.parent)


def _fmt(val) -> str:
    if isinstance(val, bool):
        return "true" if val else "false"
    if isinstance(val, float):
        return repr(val)
    return str(val)


def format_config(cfg: RunConfig) -> str:
    """Canonical INI text; parsing it gives back ``cfg``."""
    sections: dict = {}
    for (section, key), (attr, _) in _KEYS.items():
        if "." in attr:
            group, sub = attr.split(".")
            val = getattr(getattr(cfg, group), sub)
        else:
            val = getattr(cfg, attr)
        sections.setdefault(section, []).append(f"{key} = {_fmt(val)}")
    return "\n".join(f"[{s}]\n" + "\n".join(lines) + "\n" for s, lines in sections.items())


# ---------------------------------------------------------------------------
# initial data


def _preset_field(disc, spec: str) -> np.ndarray:
    m = _PRESET.match(spec)
    x = disc.space.node_coords
    out = np.zeros_like(x)
    if m.group(1) == "shear":
        out[:, 0] = float(m.group(2)) * x[:, 1]
    elif m.group(1) == "dilation":
        a = float(m.group(2))
        solid = disc.mesh.vertices[np.unique(disc.mesh.cells[disc.solid_cells])]
        out = a * (x - solid.mean(axis=0))
    return out.ravel()


def _file_field(spec: str, size: int, key: str) -> np.ndarray:
    path = spec[5:]
    try:
        vals = np.loadtxt(path, dtype=float, ndmin=1)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read {key} values from {path}: {exc}", key) from None
    if vals.shape != (size,):
        raise ConfigError(f"{key} file {path} has {vals.size} values, expected {size}", key)
    return vals


def initial_data(cfg: RunConfig, disc, basis=None) -> dict:
    """Ambient v0, xi1 and pressure-space p0, dtp0, d2tp0 from their specifications.

    Presets are combined into one field (the v0 preset on the fluid, the xi1
    preset on the solid) and projected onto the weighted divergence-free
    basis, which makes v0 and xi1 agree on the interface.  Per-dof files are
    used as given.
    """
    n = disc.ndofs
    files = {a: getattr(cfg, a).startswith("file:") for a in ("v0", "xi1")}
    raw = {}
    for a in ("v0", "xi1"):
        spec = getattr(cfg, a)
        raw[a] = _file_field(spec, n, f"initial.{a}") if files[a] else _preset_field(disc, spec)
    if not any(files.values()) and (np.any(raw["v0"]) or np.any(raw["xi1"])):
        basis = basis or make_basis(disc)
        gamma = compose_initial(disc, raw["v0"], raw["xi1"])
        proj = basis.basis_matrix @ (basis.basis_matrix.T @ (basis.mass @ gamma))
        raw["v0"] = raw["xi1"] = proj
    out = dict(raw)
    npr = disc.pspace.ndofs
    for a in ("p0", "dtp0", "d2tp0"):
        spec = getattr(cfg, a)
        if spec.startswith("file:"):
            out[a] = _file_field(spec, npr, f"initial.{a}")
        elif spec == "zero":
            out[a] = np.zeros(npr)
        else:
            out[a] = None
    return out


# ---------------------------------------------------------------------------
# outputs


def _cell(v) -> str:
    if isinstance(v, (float, np.floating)):
        return "%.17g" % v
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    return str(v)


def _atomic_write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix="." + path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except OSError as exc:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise OSError(f"cannot write {path}: {exc}") from exc


def write_csv(path, schema: str, rows) -> Path:
    """Write one CSV with a ``# schema`` line followed by the column header."""
    version, columns = SCHEMAS[schema]
    buf = io.StringIO()
    buf.write(f"# schema: {version}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_cell(v) for v in row])
    path = Path(path)
    _atomic_write(path, buf.getvalue())
    return path


def _field_rows(coords, values, ncomp=3):
    values = np.asarray(values, float)
    for dof, val in enumerate(values):
        node = dof // ncomp
        x, y, z = coords[node]
        yield dof, float(x), float(y), float(z), dof % ncomp, float(val)


def emit_outputs(out_dir, disc=None, result=None, ledgers: dict | None = None, compatibility=None,
                 contraction: list | None = None, failure: dict | None = None, snapshots: bool = True,
                 status: dict | None = None) -> list:
    """Write every output file of one run; ledgers without data get a header only.

    A failed run passes ``failure`` (written to ``failure.json``); otherwise
    ``status`` goes to ``status.json``.
    """
    out = Path(out_dir)
    written = []
    traj = result.trajectory if result is not None else None
    ledgers = ledgers or {}
    energy_rows, ts_rows, iface_rows, p_rows, mem_rows, comp_rows = [], [], [], [], [], []
    if traj is not None:
        t = traj.times
        vel, disp = traj.velocity(), traj.displacement()
        norms = {("velocity", "l2"): gram_norms(disc.grams[("fluid", "l2")], vel),
                 ("velocity", "h1"): gram_norms(disc.grams[("fluid", "h1")], vel),
                 ("displacement", "l2"): gram_norms(disc.grams[("solid", "l2")], disp),
                 ("displacement", "h1"): gram_norms(disc.grams[("solid", "h1")], disp)}
        # solid volume change, to judge whether C_penalty is large enough
        norms[("displacement", "max_abs_det_minus_1")] = np.array(
            [np.max(np.abs(determinant(np.eye(3) + disc.gradients(u, disc.solid_cells)) - 1.0)) for u in disp])
        for (name, metric), vals in norms.items():
            for k in range(len(t)):
                ts_rows.append((k, float(t[k]), name, metric, float(vals[k])))
        if snapshots:
            coords = disc.space.node_coords
            for k in range(len(t)):
                written.append(write_csv(out / "fields" / f"velocity_{k:05d}.csv", "field",
                                         _field_rows(coords, vel[k])))
                written.append(write_csv(out / "fields" / f"displacement_{k:05d}.csv", "field",
                                         _field_rows(coords, disp[k])))
            pcoords = disc.mesh.vertices[disc.pspace.dof_vertices]
            for k, p in enumerate(result.pressure):
                written.append(write_csv(out / "fields" / f"pressure_{k:05d}.csv", "field",
                                         _field_rows(pcoords, p.values, 1)))
        for k, p in enumerate(result.pressure):
            p_rows.append((k, p.time_stamp, p.residual_norm, p.load_norm))
    if "energy" in ledgers:
        energy_rows = [(k,) + tuple(float(v) for v in row) for k, row in enumerate(ledgers["energy"].rows())]
    if "interface" in ledgers:
        vr, tr = ledgers["interface"]
        tt = traj.times
        iface_rows = [(k, 0.5 * float(tt[k] + tt[k + 1]), float(vr[k]), float(tr[k])) for k in range(len(vr))]
    if "membership" in ledgers:
        m = ledgers["membership"]
        for norm in ("F", "S"):
            for term in ("l2", "h1", "dt1", "dt2", "total"):
                mem_rows.append((norm, term, float(m[norm][term]), float(m["M_bound"])))
    if compatibility is not None:
        ok = compatibility.passed
        for c in sorted(compatibility.residuals):
            r = compatibility.residuals[c]
            state = "skipped" if r is None else ("pass" if ok[c] else "fail")
            comp_rows.append((c, "" if r is None else float(r), float(compatibility.tolerances[c]),
                              compatibility.severity[c], state))
    written.append(write_csv(out / "timeseries.csv", "timeseries", ts_rows))
    written.append(write_csv(out / "energy.csv", "energy", energy_rows))
    written.append(write_csv(out / "contraction.csv", "contraction", contraction or []))
    written.append(write_csv(out / "interface.csv", "interface", iface_rows))
    written.append(write_csv(out / "pressure.csv", "pressure", p_rows))
    written.append(write_csv(out / "membership.csv", "membership", mem_rows))
    written.append(write_csv(out / "compatibility.csv", "compatibility", comp_rows))
    status = failure or status or {"status": "converged", "exit_code": EXIT_OK}
    path = out / ("failure.json" if failure else "status.json")
    _atomic_write(path, json.dumps(status, indent=2, sort_keys=True, default=_json_default) + "\n")
    stale = out / ("status.json" if failure else "failure.json")
    if stale.exists():
        stale.unlink()
    written.append(path)
    return written


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return str(obj)


def _contraction_rows(attempt: int, T: float, logs) -> list:
    rows = []
    for sweep, lg in enumerate(logs):
        if lg is None:
            continue
        for it, upd, rel, ratio in lg.as_rows():
            rows.append((attempt, float(T), lg.loop, sweep, it, float(upd), float(rel), float(ratio)))
    return rows


# ---------------------------------------------------------------------------
# commands


def _threads(cfg: RunConfig) -> int:
    env = os.environ.get("FSI_THREADS")
    if env:
        try:
            val = int(env)
        except ValueError:
            raise ConfigError(f"FSI_THREADS must be an integer, got {env!r}", "FSI_THREADS") from None
        if val < 1:
            raise ConfigError("FSI_THREADS must be at least 1", "FSI_THREADS")
        return val
    return cfg.threads


def build_discretization(cfg: RunConfig):
    if cfg.mesh_path:
        mesh = load_mesh(cfg.mesh_path)
    else:
        mesh = two_cube_mesh(cfg.mesh_n, cfg.mesh_length)
    return discretize(mesh, cfg.material, degree=cfg.degree, threads=_threads(cfg), det_floor=cfg.det_floor)


def _solve_logs(res) -> list:
    return list(res.inner_logs) + [res.outer_log]


def run(cfg: RunConfig, out_dir=None) -> int:
    """Solve, write outputs and return the exit status."""
    from .diagnostics import energy_ledger, interface_residuals, membership_ledger

    out = Path(out_dir or cfg.output_dir)
    try:
        disc = build_discretization(cfg)
        basis = make_basis(disc)
        data = initial_data(cfg, disc, basis)
    except (ConfigError, MeshError) as exc:
        return _fail(out, "config-error", exc, EXIT_CONFIG)
    except ValueError as exc:
        return _fail(out, "config-error", exc, EXIT_CONFIG)

    attempts = []

    def solve(sc):
        attempts.append(sc.T)
        return nonlinear_solve(disc, data["v0"], data["xi1"], data["p0"], sc, basis, cfg.compatibility,
                               data["dtp0"], data["d2tp0"])

    try:
        outcome = time_window_bisect(solve, cfg.solver)
    except (IncompatibleDataError, InterfaceMismatchError) as exc:
        return _fail(out, "incompatible-data", exc, EXIT_CONFIG, compatibility=getattr(exc, "report", None))
    except NonContractionError as exc:
        rows = []
        for a, (T, _, err) in enumerate(getattr(exc, "failures", [])):
            logs = list(getattr(err, "inner_logs", [])) + [getattr(err, "log", None)]
            rows += _contraction_rows(a, T, logs)
        return _fail(out, "non-contraction", exc, EXIT_SOLVER, contraction=rows)
    except DetFloorError as exc:
        return _fail(out, "det-floor", exc, EXIT_SOLVER)
    except SingularPressureError as exc:
        return _fail(out, "singular-pressure", exc, EXIT_SOLVER)

    res = outcome.result
    rows = []
    for a, (T, _, err) in enumerate(outcome.failures):
        rows += _contraction_rows(a, T, list(getattr(err, "inner_logs", [])) + [getattr(err, "log", None)])
    rows += _contraction_rows(len(outcome.failures), outcome.config.T, _solve_logs(res))
    ledgers = {"energy": energy_ledger(res.trajectory, disc),
               "interface": interface_residuals(disc, res.trajectory, res.pressure),
               "membership": membership_ledger(disc, res.trajectory, cfg.solver.M_bound)}
    status = {"status": "converged", "exit_code": EXIT_OK, "T": outcome.config.T, "dt": outcome.config.dt,
              "halvings": outcome.halvings, "basis_dimension": basis.dimension,
              "member": ledgers["membership"]["member"],
              "max_relative_imbalance": float(np.max(ledgers["energy"].relative_imbalance, initial=0.0))}
    emit_outputs(out, disc, res, ledgers, res.compatibility, rows, snapshots=cfg.snapshots, status=status)
    print(f"converged: T={outcome.config.T:.17g} steps={res.trajectory.nsteps} "
          f"outer iterations={res.outer_log.iterations}")
    return EXIT_OK


def _fail(out, kind, exc, code, contraction=None, compatibility=None) -> int:
    report = {"status": kind, "exit_code": code, "message": str(exc)}
    if getattr(exc, "key", None):
        report["key"] = exc.key
    if getattr(exc, "loop", None):
        report["loop"] = exc.loop
    if isinstance(exc, DetFloorError):
        report["value"] = exc.value
    try:
        emit_outputs(out, contraction=contraction, compatibility=compatibility, failure=report)
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
    print(f"error ({kind}): {exc}", file=sys.stderr)
    return code


def check(cfg: RunConfig) -> int:
    from .diagnostics import check_compatibility

    disc = build_discretization(cfg)
    data = initial_data(cfg, disc)
    rep = check_compatibility(disc, data["v0"], data["xi1"], data["p0"], data["dtp0"], data["d2tp0"])
    ok = rep.passed
    for c in sorted(rep.residuals):
        r = rep.residuals[c]
        if r is None:
            print(f"condition {c}: skipped")
        else:
            state = "pass" if ok[c] else "FAIL"
            print(f"condition {c}: residual {r:.17g} tolerance {rep.tolerances[c]:.17g} "
                  f"[{rep.severity[c]}] {state}")
    return EXIT_CHECK if rep.failures(strict=(cfg.compatibility != "interface")) else EXIT_OK


def infsup(cfg: RunConfig) -> int:
    disc = build_discretization(cfg)
    rep = measure_infsup(disc, threshold=cfg.infsup_threshold)
    print(f"beta_h {rep.beta_h:.17g}")
    print(f"velocity_degree {rep.velocity_degree} pressure_degree {rep.pressure_degree}")
    print(f"velocity_test_dofs {rep.n_velocity} pressure_dofs {rep.n_pressure}")
    print(f"threshold {rep.threshold:.17g} {'pass' if rep.passed else 'FAIL'}")
    return EXIT_OK if rep.passed else EXIT_CHECK


def selftest() -> int:
    errs = tensor_selftest()
    print(f"c max relative error {errs['c']:.17g}")
    print(f"d max relative error {errs['d']:.17g}")
    return EXIT_OK if max(errs["c"], errs["d"]) <= 1e-6 else EXIT_CHECK


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="fsi", description="Monolithic Lagrangian fluid-structure solver")
    parser.add_argument("-v", "--verbose", action="store_true", help="log iteration progress")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in (("run", "solve and write outputs"), ("check", "initial-data compatibility report"),
                       ("infsup", "discrete inf-sup constant")):
        p = sub.add_parser(name, help=text)
        p.add_argument("config", help="INI run configuration")
        if name == "run":
            p.add_argument("-o", "--output", help="override [output] directory")
    sub.add_parser("tensor-selftest", help="finite-difference check of the coefficient tensors")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(message)s")
    if args.command == "tensor-selftest":
        return selftest()
    try:
        cfg = load_config(args.config)
        if args.command == "run":
            return run(cfg, args.output)
        if args.command == "check":
            return check(cfg)
        return infsup(cfg)
    except (ConfigError, MeshError) as exc:
        if args.command == "run":
            # the configured directory is unknown here; use the override or the default next to the file
            out = args.output or Path(args.config).parent / RunConfig.output_dir
            return _fail(out, "config-error", exc, EXIT_CONFIG)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
