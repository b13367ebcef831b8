"""Scenario files and result serialization.

Scenario files are JSON. Any physical quantity is either a bare number in SI
units or an object ``{"value": x, "unit": "km"}``. Profiles are periodic over
the horizon and are given as

    {"type": "constant", "value": 500, "unit": "psi"}
    {"type": "sinusoid", "mean": 68.094, "unit": "kg/s",
     "terms": [{"amplitude": 6.8094, "harmonic": 2, "phase": 0.0}]}
    {"type": "table", "times": [...], "time_unit": "h", "values": [...], "unit": "kg/s"}
    {"type": "csv", "path": "profile.csv", "time_unit": "h", "unit": "kg/s"}

Grid results are CSV in heatmap layout: one row per node or edge, one column per
grid time, floats written with ``repr`` so that reading reproduces them exactly.
"""
from __future__ import annotations

import copy
import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import numpy as np

from .errors import InvalidArgument
from .network import Compressor, Junction, Network, Pipe
from .profiles import SinusoidProfile, SinusoidTerm, SplineProfile, constant
from .scenario import Scenario
from .units import DEFAULT_SOUND_SPEED, PSI_TO_PA, GasConstants


class SchemaError(InvalidArgument):
    """Scenario document is malformed; ``field`` names the offending location."""

    def __init__(self, message, field=""):
        super().__init__(message)
        self.field = field


_UNITS = {
    "length": {"m": 1.0, "km": 1000.0, "mi": 1609.344},
    "pressure": {"Pa": 1.0, "kPa": 1e3, "MPa": 1e6, "bar": 1e5, "psi": PSI_TO_PA},
    "mass_flow": {"kg/s": 1.0},
    "time": {"s": 1.0, "min": 60.0, "h": 3600.0},
    "speed": {"m/s": 1.0},
    "density": {"kg/m3": 1.0, "kg/m^3": 1.0},
    "ratio": {"1": 1.0, "": 1.0},
}

_quantity = {
    "oneOf": [
        {"type": "number"},
        {
            "type": "object",
            "required": ["value", "unit"],
            "properties": {"value": {"type": "number"}, "unit": {"type": "string"}},
            "additionalProperties": False,
        },
    ]
}

_profile = {
    "type": "object",
    "required": ["type"],
    "properties": {
        "type": {"enum": ["constant", "sinusoid", "table", "csv"]},
        "value": {"type": "number"},
        "mean": {"type": "number"},
        "unit": {"type": "string"},
        "time_unit": {"type": "string"},
        "terms": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["amplitude", "harmonic"],
                "properties": {
                    "amplitude": {"type": "number"},
                    "harmonic": {"type": "integer", "minimum": 1},
                    "phase": {"type": "number"},
                },
                "additionalProperties": False,
            },
        },
        "times": {"type": "array", "items": {"type": "number"}},
        "values": {"type": "array", "items": {"type": "number"}},
        "path": {"type": "string"},
    },
    "additionalProperties": False,
    "allOf": [
        {"if": {"properties": {"type": {"const": "constant"}}}, "then": {"required": ["value"]}},
        {"if": {"properties": {"type": {"const": "sinusoid"}}}, "then": {"required": ["mean"]}},
        {"if": {"properties": {"type": {"const": "table"}}}, "then": {"required": ["times", "values"]}},
        {"if": {"properties": {"type": {"const": "csv"}}}, "then": {"required": ["path"]}},
    ],
}

SCENARIO_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["network", "slack"],
    "properties": {
        "name": {"type": "string"},
        "description": {"type": "string"},
        "constants": {
            "type": "object",
            "properties": {
                "sound_speed": _quantity,
                "ell0": _quantity,
                "rho0": _quantity,
                "horizon": _quantity,
            },
            "additionalProperties": False,
        },
        "network": {
            "type": "object",
            "required": ["junctions", "pipes"],
            "properties": {
                "junctions": {
                    "type": "array",
                    "minItems": 1,
                    "items": {
                        "type": "object",
                        "required": ["id", "kind", "p_min", "p_max"],
                        "properties": {
                            "id": {"type": "integer"},
                            "kind": {"enum": ["slack", "nonslack"]},
                            "p_min": _quantity,
                            "p_max": _quantity,
                        },
                        "additionalProperties": False,
                    },
                },
                "pipes": {
                    "type": "array",
                    "minItems": 1,
                    "items": {
                        "type": "object",
                        "required": ["id", "from", "to", "length", "diameter", "friction"],
                        "properties": {
                            "id": {"type": "integer"},
                            "from": {"type": "integer"},
                            "to": {"type": "integer"},
                            "length": _quantity,
                            "diameter": _quantity,
                            "friction": {"type": "number"},
                        },
                        "additionalProperties": False,
                    },
                },
                "compressors": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "required": ["pipe", "orientation", "ratio"],
                        "properties": {
                            "pipe": {"type": "integer"},
                            "orientation": {"enum": ["+", "-"]},
                            "ratio": _profile,
                        },
                        "additionalProperties": False,
                    },
                },
            },
            "additionalProperties": False,
        },
        "slack": {"type": "object", "additionalProperties": _profile},
        "withdrawals": {"type": "object", "additionalProperties": _profile},
        "grid": {
            "type": "object",
            "properties": {"N": {"type": "integer", "minimum": 8}, "delta": _quantity},
            "additionalProperties": False,
        },
        "noise": {
            "type": "object",
            "properties": {"level": {"type": "number", "minimum": 0}, "seed": {"type": "integer"}},
            "additionalProperties": False,
        },
        "solver": {
            "type": "object",
            "properties": {
                "tol": {"type": "number", "exclusiveMinimum": 0},
                "max_iter": {"type": "integer", "minimum": 1},
                "compl_tol": {"type": "number", "exclusiveMinimum": 0},
                "mu_init": {"type": "number", "exclusiveMinimum": 0},
            },
            "additionalProperties": False,
        },
        "estimation": {
            "type": "object",
            "properties": {
                "mode": {"enum": ["noiseless", "state", "joint"]},
                "truth": {"enum": ["simulator", "grid"]},
                "W1": {"oneOf": [{"type": "number", "minimum": 0}, {"type": "object"}]},
                "W2": {"oneOf": [{"type": "number", "minimum": 0}, {"type": "object"}]},
                "lambda_bounds": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
                "flow_floor": _quantity,
                "measurements": {
                    "type": "object",
                    "required": ["withdrawals", "pressures"],
                    "properties": {
                        "withdrawals": {"type": "string"},
                        "pressures": {"type": "string"},
                        "pressure_unit": {"enum": ["psi", "Pa"]},
                    },
                    "additionalProperties": False,
                },
            },
            "additionalProperties": False,
        },
    },
    "additionalProperties": False,
}


def _field_path(err) -> str:
    return "/".join(str(p) for p in err.absolute_path) or "<root>"


def validate_document(doc):
    try:
        jsonschema.validate(doc, SCENARIO_SCHEMA)
    except jsonschema.ValidationError as err:
        raise SchemaError(f"{_field_path(err)}: {err.message}", _field_path(err)) from err


def quantity(q, dim, where=""):
    """Convert a number or ``{"value", "unit"}`` object to SI."""
    if isinstance(q, dict):
        unit = q["unit"]
        table = _UNITS[dim]
        if unit not in table:
            raise SchemaError(f"{where}: unit {unit!r} is not a {dim} unit ({', '.join(table)})", where)
        return float(q["value"]) * table[unit]
    return float(q)


def _unit_factor(unit, dim, where):
    if unit is None:
        return 1.0
    table = _UNITS[dim]
    if unit not in table:
        raise SchemaError(f"{where}: unit {unit!r} is not a {dim} unit ({', '.join(table)})", where)
    return table[unit]


@dataclass
class ScenarioFile:
    """A loaded scenario document and the run settings that travel with it."""

    scenario: Scenario
    N: int = 24
    noise_level: float = 0.0
    seed: int = 0
    solver: dict = field(default_factory=dict)
    estimation: dict = field(default_factory=dict)
    document: dict = field(default_factory=dict)
    base_dir: Path | None = None

    @property
    def mode(self):
        return self.estimation.get("mode", "state")

    @property
    def flow_floor(self):
        """Flux-error threshold in kg/s."""
        return quantity(self.estimation.get("flow_floor", 1.0), "mass_flow", "estimation/flow_floor")

    @property
    def truth_source(self):
        return self.estimation.get("truth", "simulator")

    def weights(self, key, ids):
        w = self.estimation.get(key, 1.0)
        if isinstance(w, dict):
            return np.array([float(w.get(str(j), 1.0)) for j in ids])
        return np.full(len(ids), float(w))


class _ProfileReader:
    def __init__(self, base_dir, horizon, time_scale):
        self.base_dir = base_dir
        self.horizon = horizon
        self.time_scale = time_scale

    def __call__(self, obj, dim, value_scale, where):
        """Nondimensional profile from a document entry; ``value_scale`` divides SI values."""
        f = _unit_factor(obj.get("unit"), dim, f"{where}/unit") / value_scale
        T_hat = self.horizon / self.time_scale
        kind = obj["type"]
        if kind == "constant":
            return constant(obj["value"] * f, T_hat)
        if kind == "sinusoid":
            terms = tuple(
                SinusoidTerm(t["amplitude"] * f, int(t["harmonic"]), float(t.get("phase", 0.0))) for t in obj.get("terms", [])
            )
            return SinusoidProfile(obj["mean"] * f, terms, T_hat)
        if kind == "table":
            times, values = obj["times"], obj["values"]
        else:
            times, values = self._read_csv(obj["path"], where)
        tf = _unit_factor(obj.get("time_unit", "s"), "time", f"{where}/time_unit")
        t = np.asarray(times, dtype=float) * tf
        v = np.asarray(values, dtype=float) * f
        if t.size != v.size or t.size < 4:
            raise SchemaError(f"{where}: tabulated profile needs matching times/values with at least 4 samples", where)
        if not (np.all(np.diff(t) > 0) and t[0] >= 0 and t[-1] <= self.horizon):
            raise SchemaError(f"{where}: times must increase within [0, horizon]", where)
        # a sample at the horizon repeats the one at t = 0; the spline closes the period itself
        if t[-1] == self.horizon:
            t, v = t[:-1], v[:-1]
        return SplineProfile(tuple(t / self.time_scale), tuple(v), T_hat)

    def _read_csv(self, path, where):
        p = Path(path)
        if not p.is_absolute():
            if self.base_dir is None:
                raise SchemaError(f"{where}/path: relative path needs a scenario file location", f"{where}/path")
            p = self.base_dir / p
        if not p.is_file():
            raise SchemaError(f"{where}/path: file not found: {p}", f"{where}/path")
        times, values = [], []
        with open(p, newline="") as fh:
            for row in csv.reader(fh):
                if not row or row[0].strip().startswith("#"):
                    continue
                try:
                    times.append(float(row[0]))
                    values.append(float(row[1]))
                except (ValueError, IndexError):
                    if times:
                        raise SchemaError(f"{where}/path: malformed row {row!r} in {p}", f"{where}/path") from None
        return times, values


def _first_slack_pressure(doc, horizon):
    jid = next(j["id"] for j in doc["network"]["junctions"] if j["kind"] == "slack")
    prof = doc["slack"].get(str(jid))
    if prof is None:
        raise SchemaError(f"slack/{jid}: missing slack pressure profile", f"slack/{jid}")
    f = _unit_factor(prof.get("unit"), "pressure", f"slack/{jid}/unit")
    if prof["type"] == "constant":
        return prof["value"] * f
    if prof["type"] == "sinusoid":
        return prof["mean"] * f
    # tabulated: plain average of the samples is good enough for a scale
    reader = _ProfileReader(None, horizon, 1.0)
    vals = prof["values"] if prof["type"] == "table" else reader._read_csv(prof["path"], f"slack/{jid}")[1]
    return float(np.mean(vals)) * f


def load_document(doc, base_dir=None) -> ScenarioFile:
    """Validate a scenario document and build the nondimensional :class:`Scenario`."""
    doc = copy.deepcopy(doc)
    validate_document(doc)
    base_dir = Path(base_dir) if base_dir is not None else None
    consts = doc.get("constants", {})
    a = quantity(consts.get("sound_speed", DEFAULT_SOUND_SPEED), "speed", "constants/sound_speed")
    horizon = quantity(consts.get("horizon", 86400.0), "time", "constants/horizon")
    net_doc = doc["network"]
    lengths = [quantity(p["length"], "length", f"network/pipes/{i}/length") for i, p in enumerate(net_doc["pipes"])]
    ell0 = quantity(consts["ell0"], "length", "constants/ell0") if "ell0" in consts else max(lengths)
    if "rho0" in consts:
        rho0 = quantity(consts["rho0"], "density", "constants/rho0")
    else:
        rho0 = _first_slack_pressure(doc, horizon) / a**2
    try:
        c = GasConstants(a=a, ell0=ell0, rho0=rho0, T_horizon=horizon)
    except InvalidArgument as exc:
        raise SchemaError(f"constants: {exc}", "constants") from exc
    p_scale = a * a * rho0  # pressure that maps to unit nondimensional density
    read = _ProfileReader(base_dir, horizon, c.time_scale)

    try:
        junctions = []
        for i, j in enumerate(net_doc["junctions"]):
            lo = quantity(j["p_min"], "pressure", f"network/junctions/{i}/p_min") / p_scale
            hi = quantity(j["p_max"], "pressure", f"network/junctions/{i}/p_max") / p_scale
            junctions.append(Junction(j["id"], j["kind"], lo, hi))
        pipes = []
        for i, p in enumerate(net_doc["pipes"]):
            pipes.append(
                Pipe(
                    p["id"],
                    p["from"],
                    p["to"],
                    lengths[i],
                    quantity(p["diameter"], "length", f"network/pipes/{i}/diameter"),
                    float(p["friction"]),
                )
            )
        comps = []
        for i, cdoc in enumerate(net_doc.get("compressors", [])):
            prof = read(cdoc["ratio"], "ratio", 1.0, f"network/compressors/{i}/ratio")
            comps.append(Compressor(cdoc["pipe"], cdoc["orientation"], prof))
        net = Network(tuple(junctions), tuple(pipes), tuple(comps))
        slack = {}
        for key, prof in doc["slack"].items():
            slack[_junction_key(key, "slack")] = read(prof, "pressure", p_scale, f"slack/{key}")
        withdrawals = {}
        nonslack = set(net.nonslack_ids)
        for key, prof in doc.get("withdrawals", {}).items():
            if _junction_key(key, "withdrawals") not in nonslack:
                raise SchemaError(f"withdrawals/{key}: junction {key} is not a nonslack junction", f"withdrawals/{key}")
            withdrawals[_junction_key(key, "withdrawals")] = read(prof, "mass_flow", c.flux_scale, f"withdrawals/{key}")
        grid = doc.get("grid", {})
        delta = quantity(grid.get("delta", 5000.0), "length", "grid/delta")
        scenario = Scenario(net, c, withdrawals, slack, delta=delta, name=doc.get("name", "scenario"))
    except SchemaError:
        raise
    except InvalidArgument as exc:
        raise SchemaError(str(exc), "network") from exc

    for j in net.junctions:
        if j.kind == "nonslack" and j.id in slack:
            raise SchemaError(f"slack/{j.id}: junction {j.id} is not a slack junction", f"slack/{j.id}")
    for cmp in net.compressors:
        if np.min(cmp.ratio.eval(np.linspace(0, c.T_hat, 241))) <= 0:
            raise SchemaError(f"compressor on pipe {cmp.pipe}: ratio must stay positive", "network/compressors")

    noise = doc.get("noise", {})
    est = doc.get("estimation", {})
    if "lambda_bounds" in est:
        lo, hi = est["lambda_bounds"]
        if not (0 < lo < 1 < hi):
            raise SchemaError("estimation/lambda_bounds: need 0 < lo < 1 < hi", "estimation/lambda_bounds")
    return ScenarioFile(
        scenario=scenario,
        N=int(grid.get("N", 24)),
        noise_level=float(noise.get("level", 0.0)),
        seed=int(noise.get("seed", 0)),
        solver=dict(doc.get("solver", {})),
        estimation=est,
        document=doc,
        base_dir=base_dir,
    )


def _junction_key(key, where):
    try:
        return int(key)
    except ValueError:
        raise SchemaError(f"{where}/{key}: junction keys must be integer ids", f"{where}/{key}") from None


def load_scenario(path) -> ScenarioFile:
    p = Path(path)
    if not p.is_file():
        raise SchemaError(f"scenario file not found: {p}", "scenario_path")
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"scenario file is not valid JSON: {exc}", "scenario_path") from exc
    return load_document(doc, base_dir=p.parent)


def save_document(doc, path):
    validate_document(doc)
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


# ---------------------------------------------------------------------------
# heatmap CSV


def _fmt(v: float) -> str:
    return repr(float(v))


def write_grid_csv(path, labels, times, values, label_header="id"):
    """Rows are ``labels``, columns are ``times``; values are written losslessly."""
    values = np.asarray(values, dtype=float)
    if values.shape != (len(labels), len(times)):
        raise InvalidArgument(f"grid of shape {values.shape} does not match {len(labels)} labels x {len(times)} times")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([label_header] + [_fmt(t) for t in times])
    for lab, row in zip(labels, values):
        w.writerow([lab] + [_fmt(v) for v in row])
    Path(path).write_text(buf.getvalue())


def read_grid_csv(path):
    """Inverse of :func:`write_grid_csv`: returns ``(labels, times, values)``."""
    p = Path(path)
    if not p.is_file():
        raise SchemaError(f"file not found: {p}", str(p))
    with open(p, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise SchemaError(f"{p}: empty grid file", str(p))
    try:
        times = np.array([float(t) for t in rows[0][1:]])
        labels = [r[0] for r in rows[1:]]
        values = np.array([[float(v) for v in r[1:]] for r in rows[1:]]).reshape(len(labels), times.size)
    except ValueError as exc:
        raise SchemaError(f"{p}: malformed grid CSV ({exc})", str(p)) from exc
    return labels, times, values


def write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, allow_nan=True) + "\n")


def read_json(path):
    return json.loads(Path(path).read_text())


def write_table_csv(path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) if isinstance(v, float) else v for v in r])
    Path(path).write_text(buf.getvalue())


def read_table_csv(path):
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    return rows[0], rows[1:]


def finite_or_none(v):
    return None if v is None or not math.isfinite(v) else v


# ---------------------------------------------------------------------------
# trajectory bundles


def node_labels(rn):
    """Junction id for physical nodes, ``"<pipe>:<k>"`` for the k-th auxiliary node of a pipe."""
    labels, seen = [], {}
    for n in rn.nodes:
        if n.junction is not None:
            labels.append(str(n.junction))
        else:
            seen[n.pipe] = seen.get(n.pipe, 0) + 1
            labels.append(f"{n.pipe}:{seen[n.pipe]}")
    return labels


def edge_labels(rn):
    """``"<pipe>:<segment>"``, segments counted from the pipe's from-junction."""
    return [f"{e.pipe}:{e.position + 1}" for e in rn.edges]


_NONDIM_FILES = ("rho", "s", "Phi", "d")


def write_trajectory(out_dir, traj, rn, constants, pressure_unit="psi"):
    """Write a trajectory in both dimensional and nondimensional form.

    Dimensional heatmaps (time columns in hours): ``pressure.csv`` (every refined
    node), ``flux.csv`` (mass flux per refined edge, kg/m^2/s), ``mass_flow.csv``
    (kg/s per refined edge) and ``withdrawal.csv`` (kg/s per physical nonslack
    junction). ``nondim/`` holds the raw arrays for :func:`read_trajectory`.
    """
    if pressure_unit not in ("psi", "Pa"):
        raise InvalidArgument("pressure unit must be 'psi' or 'Pa'")
    out = Path(out_dir)
    (out / "nondim").mkdir(parents=True, exist_ok=True)
    hours = traj.grid * constants.time_scale / 3600.0
    p_pa = traj.rhoN * constants.rho0 * constants.a**2
    p = p_pa / PSI_TO_PA if pressure_unit == "psi" else p_pa
    phi = traj.Phi * constants.flux_scale
    write_grid_csv(out / "pressure.csv", node_labels(rn), hours, p, f"node [{pressure_unit}]")
    write_grid_csv(out / "flux.csv", edge_labels(rn), hours, phi, "edge [kg/m^2/s]")
    write_grid_csv(out / "mass_flow.csv", edge_labels(rn), hours, phi * rn.X[:, None], "edge [kg/s]")
    P = rn.physical_nonslack
    write_grid_csv(
        out / "withdrawal.csv", [str(j) for j in rn.physical_nonslack_ids], hours,
        traj.d[P] * constants.flux_scale, "junction [kg/s]",
    )  # fmt: skip
    for name in _NONDIM_FILES:
        arr = getattr(traj, name)
        write_grid_csv(out / "nondim" / f"{name}.csv", [str(i) for i in range(arr.shape[0])], traj.grid, arr, "row")


def read_trajectory(out_dir):
    """Trajectory from the ``nondim/`` files written by :func:`write_trajectory`."""
    from .simulator import Trajectory

    base = Path(out_dir) / "nondim"
    arrays, grid = {}, None
    for name in _NONDIM_FILES:
        _, times, values = read_grid_csv(base / f"{name}.csv")
        if grid is not None and not np.array_equal(times, grid):
            raise SchemaError(f"{base / name}.csv: time columns disagree with rho.csv", str(base))
        grid = times
        arrays[name] = values
    return Trajectory(grid, arrays["rho"], arrays["Phi"], arrays["s"], arrays["d"])


def read_measurements(sf: ScenarioFile, rn, N):
    """Measured withdrawals and densities (nondimensional) from the CSVs named in the scenario.

    Rows are physical nonslack junction ids in any order, columns the ``N`` grid
    times. Withdrawals are in kg/s, pressures in ``pressure_unit`` (psi by default).
    """
    spec = sf.estimation.get("measurements")
    if spec is None:
        return None
    c = sf.scenario.constants
    base = sf.base_dir or Path(".")
    ids = [str(j) for j in rn.physical_nonslack_ids]
    out = []
    for key, scale in (
        ("withdrawals", 1.0 / c.flux_scale),
        ("pressures", _UNITS["pressure"][spec.get("pressure_unit", "psi")] / (c.rho0 * c.a**2)),
    ):
        path = Path(spec[key])
        path = path if path.is_absolute() else base / path
        where = f"estimation/measurements/{key}"
        if not path.is_file():
            raise SchemaError(f"{where}: file not found: {path}", where)
        labels, _, values = read_grid_csv(path)
        if values.shape[1] != N:
            raise SchemaError(f"{where}: expected {N} time columns, found {values.shape[1]}", where)
        rows = {lab.strip(): i for i, lab in enumerate(labels)}
        missing = [j for j in ids if j not in rows]
        if missing:
            raise SchemaError(f"{where}: no row for junction(s) {', '.join(missing)}", where)
        out.append(values[[rows[j] for j in ids]] * scale)
    return out
