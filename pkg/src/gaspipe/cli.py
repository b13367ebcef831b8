"""Command-line driver.

Exit codes: 0 success, 2 invalid scenario or arguments, 3 integration failure,
4 solver did not converge, 1 anything unexpected. On failure a JSON object
``{"error", "message", "field", "exit_code"}`` goes to stdout (and to
``error.json`` in the output directory); stderr only carries log lines.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import experiments as ex
from .errors import GasPipeError, InfeasibleSteadyState, IntegrationFailure, InvalidArgument, NoPeriodicOrbit
from .fileio import (
    SchemaError,
    load_scenario,
    read_measurements,
    save_document,
    write_json,
    write_table_csv,
    write_trajectory,
)
from .fixtures import NAMES, fixture_document
from .simulator import periodic_orbit
from .solver import SolveOptions
from .transcription import MeasurementSet, TimeGrid

log = logging.getLogger("gaspipe")

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_SCHEMA = 2
EXIT_INTEGRATION = 3
EXIT_NOT_CONVERGED = 4


_INTEGRATION_ERRORS = (IntegrationFailure, NoPeriodicOrbit, InfeasibleSteadyState)


class _Failure(Exception):
    def __init__(self, code, kind, message, field="", extra=None):
        super().__init__(message)
        self.code, self.kind, self.field, self.extra = code, kind, field, extra or {}


def _out_dir(path):
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _solver_options(sf) -> SolveOptions:
    return SolveOptions(**sf.solver)


def _grid(sf) -> TimeGrid:
    return TimeGrid(sf.N, sf.scenario.period)


def _truth(sf, grid, opts):
    try:
        return ex.grid_truth(sf.scenario, grid, sf.truth_source, opts)
    except _INTEGRATION_ERRORS as exc:
        raise _Failure(EXIT_INTEGRATION, "integration-failure", str(exc)) from exc


def cmd_simulate(args) -> int:
    sf = load_scenario(args.scenario)
    sc = sf.scenario
    out = _out_dir(args.out)
    N = args.points or 4 * sf.N
    t_out = np.linspace(0.0, sc.period, N + 1)
    try:
        orbit = periodic_orbit(sc.rn, sc, t_out=t_out)
    except _INTEGRATION_ERRORS as exc:
        raise _Failure(EXIT_INTEGRATION, "integration-failure", str(exc)) from exc
    write_trajectory(out, orbit, sc.rn, sc.constants, args.pressure_unit)
    write_json(out / "summary.json", {"scenario": sc.name, "nodes": sc.rn.n_nodes, "edges": sc.rn.n_edges, "times": N + 1})
    log.info("periodic orbit written to %s", out)
    return EXIT_OK


def _measurements(sf, grid, truth, noise):
    rn = sf.scenario.rn
    W1 = sf.weights("W1", rn.physical_nonslack_ids)
    W2 = sf.weights("W2", rn.physical_nonslack_ids)
    files = read_measurements(sf, rn, grid.N)
    if files is not None:
        return MeasurementSet(files[0], files[1], W1, W2)
    return ex.synthesize(truth, rn, noise, W1, W2)


def _friction_rows(sf, est, bounds):
    lo, hi = bounds
    rows = []
    for p in sf.scenario.network.pipes:
        v = est.friction[p.id]
        at = abs(v - lo * p.friction) <= 1e-8 or abs(v - hi * p.friction) <= 1e-8
        rows.append([p.id, p.length, p.friction, v, lo * p.friction, hi * p.friction, int(at)])
    return ["pipe", "length_m", "nominal", "estimate", "lower", "upper", "at_bound"], rows


def cmd_estimate(args) -> int:
    sf = load_scenario(args.scenario)
    sc = sf.scenario
    mode = args.mode or sf.mode
    out = _out_dir(args.out)
    opts = _solver_options(sf)
    grid = _grid(sf)
    noise = ex.NoiseSpec(sf.noise_level if args.level is None else args.level, sf.seed if args.seed is None else args.seed)
    bounds = tuple(sf.estimation.get("lambda_bounds", (0.5, 2.0)))
    truth = _truth(sf, grid, opts)
    meas = None if mode == "noiseless" else _measurements(sf, grid, truth, noise)
    est = ex.estimate(sc, grid, mode, meas, opts, bounds)
    rep = est.report
    write_json(out / "solve_report.json", rep.to_dict())
    if not rep.ok:
        raise _Failure(EXIT_NOT_CONVERGED, "not-converged", rep.message or rep.status, extra={"solve_report": rep.to_dict()})
    write_trajectory(out, est.trajectory, sc.rn, sc.constants, args.pressure_unit)
    errs = ex.error_report(est.trajectory, truth, sc.rn, sc.constants, sf.flow_floor)
    write_json(out / "errors.json", errs.to_dict())
    if mode == "joint":
        header, rows = _friction_rows(sf, est, bounds)
        write_table_csv(out / "friction.csv", header, rows)
    log.info("%s estimate converged in %d iterations; written to %s", mode, rep.iterations, out)
    return EXIT_OK


def cmd_sweep(args) -> int:
    sf = load_scenario(args.scenario)
    sc = sf.scenario
    mode = args.mode or sf.mode
    if mode == "noiseless":
        raise InvalidArgument("sweep needs mode 'state' or 'joint'")
    if sf.estimation.get("measurements"):
        raise InvalidArgument("sweep synthesizes its own measurements; remove estimation/measurements")
    out = _out_dir(args.out)
    opts = _solver_options(sf)
    grid = _grid(sf)
    truth = _truth(sf, grid, opts)
    rn = sc.rn
    kw = dict(
        opts=opts,
        W1=sf.weights("W1", rn.physical_nonslack_ids),
        W2=sf.weights("W2", rn.physical_nonslack_ids),
        lambda_bounds=tuple(sf.estimation.get("lambda_bounds", (0.5, 2.0))),
        flow_floor=sf.flow_floor,
    )
    results = ex.sweep(sc, grid, truth, mode, args.levels, args.seeds, workers=args.workers, **kw)
    header, rows = ex.summary_table(results)
    write_table_csv(out / "table.csv", header, rows)
    write_json(out / "runs.json", [r.to_dict() for r in results])
    if mode == "joint":
        for lv in sorted(set(args.levels)):
            bias = ex.bias_report(sc.network, [r for r in results if r.level == lv])
            stem = f"bias_{lv:g}"
            write_table_csv(out / f"{stem}.csv", ["pipe", "length_m", "weight", "weighted_bias", "bias"], bias.rows())
            write_json(out / f"{stem}.json", bias.to_dict())
    n_ok = sum(r.ok for r in results)
    log.info("sweep: %d of %d runs converged", n_ok, len(results))
    if n_ok == 0:
        raise _Failure(EXIT_NOT_CONVERGED, "not-converged", "no run in the sweep converged")
    return EXIT_OK


def cmd_fixture(args) -> int:
    doc = fixture_document(args.name)
    if args.out is None:
        json.dump(doc, sys.stdout, indent=2)
        sys.stdout.write("\n")
    else:
        save_document(doc, args.out)
    return EXIT_OK


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _Failure(EXIT_SCHEMA, "invalid-argument", f"{self.prog}: {message}", "argv")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="gaspipe", description="Periodic gas pipeline simulation and state estimation.")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more log output on stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="periodic orbit of a scenario")
    s.add_argument("scenario")
    s.add_argument("--out", required=True)
    s.add_argument("--points", type=int, default=None, help="output intervals per period (default 4N)")
    s.add_argument("--pressure-unit", choices=("psi", "Pa"), default="psi")
    s.set_defaults(func=cmd_simulate)

    e = sub.add_parser("estimate", help="solve one estimation problem")
    e.add_argument("scenario")
    e.add_argument("--mode", choices=ex.MODES, default=None)
    e.add_argument("--out", required=True)
    e.add_argument("--level", type=float, default=None, help="noise level in percent (overrides the file)")
    e.add_argument("--seed", type=int, default=None)
    e.add_argument("--pressure-unit", choices=("psi", "Pa"), default="psi")
    e.set_defaults(func=cmd_estimate)

    w = sub.add_parser("sweep", help="noise levels x seeds")
    w.add_argument("scenario")
    w.add_argument("--levels", type=_floats, required=True, help="e.g. 0.5,1,1.5,10")
    w.add_argument("--seeds", type=_ints, required=True, help="e.g. 0,1,2")
    w.add_argument("--mode", choices=("state", "joint"), default=None)
    w.add_argument("--workers", type=int, default=None, help="processes (default GASPIPE_THREADS or 1)")
    w.add_argument("--out", required=True)
    w.set_defaults(func=cmd_sweep)

    f = sub.add_parser("fixture", help="print or save a built-in scenario")
    f.add_argument("name", choices=NAMES)
    f.add_argument("--out", default=None)
    f.set_defaults(func=cmd_fixture)
    return p


def _report(exc: _Failure, out):
    payload = {"error": exc.kind, "message": str(exc), "field": exc.field, "exit_code": exc.code, **exc.extra}
    sys.stdout.write(json.dumps(payload) + "\n")
    if out is not None:
        try:
            write_json(_out_dir(out) / "error.json", payload)
        except OSError:
            pass
    return exc.code


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    out = None
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(
            level=logging.WARNING - 10 * min(args.verbose, 2),
            stream=sys.stderr,
            format="%(levelname)s %(name)s: %(message)s",
        )
        out = getattr(args, "out", None) if args.command != "fixture" else None
        return args.func(args)
    except _Failure as exc:
        return _report(exc, out)
    except SchemaError as exc:
        return _report(_Failure(EXIT_SCHEMA, "schema", str(exc), exc.field), out)
    except InvalidArgument as exc:
        return _report(_Failure(EXIT_SCHEMA, "invalid-argument", str(exc)), out)
    except _INTEGRATION_ERRORS as exc:
        return _report(_Failure(EXIT_INTEGRATION, "integration-failure", str(exc)), out)
    except GasPipeError as exc:
        return _report(_Failure(EXIT_UNEXPECTED, type(exc).__name__, str(exc)), out)
    except Exception as exc:  # noqa: BLE001 - last resort, still machine readable
        log.debug("unexpected failure", exc_info=True)
        return _report(_Failure(EXIT_UNEXPECTED, "internal", f"{type(exc).__name__}: {exc}"), out)


if __name__ == "__main__":
    sys.exit(main())
