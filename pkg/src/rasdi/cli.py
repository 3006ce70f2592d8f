"""``simulate``: run the solvers on the reference circuits or on a netlist.

Exit codes::

    0  success
    2  bad command line (argparse)
    3  invalid input: unknown scenario, bad parameter, netlist or partition error
    4  solver failure: singular matrix, unit eigenvalue, no convergence, ...
    5  I/O error

On failure a single JSON object ``{"error": {"code", "message", "exit"}}`` is
written to stderr.  Log verbosity comes from ``RASDI_LOG`` (``DEBUG``,
``INFO``, ``WARNING``; default ``WARNING``).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .aitken import analytic_p, numeric_p_from_iterates, spectral_report, spectral_sweep
from .circuits import PRESETS, CircuitDae, assemble, normalize_id, reference_circuit, parse_netlist
from .dae import monolithic_solve, step_residuals
from .errors import (
    DimensionMismatch,
    EmptyInterface,
    NetlistSyntaxError,
    NotACover,
    NotTwoPartitions,
    RasdiError,
    UnknownCircuitId,
    UnknownSelector,
)
from .nonlinear import elements_from_meta, nonlinear_oracle, solve_nonlinear_accelerated, spectral_log_csv
from .partition import AdjacencyGraph, partition_from_json
from .phasor import PhasorConfig, run_emt_ts
from .ras import ConvergenceLog, RasSplitting, di_solve
from .strategies import solve_accelerated, solve_pipelined

log = logging.getLogger("rasdi")

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_SOLVER, EXIT_IO = 0, 2, 3, 4, 5
MODES = ("monolithic", "di", "di-aitken", "di-aitken-pipelined", "emt-ts", "nonlinear", "spectral")
PARAMS = ("l1", "l2", "c", "g", "e", "ei", "zs", "g0", "alpha", "r1", "r2", "c1", "c2")
INPUT_ERRORS = (UnknownCircuitId, NetlistSyntaxError, NotACover, EmptyInterface, UnknownSelector,
                NotTwoPartitions, DimensionMismatch)


class SpecError(ValueError):
    code = "spec"


@dataclass
class RunSpec:
    scenario: str
    mode: str = "monolithic"
    dt: float | None = None
    t_end: float | None = None
    out: str = "."
    params: dict = field(default_factory=dict)
    partition: str | None = None
    m: int = 3
    reuse: bool = True
    rtol: float = 1e-10
    atol: float = 1e-12
    max_iter: int = 1000
    on_fail: str = "raise"
    sweep_dt: str | None = None
    dt_ts: float = 2e-3
    dt_emt: float = 2e-5
    f0: float = 50.0
    modes: tuple = (-1, 0, 1)

    def validate(self) -> None:
        if self.mode not in MODES:
            raise SpecError(f"unknown mode {self.mode!r}")
        for name in ("dt", "t_end", "dt_ts", "dt_emt", "f0"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise SpecError(f"{name} must be positive")
        if self.m < 1:
            raise SpecError("window length m must be >= 1")
        if self.on_fail not in ("raise", "accept"):
            raise SpecError("on-fail must be 'raise' or 'accept'")
        if self.mode == "spectral" and self.dt is None and self.sweep_dt is None:
            raise SpecError("spectral mode needs --dt or --sweep-dt")


DEFAULT_DT = {"ex1": 1e-3, "ex2": 1e-3, "ex2-swapped": 4.5e-4, "ex2-nonlinear": 2e-4}


def parse_sweep(text: str) -> np.ndarray:
    parts = text.split(":")
    try:
        vals = [float(p) for p in parts[:2]]
        n = int(parts[2]) if len(parts) > 2 else 20
    except (ValueError, IndexError):
        raise SpecError(f"bad sweep {text!r}; expected a:b[:n]") from None
    if len(parts) not in (2, 3) or not 0 < vals[0] < vals[1] or n < 2:
        raise SpecError(f"bad sweep {text!r}; expected 0 < a < b and n >= 2")
    return np.linspace(vals[0], vals[1], n)


def load_circuit(spec: RunSpec):
    """Circuit and partition for a preset id or a netlist file."""
    path = Path(spec.scenario)
    if path.suffix or path.exists():
        text = path.read_text()
        if spec.params:
            raise SpecError("parameter flags apply to named scenarios only")
        circ = assemble(parse_netlist(text))
        part = None
    else:
        circ, part = reference_circuit(spec.scenario, **spec.params)
    if spec.partition is not None:
        sys_ = circ.system()
        graph = AdjacencyGraph.from_matrix(sys_.big_a)
        part = partition_from_json(Path(spec.partition).read_text(), graph, circ.names)
    if part is None and spec.mode != "monolithic":
        raise SpecError("a netlist run needs --partition for this mode")
    return circ, part


def circuit_info(circ: CircuitDae, dt: float | None) -> dict | None:
    kind = circ.meta.get("kind")
    params = circ.meta.get("params", {})
    if kind not in ("ex1", "ex2") or "g" not in params:
        return None
    info = {"kind": kind, **{k: params[k] for k in ("l1", "l2", "c", "g")}}
    if dt is not None:
        info["dt"] = dt
    return info


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _residuals(sys_, traj) -> dict:
    be, alg = step_residuals(sys_, traj)
    return {"be_residual_max": float(be.max(initial=0.0)), "alg_residual_max": float(alg.max(initial=0.0))}


def run(spec: RunSpec) -> dict:
    """Execute one run and return the summary written to ``summary.json``."""
    spec.validate()
    circ, part = load_circuit(spec)
    sys_ = circ.system()
    key = circ.meta.get("id")
    dt = spec.dt or DEFAULT_DT.get(key, 1e-3)
    t_end = spec.t_end if spec.t_end is not None else 200 * dt
    out = Path(spec.out)
    out.mkdir(parents=True, exist_ok=True)
    summary = {"scenario": key or spec.scenario, "mode": spec.mode, "dt": dt, "t_end": t_end,
               "n": sys_.n, "files": []}

    def emit(name):
        summary["files"].append(name)
        return out / name

    mode = spec.mode
    if mode == "monolithic":
        traj = monolithic_solve(sys_, dt, t_end)
        traj.to_csv(emit("trajectory.csv"))
        summary.update(_residuals(sys_, traj))
    elif mode == "di":
        conv = ConvergenceLog()
        traj = di_solve(sys_, part, dt, t_end, spec.rtol, spec.atol, spec.max_iter, spec.on_fail, conv)
        traj.to_csv(emit("trajectory.csv"))
        conv.to_csv(emit("convergence.csv"))
        ratios = [r[3] for r in conv.rows if r[0] == 1 and np.isfinite(r[3])]
        summary["failed_steps"] = traj.meta.get("failed_steps", [])
        summary["ratio_step1"] = ratios[-1] if ratios else None
    elif mode == "di-aitken":
        traj = solve_accelerated(sys_, part, dt, t_end, reuse=spec.reuse)
        traj.to_csv(emit("trajectory.csv"))
        op = traj.meta["operator"]
        if op is not None:
            _write_json(emit("spectral.json"), spectral_report(op, circuit_info(circ, dt)))
        summary.update(sweeps_total=int(sum(traj.meta["sweeps"])), rebuilds=traj.meta["rebuilds"])
        ref = monolithic_solve(sys_, dt, t_end)
        summary["max_error_vs_monolithic"] = float(np.abs(traj.states - ref.states).max())
    elif mode == "di-aitken-pipelined":
        traj = solve_pipelined(sys_, part, dt, t_end, spec.m)
        traj.to_csv(emit("trajectory.csv"))
        ref = monolithic_solve(sys_, dt, t_end)
        summary.update(m=spec.m, max_error_vs_monolithic=float(np.abs(traj.states - ref.states).max()))
    elif mode == "emt-ts":
        cfg = PhasorConfig(2 * np.pi * spec.f0, spec.dt_ts, spec.dt_emt, spec.modes)
        t_end = spec.t_end if spec.t_end is not None else 50 * spec.dt_ts
        res = run_emt_ts(sys_, part, cfg, t_end, names=circ.names)
        res.emt_csv(emit("emt.csv"))
        res.ts_csv(emit("ts.csv"))
        with open(emit("ts_operator.csv"), "w") as fh:
            fh.write("step,rho\n")
            for j, op in enumerate(res.operators, start=1):
                fh.write(f"{j},{op.spectral_radius!r}\n")
        summary.update(dt=None, dt_ts=spec.dt_ts, dt_emt=spec.dt_emt, m=cfg.m, t_end=t_end,
                       modes=list(cfg.modes), omega0=cfg.omega0)
    elif mode == "nonlinear":
        elements = elements_from_meta(circ)
        if not elements:
            raise SpecError(f"scenario {summary['scenario']!r} has no nonlinear element")
        traj, ops = solve_nonlinear_accelerated(circ, part, dt, t_end, elements)
        traj.to_csv(emit("trajectory.csv"))
        spectral_log_csv(ops, emit("spectra.csv"))
        oracle = nonlinear_oracle(circ, dt, t_end, elements)
        summary.update(max_error_vs_oracle=float(np.abs(traj.states - oracle.states).max()),
                       rho_first=ops[0].rho_n if ops else None, rho_last=ops[-1].rho_n if ops else None)
    elif mode == "spectral":
        info = circuit_info(circ, spec.dt)
        if spec.sweep_dt:
            dts = parse_sweep(spec.sweep_dt)
            rep = spectral_sweep(lambda h: analytic_p(RasSplitting(sys_, part, h)), dts)
            if info:
                rep["dt0"] = spectral_report(analytic_p(RasSplitting(sys_, part, dts[0])), info).get("dt0")
            _write_json(emit("spectral_sweep.json"), rep)
            summary.update(dt=None, crossing=rep["crossing"], dt0=rep.get("dt0"))
        else:
            split = RasSplitting(sys_, part, spec.dt)
            rep = spectral_report(analytic_p(split), info)
            z = [split.imap.restrict(sys_.z0)]
            rhs = split.rhs(sys_.z0, spec.dt)
            for _ in range(split.n_gamma + 1):
                z.append(split.sweep_interface(z[-1], rhs))
            rep["rho_numeric"] = numeric_p_from_iterates(z).spectral_radius
            _write_json(emit("spectral.json"), rep)
            summary.update(rho=rep["rho"], classification=rep["classification"])
    _write_json(out / "summary.json", summary)
    return summary


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="simulate", description=__doc__.split("\n\n")[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one scenario")
    r.add_argument("scenario", help="preset id (see 'simulate list') or netlist file")
    r.add_argument("--spec", help="JSON run-spec file; command-line flags override it")
    r.add_argument("--mode", choices=MODES)
    r.add_argument("--dt", type=float)
    r.add_argument("--t-end", type=float)
    r.add_argument("--out")
    r.add_argument("--partition", help="partition JSON (base sets, p, differential)")
    r.add_argument("--m", type=int, help="pipeline window length")
    r.add_argument("--no-reuse", action="store_true", help="refit P on every step")
    r.add_argument("--rtol", type=float)
    r.add_argument("--atol", type=float)
    r.add_argument("--max-iter", type=int)
    r.add_argument("--on-fail", choices=("raise", "accept"))
    r.add_argument("--sweep-dt", help="spectral sweep grid a:b[:n]")
    r.add_argument("--dt-ts", type=float)
    r.add_argument("--dt-emt", type=float)
    r.add_argument("--f0", type=float, help="base frequency in Hz for phasor modes")
    r.add_argument("--modes", help="comma-separated phasor modes, e.g. -1,0,1")
    for p in PARAMS:
        r.add_argument(f"--{p.replace('_', '-')}", type=float, dest=f"param_{p}")

    sub.add_parser("list", help="list the built-in scenarios")
    pp = sub.add_parser("partition", help="print the partition of a scenario as JSON")
    pp.add_argument("scenario")
    return ap


def spec_from_args(args) -> RunSpec:
    doc = {}
    if args.spec:
        doc = json.loads(Path(args.spec).read_text())
        if not isinstance(doc, dict):
            raise SpecError("run-spec file must hold a JSON object")
        phasor = doc.pop("phasor", {}) or {}
        if "omega0" in phasor:
            doc["f0"] = phasor.pop("omega0") / (2 * np.pi)
        doc.update(phasor)
        unknown = set(doc) - set(RunSpec.__dataclass_fields__) - {"scenario"}
        if unknown:
            raise SpecError(f"unknown run-spec keys: {sorted(unknown)}")
    doc["scenario"] = args.scenario
    flags = {"mode": args.mode, "dt": args.dt, "t_end": args.t_end, "out": args.out,
             "partition": args.partition, "m": args.m, "rtol": args.rtol, "atol": args.atol,
             "max_iter": args.max_iter, "on_fail": args.on_fail, "sweep_dt": args.sweep_dt,
             "dt_ts": args.dt_ts, "dt_emt": args.dt_emt, "f0": args.f0}
    doc.update({k: v for k, v in flags.items() if v is not None})
    if args.no_reuse:
        doc["reuse"] = False
    if args.modes is not None:
        try:
            doc["modes"] = tuple(int(k) for k in args.modes.split(","))
        except ValueError:
            raise SpecError(f"bad mode list {args.modes!r}") from None
    elif "modes" in doc:
        doc["modes"] = tuple(doc["modes"])
    params = dict(doc.get("params", {}))
    params.update({p: getattr(args, f"param_{p}") for p in PARAMS if getattr(args, f"param_{p}") is not None})
    doc["params"] = params
    return RunSpec(**doc)


def _message(exc: Exception) -> str:
    if isinstance(exc, KeyError) and exc.args:
        return str(exc.args[0])
    return str(exc)


def _fail(code: str, message: str, status: int) -> int:
    sys.stderr.write(json.dumps({"error": {"code": code, "message": message, "exit": status}}) + "\n")
    return status


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("RASDI_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        if args.command == "list":
            for key, params in PRESETS.items():
                print(key, json.dumps(params, sort_keys=True))
            return EXIT_OK
        if args.command == "partition":
            circ, part = reference_circuit(normalize_id(args.scenario))
            print(part.to_json(circ.names))
            return EXIT_OK
        summary = run(spec_from_args(args))
        print(json.dumps(summary, indent=2, sort_keys=True))
        return EXIT_OK
    except INPUT_ERRORS as exc:
        return _fail(exc.code, _message(exc), EXIT_INPUT)
    except RasdiError as exc:
        return _fail(exc.code, _message(exc), EXIT_SOLVER)
    except (SpecError, ValueError, TypeError, KeyError) as exc:
        return _fail("spec", _message(exc), EXIT_INPUT)
    except OSError as exc:
        return _fail("io", str(exc), EXIT_IO)


if __name__ == "__main__":
    sys.exit(main())
