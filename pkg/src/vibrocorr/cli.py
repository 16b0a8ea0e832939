"""Command line: equilibrate, g1, g2, parameter scans and oracle verification.

Exit codes: 0 success, 2 configuration error (including runs too short for
steady-state detection), 3 numerical instability, 4 oracle-suite failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, parse_config
from .correlations import (
    CorrelationTrace,
    MonomerSimulation,
    SteadyStateNotFound,
    detection_series,
)
from .heom import PropagationError, save_checkpoint
from .oracle import run_oracle_suite
from .traceio import render_svg, write_trace

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_UNSTABLE = 3
EXIT_ORACLE = 4


def _fmt_value(value) -> str:
    if isinstance(value, float):
        return format(value, ".17g")
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def _provenance(cfg: RunConfig, model=None, bath=None) -> dict:
    model = model or cfg.model
    bath = bath or cfg.bath
    item = {
        "version": __version__,
        "omega_eg_cm1": model.omega_eg,
        "omega0_cm1": model.omega_0,
        "delta": model.delta,
        "lambda_reorg_cm1": model.lambda_reorg,
        "drive_amp_cm1": model.drive_amp,
        "n_levels": model.n_levels,
        "temperature_k": model.temperature,
        "eta_cm1": bath.eta,
        "big_lambda_cm1": bath.big_lambda,
        "n_matsubara": bath.n_matsubara,
        "dt_fs": cfg.propagator.dt_fs,
        "depth": cfg.propagator.depth,
        "use_scaled_ados": cfg.propagator.use_scaled_ados,
        "equilibration_ps": cfg.task.equilibration_ps,
        "phonon_basis": cfg.phonon_basis,
    }
    return {k: _fmt_value(v) for k, v in item.items()}


def _simulation(cfg: RunConfig, model=None, bath=None) -> MonomerSimulation:
    return MonomerSimulation(
        model or cfg.model,
        bath or cfg.bath,
        cfg.propagator,
        t_step_ps=cfg.task.t_step_ps,
        equilibration_ps=cfg.task.equilibration_ps,
        phonon_basis=cfg.phonon_basis,
    )


def _emit(out_dir: Path, stem: str, trace: CorrelationTrace, provenance: dict,
          formats) -> list[str]:
    written = []
    if "csv" in formats:
        path = out_dir / f"{stem}.csv"
        write_trace(path, trace, provenance)
        written.append(str(path))
    if "svg" in formats:
        path = out_dir / f"{stem}.svg"
        render_svg([(stem, trace)], path, title=stem)
        written.append(str(path))
    return written


def _run_equilibrate(cfg: RunConfig, out_dir: Path) -> list[str]:
    sim = _simulation(cfg)
    state = sim.equilibrated()
    written = []
    checkpoint = out_dir / "equilibrated.heom"
    save_checkpoint(state, checkpoint)
    written.append(str(checkpoint))
    traj = sim.equilibration_trajectory()
    prov = _provenance(cfg)
    for op in ("photon", "phonon"):
        values = detection_series(sim.operator(op), traj.states)
        trace = CorrelationTrace(axis="t", grid_ps=traj.times_ps, values=values,
                                 op_first=op)
        written += _emit(out_dir, f"equilibration_{op}", trace, prov,
                         cfg.output.formats)
    return written


def _g1_trace(cfg: RunConfig, sim: MonomerSimulation) -> CorrelationTrace:
    normalized = bool(cfg.task.normalize) if cfg.task.normalize is not None else False
    return sim.g1(cfg.task.op_first, cfg.task.t_end_ps, normalized=normalized,
                  search_start_ps=cfg.task.search_start_ps)


def _g2_trace(cfg: RunConfig, sim: MonomerSimulation) -> CorrelationTrace:
    normalized = bool(cfg.task.normalize) if cfg.task.normalize is not None else True
    anchor = cfg.task.t_anchor_ps
    if anchor == "auto" and sim.eta == 0:
        anchor = cfg.task.search_start_ps
    return sim.g2(cfg.task.op_first, cfg.task.op_second, t_anchor=anchor,
                  tau_max_ps=cfg.task.tau_max_ps, tau_step_ps=cfg.task.tau_step_ps,
                  normalized=normalized, horizon_ps=cfg.task.t_end_ps,
                  search_start_ps=cfg.task.search_start_ps)


def _run_g1(cfg: RunConfig, out_dir: Path) -> list[str]:
    sim = _simulation(cfg)
    trace = _g1_trace(cfg, sim)
    return _emit(out_dir, f"g1_{cfg.task.op_first}", trace, _provenance(cfg),
                 cfg.output.formats)


def _run_g2(cfg: RunConfig, out_dir: Path) -> list[str]:
    sim = _simulation(cfg)
    trace = _g2_trace(cfg, sim)
    stem = f"g2_{cfg.task.op_first}_{cfg.task.op_second}"
    return _emit(out_dir, stem, trace, _provenance(cfg), cfg.output.formats)


def _scan_cells(cfg: RunConfig):
    """Deterministic (eta, delta) grid for the Cartesian scan."""
    task = cfg.task
    if task.scan_delta is not None:
        deltas = list(task.scan_delta)
    else:
        base = cfg.model.lambda_reorg
        deltas = [float(np.sqrt(2.0 * scale * base / cfg.model.omega_0))
                  for scale in task.scan_lambda_scale]
    return [(eta, delta) for eta in task.scan_eta_cm1 for delta in deltas]


def _cell_stem(cfg: RunConfig, eta: float, delta: float) -> str:
    ops = cfg.task.op_first
    if cfg.task.scan_task == "g2":
        ops = f"{cfg.task.op_first}_{cfg.task.op_second}"
    return f"{cfg.task.scan_task}_{ops}_eta{eta:g}_delta{delta:.6g}"


def _run_cell(cfg: RunConfig, eta: float, delta: float):
    model = replace(cfg.model, delta=delta, lambda_reorg=None)
    bath = replace(cfg.bath, eta=eta)
    sim = _simulation(cfg, model=model, bath=bath)
    if cfg.task.scan_task == "g1":
        trace = _g1_trace(cfg, sim)
    else:
        trace = _g2_trace(cfg, sim)
    return trace, _provenance(cfg, model=model, bath=bath)


def _run_scan(cfg: RunConfig, out_dir: Path, threads: int) -> list[str]:
    cells = _scan_cells(cfg)
    manifest_path = out_dir / "manifest.json"
    entries = []
    written = []
    results: dict[int, tuple] = {}
    failure = None
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        futures = {pool.submit(_run_cell, cfg, eta, delta): i
                   for i, (eta, delta) in enumerate(cells)}
        for future, i in futures.items():
            try:
                results[i] = future.result()
            except Exception as exc:  # noqa: BLE001 - recorded in the manifest
                failure = (cells[i], exc)
                for pending in futures:
                    pending.cancel()
                break
    for i, (eta, delta) in enumerate(cells):
        if i not in results:
            continue
        trace, prov = results[i]
        stem = _cell_stem(cfg, eta, delta)
        files = _emit(out_dir, stem, trace, prov, cfg.output.formats)
        written += files
        entries.append({
            "file": f"{stem}.csv",
            "eta_cm1": eta,
            "delta": delta,
            "lambda_reorg_cm1": cfg.model.omega_0 * delta**2 / 2.0,
            "params": prov,
        })
    if "svg" in cfg.output.formats and results:
        labeled = []
        for i, (eta, delta) in enumerate(cells):
            if i in results:
                labeled.append((f"eta={eta:g}, delta={delta:.4g}", results[i][0]))
        svg_path = out_dir / "scan.svg"
        render_svg(labeled, svg_path, title=f"{cfg.task.scan_task} scan")
        written.append(str(svg_path))
    manifest = {
        "task": cfg.task.scan_task,
        "op_first": cfg.task.op_first,
        "op_second": cfg.task.op_second,
        "status": "partial" if failure is not None else "complete",
        "cells": entries,
    }
    if failure is not None:
        (cell, exc) = failure
        manifest["failed_cell"] = {"eta_cm1": cell[0], "delta": cell[1],
                                   "error": str(exc)}
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    written.append(str(manifest_path))
    if failure is not None:
        raise failure[1]
    return written


def _verify(out_dir: Path) -> int:
    report_path = out_dir / "oracle_report.jsonl"
    reports = run_oracle_suite(report_path)
    for report in reports:
        status = "PASS" if report.passed else "FAIL"
        print(f"[{status}] {report.name}: max_rel_err={report.max_rel_err:.3e}")
    print(f"oracle report written to {report_path}")
    if not all(r.passed for r in reports):
        return EXIT_ORACLE
    return EXIT_OK


_RUNNERS = {
    "equilibrate": _run_equilibrate,
    "g1": _run_g1,
    "g2": _run_g2,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vibrocorr",
        description="Driven vibronic monomer dynamics and photon/phonon correlations",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("equilibrate", "g1", "g2", "scan"):
        p = sub.add_parser(name, help=f"run a {name} task from a config file")
        p.add_argument("--config", required=True, help="path to the run configuration")
        p.add_argument("--out", default=None, help="output directory (overrides config)")
        p.add_argument("--threads", type=int, default=1,
                       help="parallel scan cells (scan only)")
        p.add_argument("--verify", action="store_true",
                       help="run the oracle suite before the task")
    v = sub.add_parser("verify", help="run the brute-force oracle suite")
    v.add_argument("--out", default="out", help="directory for the JSON-lines report")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "verify":
            out_dir = Path(args.out)
            out_dir.mkdir(parents=True, exist_ok=True)
            return _verify(out_dir)
        cfg = parse_config(args.config)
        if cfg.task.kind != args.command:
            raise ConfigError(
                f"{cfg.source}: config task is {cfg.task.kind!r} but the "
                f"{args.command!r} subcommand was invoked"
            )
        out_dir = Path(args.out) if args.out else Path(cfg.output.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        if args.verify:
            code = _verify(out_dir)
            if code != EXIT_OK:
                return code
        if args.command == "scan":
            written = _run_scan(cfg, out_dir, args.threads)
        else:
            written = _RUNNERS[args.command](cfg, out_dir)
        for path in written:
            print(path)
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SteadyStateNotFound as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PropagationError as exc:
        print(f"numerical instability: {exc}", file=sys.stderr)
        return EXIT_UNSTABLE


if __name__ == "__main__":
    sys.exit(main())
