"""Run configuration: a flat ``key = value`` file with units in key names.

Defaults reproduce the reference parameter set (eta=5, Lambda=200,
omega0=500, delta=1.2, omega_eg=1e4 cm^-1, T=298 K, n_levels=10,
V0=16.68 cm^-1, K=2 Matsubara terms, L=4, dt=0.05 fs). Unknown keys,
duplicate keys, malformed values and physically invalid combinations are
rejected with file/line diagnostics.
"""

from __future__ import annotations

from dataclasses import dataclass

from .bath import BathParams
from .heom import PropagatorConfig
from .model import VibronicParams


class ConfigError(Exception):
    """Malformed or inconsistent run configuration."""


def _parse_bool(text: str) -> bool:
    lowered = text.lower()
    if lowered in ("true", "yes", "on", "1"):
        return True
    if lowered in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _parse_float_list(text: str) -> tuple[float, ...]:
    items = [s.strip() for s in text.split(",") if s.strip()]
    if not items:
        raise ValueError("expected a comma-separated list of numbers")
    return tuple(float(s) for s in items)


def _parse_choice(*allowed):
    def cast(text: str):
        if text not in allowed:
            raise ValueError(f"expected one of {allowed}, got {text!r}")
        return text
    return cast


def _parse_anchor(text: str):
    if text == "auto":
        return "auto"
    return float(text)


def _parse_formats(text: str) -> tuple[str, ...]:
    items = [s.strip() for s in text.split(",") if s.strip()]
    for item in items:
        if item not in ("csv", "svg"):
            raise ValueError(f"unknown output format {item!r}")
    return tuple(items)


_SCHEMA = {
    # model
    "omega_eg_cm1": float,
    "omega0_cm1": float,
    "delta": float,
    "lambda_reorg_cm1": float,
    "drive_amp_cm1": float,
    "n_levels": int,
    "temperature_k": float,
    "phonon_basis": _parse_choice("diabatic", "adiabatic"),
    # bath
    "eta_cm1": float,
    "big_lambda_cm1": float,
    "n_matsubara": int,
    # propagator
    "dt_fs": float,
    "depth": int,
    "use_scaled_ados": _parse_bool,
    "max_ados": int,
    # task
    "task": _parse_choice("equilibrate", "g1", "g2", "scan"),
    "op_first": _parse_choice("photon", "phonon"),
    "op_second": _parse_choice("photon", "phonon"),
    "t_end_ps": float,
    "t_step_ps": float,
    "t_anchor_ps": _parse_anchor,
    "tau_max_ps": float,
    "tau_step_ps": float,
    "equilibration_ps": float,
    "normalize": _parse_bool,
    "search_start_ps": float,
    "scan_task": _parse_choice("g1", "g2"),
    "scan_eta_cm1": _parse_float_list,
    "scan_delta": _parse_float_list,
    "scan_lambda_scale": _parse_float_list,
    # output
    "out_dir": str,
    "formats": _parse_formats,
}


@dataclass
class TaskConfig:
    kind: str
    op_first: str | None = None
    op_second: str | None = None
    t_end_ps: float = 10.0
    t_step_ps: float = 0.01
    t_anchor_ps: object = "auto"
    tau_max_ps: float = 4.0
    tau_step_ps: float = 0.005
    equilibration_ps: float = 6.0
    normalize: bool | None = None
    search_start_ps: float = 3.5
    scan_task: str | None = None
    scan_eta_cm1: tuple[float, ...] | None = None
    scan_delta: tuple[float, ...] | None = None
    scan_lambda_scale: tuple[float, ...] | None = None


@dataclass
class OutputConfig:
    out_dir: str = "out"
    formats: tuple[str, ...] = ("csv",)


@dataclass
class RunConfig:
    model: VibronicParams
    bath: BathParams
    propagator: PropagatorConfig
    task: TaskConfig
    output: OutputConfig
    phonon_basis: str = "diabatic"
    source: str = ""


def _read_pairs(path) -> dict[str, tuple[str, int]]:
    pairs: dict[str, tuple[str, int]] = {}
    with open(path, "r") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw.strip()!r}")
            key, _, value = line.partition("=")
            key = key.strip()
            value = value.strip()
            if key not in _SCHEMA:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            if key in pairs:
                raise ConfigError(
                    f"{path}:{lineno}: duplicate key {key!r} (first set on line {pairs[key][1]})"
                )
            if not value:
                raise ConfigError(f"{path}:{lineno}: empty value for {key!r}")
            pairs[key] = (value, lineno)
    return pairs


def parse_config(path) -> RunConfig:
    """Parse and fully validate one run configuration file."""
    pairs = _read_pairs(path)

    values: dict[str, object] = {}
    lines: dict[str, int] = {}
    for key, (text, lineno) in pairs.items():
        try:
            values[key] = _SCHEMA[key](text)
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: bad value for {key!r}: {exc}") from exc
        lines[key] = lineno

    def fail(key: str, message: str):
        where = f"{path}:{lines[key]}" if key in lines else str(path)
        raise ConfigError(f"{where}: {message}")

    try:
        model = VibronicParams(
            omega_eg=values.get("omega_eg_cm1", 1.0e4),
            omega_0=values.get("omega0_cm1", 500.0),
            delta=values.get("delta", 1.2),
            drive_amp=values.get("drive_amp_cm1", 16.68),
            n_levels=values.get("n_levels", 10),
            temperature=values.get("temperature_k", 298.0),
            lambda_reorg=values.get("lambda_reorg_cm1"),
        )
    except ValueError as exc:
        key = next((k for k in ("lambda_reorg_cm1", "delta", "omega0_cm1", "omega_eg_cm1",
                                "n_levels", "temperature_k") if k in lines), None)
        where = f"{path}:{lines[key]}" if key else str(path)
        raise ConfigError(f"{where}: {exc}") from exc

    try:
        bath = BathParams(
            eta=values.get("eta_cm1", 5.0),
            big_lambda=values.get("big_lambda_cm1", 200.0),
            temperature=values.get("temperature_k", 298.0),
            n_matsubara=values.get("n_matsubara", 2),
        )
    except ValueError as exc:
        key = next((k for k in ("eta_cm1", "big_lambda_cm1", "n_matsubara") if k in lines), None)
        where = f"{path}:{lines[key]}" if key else str(path)
        raise ConfigError(f"{where}: {exc}") from exc

    task_kind = values.get("task")
    if task_kind is None:
        raise ConfigError(f"{path}: task required")

    task = TaskConfig(
        kind=task_kind,
        op_first=values.get("op_first"),
        op_second=values.get("op_second"),
        t_end_ps=values.get("t_end_ps", 10.0),
        t_step_ps=values.get("t_step_ps", 0.01),
        t_anchor_ps=values.get("t_anchor_ps", "auto"),
        tau_max_ps=values.get("tau_max_ps", 4.0),
        tau_step_ps=values.get("tau_step_ps", 0.005),
        equilibration_ps=values.get("equilibration_ps", 6.0),
        normalize=values.get("normalize"),
        search_start_ps=values.get("search_start_ps", 3.5),
        scan_task=values.get("scan_task"),
        scan_eta_cm1=values.get("scan_eta_cm1"),
        scan_delta=values.get("scan_delta"),
        scan_lambda_scale=values.get("scan_lambda_scale"),
    )

    dt_fs = values.get("dt_fs", 0.05)
    if dt_fs <= 0:
        fail("dt_fs", f"dt_fs must be positive, got {dt_fs}")
    try:
        propagator = PropagatorConfig(
            dt_fs=dt_fs,
            depth=values.get("depth", 4),
            record_stride=max(1, int(round(task.t_step_ps * 1000.0 / dt_fs))),
            use_scaled_ados=values.get("use_scaled_ados", True),
            max_ados=values.get("max_ados", 100_000),
        )
    except ValueError as exc:
        key = next((k for k in ("dt_fs", "depth", "max_ados") if k in lines), None)
        where = f"{path}:{lines[key]}" if key else str(path)
        raise ConfigError(f"{where}: {exc}") from exc

    uses_tau = task_kind == "g2" or (task_kind == "scan" and task.scan_task == "g2")
    checked = [("t_step_ps", task.t_step_ps)]
    if uses_tau:
        checked.append(("tau_step_ps", task.tau_step_ps))
    for key, step in checked:
        ratio = step * 1000.0 / propagator.dt_fs
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            fail(key if key in lines else "dt_fs",
                 f"{key}={step} ps is not a positive multiple of dt={propagator.dt_fs} fs")

    if task_kind in ("g1", "g2") and task.op_first is None:
        raise ConfigError(f"{path}: task {task_kind!r} requires op_first")
    if task_kind == "g2" and task.op_second is None:
        raise ConfigError(f"{path}: task 'g2' requires op_second")
    if task_kind == "scan":
        if task.scan_task is None:
            raise ConfigError(f"{path}: task 'scan' requires scan_task (g1 or g2)")
        if task.op_first is None:
            raise ConfigError(f"{path}: task 'scan' requires op_first")
        if task.scan_task == "g2" and task.op_second is None:
            raise ConfigError(f"{path}: scan over g2 requires op_second")
        if task.scan_eta_cm1 is None:
            raise ConfigError(f"{path}: task 'scan' requires scan_eta_cm1")
        have = [k for k in ("scan_delta", "scan_lambda_scale") if values.get(k) is not None]
        if len(have) != 1:
            raise ConfigError(
                f"{path}: task 'scan' requires exactly one of scan_delta / scan_lambda_scale"
            )
        for eta in task.scan_eta_cm1:
            if eta < 0:
                fail("scan_eta_cm1", f"scan eta values must be >= 0, got {eta}")
        for val in (task.scan_delta or ()):
            if val < 0:
                fail("scan_delta", f"scan delta values must be >= 0, got {val}")
        for val in (task.scan_lambda_scale or ()):
            if val < 0:
                fail("scan_lambda_scale", f"scan lambda scales must be >= 0, got {val}")
    else:
        for key in ("scan_task", "scan_eta_cm1", "scan_delta", "scan_lambda_scale"):
            if values.get(key) is not None:
                fail(key, f"{key} is only valid for task 'scan'")

    if task.t_end_ps <= 0 or task.tau_max_ps <= 0:
        fail("t_end_ps" if task.t_end_ps <= 0 else "tau_max_ps",
             "time windows must be positive")
    if task.equilibration_ps < 0:
        fail("equilibration_ps", "equilibration_ps must be >= 0")
    if task.t_anchor_ps != "auto" and task.t_anchor_ps < 0:
        fail("t_anchor_ps", "t_anchor_ps must be >= 0 or 'auto'")

    output = OutputConfig(
        out_dir=values.get("out_dir", "out"),
        formats=values.get("formats", ("csv",)),
    )
    return RunConfig(model=model, bath=bath, propagator=propagator, task=task,
                     output=output, phonon_basis=values.get("phonon_basis", "diabatic"),
                     source=str(path))
