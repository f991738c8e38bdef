"""Run one experiment and record its error trajectory."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from .. import diagnostics, gaussian_flows, particle_flows, targets
from ..errors import ConfigError, FlowSamplerError, FormatError, NumericalError
from .config import ExperimentConfig

COLUMNS = ("t", "mean_err", "cov_rel_err", "cos_err", "flow", "target", "lambda")
METRICS = ("mean_err", "cov_rel_err", "cos_err")


class ExperimentError(FlowSamplerError):
    """Wraps a module error with the config that triggered it."""

    def __init__(self, message, config_source=None, cause=None):
        super().__init__(message)
        self.config_source = config_source
        self.cause = cause

    @property
    def numerical(self) -> bool:
        return isinstance(self.cause, (NumericalError, FloatingPointError, np.linalg.LinAlgError))


@dataclass
class Trajectory:
    """Error metrics at the report times, labelled by flow, target and lambda."""

    flow: str
    target: str
    lam: Optional[float]
    rows: List[Tuple[float, float, float, float]] = field(default_factory=list)

    @property
    def times(self) -> np.ndarray:
        return np.array([r[0] for r in self.rows])

    def metric(self, name: str) -> np.ndarray:
        return np.array([r[1 + METRICS.index(name)] for r in self.rows])

    def _label_cells(self):
        return [self.flow, self.target, "" if self.lam is None else repr(float(self.lam))]

    def format_row(self, row):
        return [repr(float(v)) for v in row] + self._label_cells()

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(COLUMNS)
            for row in self.rows:
                writer.writerow(self.format_row(row))

    @classmethod
    def from_csv(cls, path) -> "Trajectory":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or tuple(header) != COLUMNS:
                raise FormatError(f"{path}: expected header {','.join(COLUMNS)}")
            records = list(reader)
        if not records:
            raise FormatError(f"{path}: trajectory has no rows")
        labels = {tuple(r[4:]) for r in records}
        if len(labels) != 1 or any(len(r) != len(COLUMNS) for r in records):
            raise FormatError(f"{path}: inconsistent rows")
        flow, target, lam = records[0][4:]
        try:
            rows = [tuple(float(v) for v in r[:4]) for r in records]
        except ValueError as exc:
            raise FormatError(f"{path}: non-numeric metric") from exc
        t = np.array([r[0] for r in rows])
        if np.any(np.diff(t) <= 0) or not np.all(np.isfinite(rows)):
            raise FormatError(f"{path}: times must increase and values be finite")
        return cls(flow, target, float(lam) if lam else None, rows)


class _RowSink:
    """Collects rows and streams them to CSV so partial runs survive errors."""

    def __init__(self, traj: Trajectory, path: Optional[Path]):
        self.traj = traj
        self.fh = None
        if path is not None:
            path.parent.mkdir(parents=True, exist_ok=True)
            self.fh = open(path, "w", newline="")
            self.writer = csv.writer(self.fh)
            self.writer.writerow(COLUMNS)

    def add(self, row):
        if not all(math.isfinite(v) for v in row):
            raise FloatingPointError(f"non-finite error metric at t={row[0]:g}")
        self.traj.rows.append(row)
        if self.fh is not None:
            self.writer.writerow(self.traj.format_row(row))

    def close(self):
        if self.fh is not None:
            self.fh.flush()
            self.fh.close()


def _reference(cfg: ExperimentConfig, target):
    icfg = diagnostics.IntegrationConfig(**{
        k: (tuple(v) if k == "interval" else v) for k, v in cfg.integration.items()
    }) if cfg.integration else None
    return diagnostics.cached_reference(target, cfg.probe_seed, icfg)


def _run_particle(cfg, target, ref, sink):
    m0, C0 = cfg.initial_moments()
    ens = particle_flows.sample_ensemble(m0, C0, cfg.flow.particles, cfg.dynamics_seed)
    kernel = particle_flows.KernelSpec(cfg.flow.kernel) if cfg.flow.kernel else None
    sde = particle_flows.SdeConfig(cfg.flow.dt, cfg.steps_per_report * cfg.n_reports,
                                   cfg.dynamics_seed, cfg.flow.name)
    probes = ref.probes

    def record(k, e):
        t = k * cfg.report_interval
        sink.add((t,) + diagnostics.error_report(diagnostics.summary_stats(e, probes), ref))

    record(0, ens)
    step = 0
    for k in range(1, cfg.n_reports + 1):
        for _ in range(cfg.steps_per_report):
            ens = particle_flows.flow_step(ens, target, sde, kernel, step=step)
            step += 1
        record(k, ens)


def _run_gaussian(cfg, target, ref, sink):
    m0, C0 = cfg.initial_moments()
    g = gaussian_flows.GaussianMoments(m0, C0)
    kind = gaussian_flows.flow_kind(cfg.flow.name)
    probes = ref.probes

    def record(k, g):
        t = k * cfg.report_interval
        sink.add((t,) + diagnostics.error_report(diagnostics.summary_stats(g, probes), ref))

    record(0, g)
    for k in range(1, cfg.n_reports + 1):
        traj = gaussian_flows.integrate_moment_flow(
            kind, g, target, cfg.flow.dt, cfg.report_interval, kappa=cfg.flow.kappa,
            hessian_mode=cfg.flow.hessian_mode, quadrature=cfg.flow.quadrature)
        g = traj[len(traj) - 1]
        record(k, g)


def output_path(cfg: ExperimentConfig) -> Path:
    return Path(cfg.output_dir) / f"{cfg.name()}.csv"


def run_experiment(cfg: ExperimentConfig, write: bool = True) -> Trajectory:
    """Initialize, advance to ``cfg.T`` and record errors at every report time.

    Rows are streamed to ``<output_dir>/<name>.csv`` as they are produced, so a
    failing run leaves its partial trajectory on disk before the error surfaces
    as :class:`ExperimentError` naming the config.
    """
    target = targets.from_spec(cfg.target)
    traj = Trajectory(cfg.flow.name, cfg.target["kind"], cfg.lam)
    sink = _RowSink(traj, output_path(cfg) if write else None)
    try:
        ref = _reference(cfg, target)
        with np.errstate(over="ignore", invalid="ignore"):
            if cfg.flow.family == "particle":
                _run_particle(cfg, target, ref, sink)
            else:
                _run_gaussian(cfg, target, ref, sink)
    except ConfigError:
        raise
    except (FlowSamplerError, FloatingPointError, np.linalg.LinAlgError, ValueError) as exc:
        where = cfg.source or "<config>"
        raise ExperimentError(f"{where}: {type(exc).__name__}: {exc}", where, exc) from exc
    finally:
        sink.close()
    return traj
