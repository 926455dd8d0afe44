"""Periodic runs of the flow solver and snapshot persistence."""

from __future__ import annotations

import time as _time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..exceptions import FieldFormatError, InvalidArgumentError, StepFailureError
from ..io import read_csv, read_field, write_csv, write_field
from ..mesh import Field, WssField
from .solver import FlowSolver
from .wss import compute_wss


@dataclass(frozen=True, eq=False)
class Snapshot:
    """One sampled instant of the final cycle; ``time`` is relative to its start."""

    index: int
    time: float
    u: Field
    p: Field
    wss: WssField

    def field(self, variable):
        return {"pressure": self.p, "velocity": self.u, "wss": self.wss}[variable]


@dataclass
class CycleLog:
    """Wall-clock seconds spent on each simulated cycle."""

    seconds: list = field(default_factory=list)


def snapshot_times(cfg, n_snapshots=None):
    n = cfg.n_snapshots if n_snapshots is None else int(n_snapshots)
    return np.arange(n) * (cfg.period / n)


def run_cycles(cfg, mesh, bcs=None, n_snapshots=None, log=None):
    """Simulate ``cfg.n_cycles`` periods from rest, sampling the last one.

    Yields ``n_snapshots`` equispaced :class:`Snapshot` objects at
    ``k T / N`` (``k = 0 .. N-1``) into the final cycle. Step failures are
    re-raised with the absolute time at which they occurred.
    """
    n = cfg.n_snapshots if n_snapshots is None else int(n_snapshots)
    steps = cfg.steps_per_cycle
    if n < 1 or steps % n:
        raise InvalidArgumentError(f"{n} snapshots do not divide {steps} steps per cycle")
    stride = steps // n
    solver = FlowSolver(mesh, cfg, bcs)
    for cycle in range(cfg.n_cycles):
        tic = _time.perf_counter()
        last = cycle == cfg.n_cycles - 1
        for k in range(steps):
            if last and k % stride == 0:
                yield _sample(solver.state, k // stride, k * cfg.dt, cfg)
            try:
                solver.step()
            except StepFailureError as exc:
                if exc.time is None:
                    exc.time = solver.time + cfg.dt
                raise
        if log is not None:
            log.seconds.append(_time.perf_counter() - tic)


def _sample(state, index, tau, cfg):
    u = state.u.replace(time=tau)
    p = state.p.replace(time=tau)
    wss = compute_wss(state, cfg.nu).replace(time=tau)
    return Snapshot(index, float(tau), u, p, wss)


def time_one_cycle(cfg, mesh, bcs=None, warmup_cycles=1):
    """Wall time of one full cycle after ``warmup_cycles`` untimed ones."""
    solver = FlowSolver(mesh, cfg, bcs)
    solver.advance(warmup_cycles * cfg.steps_per_cycle)
    tic = _time.perf_counter()
    solver.advance(cfg.steps_per_cycle)
    return _time.perf_counter() - tic


MANIFEST = "manifest.csv"
_MANIFEST_HEADER = ["index", "time", "path_u", "path_p", "path_wss"]


def write_snapshots(directory, snapshots):
    """One binary file per variable and index plus ``manifest.csv``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    rows = []
    for s in snapshots:
        names = [f"{var}_{s.index:05d}.bin" for var in ("u", "p", "wss")]
        for name, f in zip(names, (s.u, s.p, s.wss)):
            write_field(d / name, f)
        rows.append((s.index, s.time, *names))
    write_csv(d / MANIFEST, _MANIFEST_HEADER, rows)
    return d / MANIFEST


def read_snapshots(directory, mesh=None):
    d = Path(directory)
    header, rows = read_csv(d / MANIFEST)
    if header != _MANIFEST_HEADER:
        raise FieldFormatError(f"{d / MANIFEST}: unexpected header {header}")
    out = []
    for idx, t, pu, pp, pw in rows:
        out.append(Snapshot(int(idx), float(t), read_field(d / pu, mesh),
                            read_field(d / pp, mesh), read_field(d / pw, mesh)))
    return out
