"""Pulsatile inflow waveform and boundary-condition specification."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..exceptions import FieldFormatError, InvalidArgumentError
from ..io import read_csv, write_csv

FACTOR_RANGE = (2.0 / 3.0, 4.0 / 3.0)


@dataclass(frozen=True, eq=False)
class WaveformBc:
    """Tabulated periodic flow rate ``q(t) = factor * qbar(t mod T)``.

    ``times`` must start at 0 and end at the period; rates are per unit depth
    (m^3/s per m).
    """

    times: np.ndarray
    rates: np.ndarray
    factor: float = 1.0

    def __post_init__(self):
        t = np.array(self.times, dtype=float)
        q = np.array(self.rates, dtype=float)
        if t.size == 0 or q.size == 0:
            raise InvalidArgumentError("empty waveform table")
        if t.shape != q.shape or t.ndim != 1 or t.size < 2:
            raise InvalidArgumentError("waveform needs matching 1D t and q with >= 2 samples")
        if t[0] != 0.0 or np.any(np.diff(t) <= 0):
            raise InvalidArgumentError("waveform times must start at 0 and increase strictly")
        if not np.all(np.isfinite(q)):
            raise InvalidArgumentError("waveform rates must be finite")
        scale = max(np.abs(q).max(), 1e-300)
        if abs(q[0] - q[-1]) > 1e-12 * scale:
            raise InvalidArgumentError("waveform is not periodic: q(0) != q(T)")
        lo, hi = FACTOR_RANGE
        if not (lo - 1e-12 <= self.factor <= hi + 1e-12):
            raise InvalidArgumentError(f"flow factor {self.factor} outside [2/3, 4/3]")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "rates", q)

    @property
    def period(self):
        return float(self.times[-1])

    def with_factor(self, factor):
        return WaveformBc(self.times, self.rates, factor)


def inflow_rate(bc, t):
    """Flow rate at time ``t`` (scalar or array) by periodic linear interpolation."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise InvalidArgumentError("time must be non-negative")
    tau = np.mod(t, bc.period)
    q = bc.factor * np.interp(tau, bc.times, bc.rates)
    return float(q) if q.ndim == 0 else q


def default_waveform(period=0.8, mean_rate=0.015, n_samples=81, factor=1.0):
    """Synthetic coronary-like pulse.

    Low, nearly flat flow through systole (first half of the cycle) and a
    higher diastolic peak near ``0.5625 T``; the two-harmonic series is
    periodic and smooth, with flow between about 0.83 and 1.33 of the mean.
    """
    t = np.linspace(0.0, period, n_samples)
    phase = 2.0 * np.pi * (t / period - 0.5625)
    q = mean_rate * (1.0 + 0.25 * np.cos(phase) + 0.08 * np.cos(2.0 * phase))
    q[-1] = q[0]
    return WaveformBc(t, q, factor)


def triangle_waveform(period=0.8, low=0.01, high=0.02, factor=1.0):
    """Piecewise-linear up/down ramp, handy for exactly representable tests."""
    return WaveformBc([0.0, 0.5 * period, period], [low, high, low], factor)


def load_waveform_csv(path, factor=1.0):
    header, rows = read_csv(path)
    if [h.strip() for h in header] != ["t", "q"]:
        raise FieldFormatError(f"{path}: waveform CSV header must be 't,q'")
    try:
        data = np.array([[float(a), float(b)] for a, b in rows])
    except ValueError as exc:
        raise FieldFormatError(f"{path}: malformed waveform row ({exc})") from exc
    return WaveformBc(data[:, 0], data[:, 1], factor)


def save_waveform_csv(path, bc):
    return write_csv(path, ["t", "q"], zip(bc.times, bc.rates))


# ----------------------------------------------------------------------
# boundary conditions


def inlet_velocity(mesh, faces, rate, profile="parabolic"):
    """Inlet face velocities whose discrete flux integrates to ``rate``.

    Velocities point along the inward face normal.
    """
    mag = mesh.face_areas[faces]
    if profile == "uniform":
        shape = np.ones(len(faces))
    elif profile == "parabolic":
        y = mesh.face_centers[faces, 1]
        lo = mesh.vertices[0, 0, 1]
        hi = mesh.vertices[0, -1, 1]
        s = (y - lo) / (hi - lo)
        shape = s * (1.0 - s)
    else:
        raise InvalidArgumentError(f"unknown inlet profile {profile!r}")
    speed = rate * shape / np.sum(shape * mag)
    return -mesh.face_normals[faces] * speed[:, None]


@dataclass
class BoundarySpec:
    """Per-patch velocity and pressure conditions.

    ``velocity[patch]`` is ``"zero_gradient"`` or a callable
    ``(mesh, faces, t) -> (n_faces, 2)``. ``pressure[patch]`` is
    ``"zero_gradient"`` or a fixed float value. Without any fixed-pressure
    patch a ``pressure_pin`` cell is required.
    """

    velocity: dict
    pressure: dict
    pressure_pin: int | None = None
    label: str = field(default="custom")

    def velocity_fixed(self, patch):
        return self.velocity[patch] != "zero_gradient"

    def pressure_fixed(self, patch):
        return self.pressure[patch] != "zero_gradient"


def _no_slip(mesh, faces, t):
    return np.zeros((len(faces), 2))


def channel_boundaries(waveform, profile="parabolic"):
    """Inlet waveform, no-slip walls, zero-gradient outlet with fixed p = 0."""

    def inlet(mesh, faces, t):
        return inlet_velocity(mesh, faces, inflow_rate(waveform, t), profile)

    return BoundarySpec(
        velocity={"inlet": inlet, "outlet": "zero_gradient",
                  "wall_lower": _no_slip, "wall_upper": _no_slip},
        pressure={"inlet": "zero_gradient", "outlet": 0.0,
                  "wall_lower": "zero_gradient", "wall_upper": "zero_gradient"},
        label="channel",
    )


def dirichlet_boundaries(velocity_fn, pressure_pin=0):
    """Prescribed velocity ``velocity_fn(x, t)`` on every patch, pinned pressure."""

    def fixed(mesh, faces, t):
        return velocity_fn(mesh.face_centers[faces], t)

    return BoundarySpec(
        velocity={p: fixed for p in ("inlet", "outlet", "wall_lower", "wall_upper")},
        pressure={p: "zero_gradient" for p in ("inlet", "outlet", "wall_lower", "wall_upper")},
        pressure_pin=pressure_pin,
        label="dirichlet",
    )


def waveform_from_spec(spec, period, factor=1.0, mean_rate=0.015):
    """``"default"``, ``"triangle"`` or a CSV path."""
    if spec in (None, "", "default"):
        return default_waveform(period, mean_rate, factor=factor)
    if spec == "triangle":
        return triangle_waveform(period, 0.8 * mean_rate, 1.2 * mean_rate, factor)
    if spec == "constant":
        return WaveformBc([0.0, period], [mean_rate, mean_rate], factor)
    bc = load_waveform_csv(Path(spec), factor)
    if abs(bc.period - period) > 1e-12 * period:
        raise InvalidArgumentError(f"waveform period {bc.period} != configured period {period}")
    return bc
