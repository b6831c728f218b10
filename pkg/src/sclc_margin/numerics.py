"""Fixed-step simulation primitives.

Everything here runs on a uniform time grid so that repeated runs are
bit-for-bit reproducible: classical RK4 integration, input delay lines,
L2 energy bookkeeping and sine-dwell frequency-response extraction.

Sample arrays are time-major: ``samples[k, i]`` is channel ``i`` at time
``t0 + k * dt``.
"""
from __future__ import annotations

import csv
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "DIVERGENCE_THRESHOLD",
    "TimeSeries",
    "DelayLine",
    "EnergyAccumulator",
    "DwellUnstable",
    "integrate",
    "apply_delay",
    "l2_norm",
    "sine_dwell_gain",
    "sine_dwell_batch",
]

DIVERGENCE_THRESHOLD = 1e8


class DwellUnstable(RuntimeError):
    """Raised when the output of a sine dwell blows up."""


@dataclass(frozen=True)
class TimeSeries:
    """Uniformly sampled vector signal.

    Parameters
    ----------
    dt : float
        Sample spacing in seconds.
    samples : ndarray, shape (N, k)
        Row ``k`` holds the channel values at ``t0 + k*dt``.
    t0 : float
        Time of the first sample.
    names : tuple of str, optional
        Channel names used for CSV export.
    blowup_time : float or None
        Set when the producing simulation stopped on divergence.
    """

    dt: float
    samples: np.ndarray
    t0: float = 0.0
    names: tuple[str, ...] | None = None
    blowup_time: float | None = None

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=float)
        if samples.ndim == 1:
            samples = samples[:, None]
        if samples.ndim != 2 or samples.shape[0] < 1:
            raise ValueError("samples must be a non-empty (N, k) array")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.names is not None and len(self.names) != samples.shape[1]:
            raise ValueError("one name per channel required")
        object.__setattr__(self, "samples", samples)

    def __len__(self):
        return self.samples.shape[0]

    @property
    def t(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(len(self))

    @property
    def n_channels(self) -> int:
        return self.samples.shape[1]

    @property
    def diverged(self) -> bool:
        return self.blowup_time is not None

    @property
    def final(self) -> np.ndarray:
        return self.samples[-1]

    def norms(self) -> np.ndarray:
        """Euclidean norm of every sample."""
        return np.linalg.norm(self.samples, axis=1)

    def scaled(self, c: float) -> "TimeSeries":
        return TimeSeries(self.dt, c * self.samples, self.t0, self.names, self.blowup_time)

    def channel_names(self, prefix: str = "x") -> list[str]:
        if self.names is not None:
            return list(self.names)
        return [f"{prefix}{i + 1}" for i in range(self.n_channels)]

    def to_csv(self, path, prefix: str = "x") -> None:
        """Write ``t,<name_1>,...`` with 12 significant digits."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["t", *self.channel_names(prefix)])
            for tk, row in zip(self.t, self.samples):
                writer.writerow([f"{tk:.12g}", *(f"{v:.12g}" for v in row)])

    @classmethod
    def from_csv(cls, path) -> "TimeSeries":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], np.array(rows[1:], dtype=float)
        t = body[:, 0]
        dt = float(t[1] - t[0]) if len(t) > 1 else 1.0
        return cls(dt, body[:, 1:], float(t[0]), tuple(header[1:]))


def _diverged(x: np.ndarray, threshold: float) -> bool:
    return not np.all(np.isfinite(x)) or np.linalg.norm(x) > threshold


def integrate(
    dynamics: Callable[[float, np.ndarray], np.ndarray],
    x0,
    dt: float,
    T: float,
    on_step: Callable[[float, np.ndarray], None] | None = None,
    divergence_threshold: float = DIVERGENCE_THRESHOLD,
) -> TimeSeries:
    """Classical RK4 on a uniform grid.

    Returns ``floor(T/dt) + 1`` samples. If the state becomes non-finite or
    exceeds ``divergence_threshold`` in norm, integration stops and the
    returned series carries ``blowup_time``; this is an outcome, not an
    error.

    ``on_step(t, x)`` is invoked at every grid point before the step leaving
    it. Simulations with delay lines use it to record the commanded input.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    if T < dt:
        raise ValueError("horizon T must be at least one step")
    x = np.array(x0, dtype=float).ravel()
    n_steps = int(math.floor(T / dt + 1e-9))
    out = np.empty((n_steps + 1, x.size))
    out[0] = x
    half = 0.5 * dt
    for k in range(n_steps):
        t = k * dt
        if on_step is not None:
            on_step(t, x)
        k1 = dynamics(t, x)
        k2 = dynamics(t + half, x + half * k1)
        k3 = dynamics(t + half, x + half * k2)
        k4 = dynamics(t + dt, x + dt * k3)
        x = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if _diverged(x, divergence_threshold):
            return TimeSeries(dt, out[: k + 1], blowup_time=(k + 1) * dt)
        out[k + 1] = x
    return TimeSeries(dt, out)


class DelayLine:
    """Per-channel transport delay over a ring buffer of grid samples.

    Reading at time ``t`` returns channel ``i`` as it was at ``t - delays[i]``,
    linearly interpolated between stored grid samples. Times before the first
    recorded sample read as ``initial`` (zero history by default). Queries that
    fall after the newest sample hold the newest value, which only happens for
    delays shorter than one step.
    """

    def __init__(self, delays: Sequence[float], dt: float, initial=None):
        self.delays = np.asarray(delays, dtype=float).ravel()
        if np.any(self.delays < 0):
            raise ValueError("delays must be non-negative")
        if not dt > 0:
            raise ValueError("dt must be positive")
        self.dt = dt
        m = self.delays.size
        self.capacity = int(math.ceil(self.delays.max(initial=0.0) / dt)) + 2
        self.initial = np.zeros(m) if initial is None else np.asarray(initial, float).ravel()
        self._buf = np.tile(self.initial, (self.capacity, 1))
        self._head = -1  # index of the newest sample
        self._count = 0
        self._t_last = None
        self._channels = np.arange(m)

    def push(self, t: float, sample) -> None:
        self._head = (self._head + 1) % self.capacity
        self._buf[self._head] = sample
        self._count = min(self._count + 1, self.capacity)
        self._t_last = t

    def read(self, t: float) -> np.ndarray:
        if self._t_last is None:
            return self.initial.copy()
        back = (self._t_last - (t - self.delays)) / self.dt
        # snap round-off so that grid-aligned delays read stored samples exactly
        near = np.round(back)
        back = np.where(np.abs(back - near) < 1e-9, near, back)
        back = np.clip(back, 0.0, self.capacity - 1.0)
        b0 = np.floor(back).astype(int)
        frac = back - b0
        b1 = np.minimum(b0 + 1, self.capacity - 1)
        v0 = self._value(b0)
        v1 = self._value(b1)
        return v0 + frac * (v1 - v0)

    def _value(self, back: np.ndarray) -> np.ndarray:
        vals = self._buf[(self._head - back) % self.capacity, self._channels]
        return np.where(back < self._count, vals, self.initial)


def apply_delay(line: DelayLine, sample, t: float) -> np.ndarray:
    """Record ``sample`` at time ``t`` and return the delayed output at ``t``."""
    line.push(t, sample)
    out = line.read(t)
    # exact pass-through for undelayed channels
    return np.where(line.delays == 0.0, np.asarray(sample, float), out)


@dataclass
class EnergyAccumulator:
    """Running trapezoidal integral of ``||v(t)||^2``.

    ``tail`` is the energy accumulated over the most recent ``window``
    seconds.
    """

    dt: float
    window: float
    total: float = 0.0
    _last: float | None = None
    _tail: deque = field(default_factory=deque)

    def add(self, v) -> None:
        e = float(np.dot(v, v))
        if self._last is not None:
            chunk = 0.5 * self.dt * (self._last + e)
            self.total += chunk
            self._tail.append(chunk)
            max_len = int(round(self.window / self.dt))
            while len(self._tail) > max_len:
                self._tail.popleft()
        self._last = e

    @property
    def tail(self) -> float:
        return float(sum(self._tail))


def l2_norm(series: TimeSeries) -> float:
    """Trapezoidal L2 norm of a vector signal."""
    sq = np.einsum("ij,ij->i", series.samples, series.samples)
    if len(sq) == 1:
        return 0.0
    return float(math.sqrt(np.trapezoid(sq, dx=series.dt)))


def _fit_phasor(t: np.ndarray, y: np.ndarray, omega: float) -> np.ndarray:
    # least squares on [sin, cos]; over whole periods this is the single-bin correlation
    s, c = np.sin(omega * t), np.cos(omega * t)
    M = np.array([[s @ s, s @ c], [s @ c, c @ c]])
    rhs = np.stack([y.T @ s, y.T @ c])
    a, b = np.linalg.solve(M, rhs)
    return a + 1j * b


def sine_dwell_gain(
    process: Callable[[TimeSeries], TimeSeries],
    omega: float,
    amplitude: float,
    in_channel: int = 0,
    settle_periods: int = 10,
    measure_periods: int = 5,
    dt: float = 1e-3,
    n_inputs: int = 1,
) -> np.ndarray:
    """Measure one column of a frequency response by sine dwell.

    Drives ``in_channel`` of ``process`` with ``amplitude*sin(omega*t)`` (the
    other inputs held at zero), discards ``settle_periods`` periods and fits
    the remaining ``measure_periods`` periods of every output channel with a
    sine/cosine pair at ``omega``.

    Returns
    -------
    ndarray of complex, shape (p,)
        Output phasor divided by input phasor, per output channel.

    Raises
    ------
    ValueError
        If fewer than 20 samples per period are available.
    DwellUnstable
        If the process output diverges during the dwell.
    """
    if not omega > 0:
        raise ValueError("omega must be positive")
    if settle_periods < 1 or measure_periods < 1:
        raise ValueError("need at least one settle and one measure period")
    period = 2.0 * math.pi / omega
    if dt > period / 20.0 * (1 + 1e-12):
        raise ValueError(f"dt={dt} too coarse for omega={omega}: need >= 20 samples/period")
    n = int(round((settle_periods + measure_periods) * period / dt)) + 1
    t = dt * np.arange(n)
    u = np.zeros((n, n_inputs))
    u[:, in_channel] = amplitude * np.sin(omega * t)
    y = process(TimeSeries(dt, u))
    ys = y.samples
    if y.diverged or len(ys) < n or not np.all(np.isfinite(ys)):
        raise DwellUnstable(f"output diverged during dwell at omega={omega}")
    start = int(math.ceil(settle_periods * period / dt - 1e-9))
    stop = start + int(round(measure_periods * period / dt))
    window = slice(start, min(stop, n))
    return _fit_phasor(t[window], ys[window], omega) / amplitude


def sine_dwell_batch(
    rhs: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray],
    n_state: int,
    omegas,
    in_channels,
    n_inputs: int,
    output: Callable[[np.ndarray], np.ndarray],
    amplitude: float,
    settle_periods,
    measure_periods,
    samples_per_period,
    divergence_threshold: float = DIVERGENCE_THRESHOLD,
):
    """Run many independent sine dwells as one vectorized RK4 integration.

    Row ``r`` excites input ``in_channels[r]`` at ``omegas[r]`` with its own
    step ``dt_r = period_r / samples_per_period[r]``; an integer number of
    samples per period makes the sine/cosine correlation exact. Rows that
    have finished their dwell are frozen.

    ``rhs(t, x, q)`` receives row-stacked times ``(R,)``, states ``(R, n)``
    and excitations ``(R, m)``. ``output(x)`` maps states to ``(R, p)``.

    Returns
    -------
    gains : ndarray of complex, shape (R, p)
    valid : ndarray of bool, shape (R,)
        False for rows whose state diverged; their gains are NaN.
    """
    omegas = np.asarray(omegas, dtype=float)
    R = omegas.size
    chan = np.asarray(in_channels, dtype=int)
    settle = np.broadcast_to(np.asarray(settle_periods, dtype=int), (R,))
    measure = np.broadcast_to(np.asarray(measure_periods, dtype=int), (R,))
    spp = np.broadcast_to(np.asarray(samples_per_period, dtype=int), (R,))
    if np.any(spp < 20):
        raise ValueError("need >= 20 samples per period")
    dt = 2.0 * np.pi / omegas / spp
    n_total = (settle + measure) * spp
    n_start = settle * spp
    rows = np.arange(R)

    def excitation(t):
        q = np.zeros((R, n_inputs))
        q[rows, chan] = amplitude * np.sin(omegas * t)
        return q

    x = np.zeros((R, n_state))
    valid = np.ones(R, dtype=bool)
    acc = None
    for k in range(int(n_total.max())):
        t = k * dt
        if k >= n_start.min():
            y = output(x)
            if acc is None:
                acc = np.zeros(y.shape, dtype=complex)
            w = ((k >= n_start) & (k < n_total) & valid)[:, None]
            ph = np.sin(omegas * t) + 1j * np.cos(omegas * t)
            acc += np.where(w, y * ph[:, None], 0.0)
        h = np.where((k < n_total) & valid, dt, 0.0)[:, None]
        hh = 0.5 * h
        k1 = rhs(t, x, excitation(t))
        k2 = rhs(t + hh[:, 0], x + hh * k1, excitation(t + hh[:, 0]))
        k3 = rhs(t + hh[:, 0], x + hh * k2, excitation(t + hh[:, 0]))
        k4 = rhs(t + h[:, 0], x + h * k3, excitation(t + h[:, 0]))
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        bad = ~np.all(np.isfinite(x), axis=1) | (np.linalg.norm(x, axis=1) > divergence_threshold)
        if np.any(bad & valid):
            valid &= ~bad
            x[bad] = 0.0
    gains = 2.0 * acc / (amplitude * (measure * spp))[:, None]
    gains[~valid] = np.nan
    return gains, valid
