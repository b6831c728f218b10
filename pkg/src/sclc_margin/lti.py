"""Linear time-invariant analysis.

State-space realizations, frequency-response evaluation, LQR synthesis by
the Hamiltonian Schur method, peak-gain (H-infinity) norms on frequency
grids and classic SISO gain/phase margins.

Gains are stored with the control law ``u = -K x``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np
import scipy.linalg

from .exceptions import AnalysisError, ConditioningError, ModelError, PoleOnGrid, SynthesisError

__all__ = [
    "StateSpaceModel",
    "FrequencyResponse",
    "SisoMargins",
    "HinfResult",
    "freq_eval",
    "frequency_response",
    "log_grid",
    "solve_care",
    "hinf_norm",
    "classic_siso_margins",
    "is_hurwitz",
    "jacobian_at_origin",
]

HURWITZ_TOL = 1e-9


def _mat(a, rows=None, cols=None) -> np.ndarray:
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.size == 0:
        a = np.zeros((rows or 0, cols or 0))
    return a


@dataclass(frozen=True)
class StateSpaceModel:
    """Continuous-time realization ``dx = A x + B u``, ``y = C x + D u``.

    A model with zero states is a static gain ``D``.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    input_labels: tuple[str, ...] = ()
    output_labels: tuple[str, ...] = ()

    def __post_init__(self):
        D = _mat(self.D)
        p, m = D.shape
        A = np.asarray(self.A, dtype=float)
        n = A.shape[0] if A.size else 0
        A = A.reshape(n, n)
        B = np.asarray(self.B, dtype=float).reshape(n, m)
        C = np.asarray(self.C, dtype=float).reshape(p, n)
        for name, val in (("A", A), ("B", B), ("C", C), ("D", D)):
            object.__setattr__(self, name, val)
        if self.input_labels and len(self.input_labels) != m:
            raise ModelError("input label count does not match B")
        if self.output_labels and len(self.output_labels) != p:
            raise ModelError("output label count does not match C")

    @classmethod
    def static(cls, D) -> "StateSpaceModel":
        D = _mat(D)
        return cls(np.zeros((0, 0)), np.zeros((0, D.shape[1])), np.zeros((D.shape[0], 0)), D)

    @classmethod
    def identity(cls, m: int) -> "StateSpaceModel":
        return cls.static(np.eye(m))

    @property
    def n_states(self) -> int:
        return self.A.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.D.shape[1]

    @property
    def n_outputs(self) -> int:
        return self.D.shape[0]

    @property
    def is_static(self) -> bool:
        return self.n_states == 0

    def __call__(self, omega: float) -> np.ndarray:
        return freq_eval(self, omega)


def freq_eval(model: StateSpaceModel, omega: float) -> np.ndarray:
    """Evaluate ``C (j omega I - A)^-1 B + D`` by a linear solve."""
    D = model.D.astype(complex)
    if model.is_static:
        return D
    n = model.n_states
    M = 1j * omega * np.eye(n) - model.A
    smin = np.linalg.svd(M, compute_uv=False)[-1]
    if smin <= 1e-13 * max(1.0, np.linalg.norm(model.A, 2)):
        raise PoleOnGrid(f"pole on the imaginary axis at omega={omega}")
    return model.C @ np.linalg.solve(M, model.B) + D


@dataclass(frozen=True)
class FrequencyResponse:
    """Complex ``p x m`` response samples on a strictly increasing grid."""

    omega: np.ndarray
    values: np.ndarray
    provenance: str = "direct-eval"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        omega = np.asarray(self.omega, dtype=float).ravel()
        values = np.asarray(self.values, dtype=complex)
        if values.ndim == 1:
            values = values[:, None, None]
        if values.ndim != 3 or values.shape[0] != omega.size:
            raise AnalysisError("values must have shape (len(omega), p, m)")
        if omega.size and (np.any(omega <= 0) or np.any(np.diff(omega) <= 0)):
            raise AnalysisError("frequency grid must be positive and strictly increasing")
        object.__setattr__(self, "omega", omega)
        object.__setattr__(self, "values", values)

    def __len__(self):
        return self.omega.size

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape[1:]

    def sigma_max(self) -> np.ndarray:
        """Largest singular value at each grid point."""
        return np.linalg.svd(self.values, compute_uv=False)[:, 0]

    def siso(self) -> np.ndarray:
        if self.shape != (1, 1):
            raise AnalysisError("response is not SISO")
        return self.values[:, 0, 0]

    def column(self, j: int) -> "FrequencyResponse":
        return FrequencyResponse(self.omega, self.values[:, :, j : j + 1], self.provenance, dict(self.meta))

    def element(self, i: int, j: int) -> "FrequencyResponse":
        return FrequencyResponse(self.omega, self.values[:, i : i + 1, j : j + 1], self.provenance, dict(self.meta))

    def restrict(self, mask) -> "FrequencyResponse":
        mask = np.asarray(mask, dtype=bool)
        return FrequencyResponse(self.omega[mask], self.values[mask], self.provenance, dict(self.meta))

    def to_csv(self, path) -> None:
        """``omega,re_ij,im_ij,...`` in row-major ``(i, j)`` order; SISO adds Bode columns."""
        p, m = self.shape
        header = ["omega"]
        for i in range(p):
            for j in range(m):
                header += [f"re_{i + 1}{j + 1}", f"im_{i + 1}{j + 1}"]
        bode = (p, m) == (1, 1)
        if bode:
            header += ["mag_db", "phase_deg"]
            L = self.siso()
            mag_db = 20 * np.log10(np.abs(L))
            phase = np.degrees(np.unwrap(np.angle(L)))
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            for k, w in enumerate(self.omega):
                row = [f"{w:.12g}"]
                for v in self.values[k].ravel():
                    row += [f"{v.real:.12g}", f"{v.imag:.12g}"]
                if bode:
                    row += [f"{mag_db[k]:.12g}", f"{phase[k]:.12g}"]
                writer.writerow(row)

    @classmethod
    def from_csv(cls, path, provenance: str = "direct-eval") -> "FrequencyResponse":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header = rows[0]
        body = np.array(rows[1:], dtype=float)
        keys = [h for h in header if h.startswith("re_")]
        p = max(int(k[3]) for k in keys)
        m = max(int(k[4]) for k in keys)
        vals = np.empty((body.shape[0], p, m), dtype=complex)
        for i in range(p):
            for j in range(m):
                re = body[:, header.index(f"re_{i + 1}{j + 1}")]
                im = body[:, header.index(f"im_{i + 1}{j + 1}")]
                vals[:, i, j] = re + 1j * im
        return cls(body[:, 0], vals, provenance)


def log_grid(omega_lo: float, omega_hi: float, points_per_decade: int) -> np.ndarray:
    decades = math.log10(omega_hi / omega_lo)
    n = max(2, int(round(decades * points_per_decade)) + 1)
    return np.logspace(math.log10(omega_lo), math.log10(omega_hi), n)


def frequency_response(op, grid, provenance: str = "direct-eval") -> FrequencyResponse:
    """Tabulate a model or ``omega -> matrix`` callable on ``grid``."""
    evaluate = op if callable(op) else (lambda w: freq_eval(op, w))
    vals = np.array([np.atleast_2d(evaluate(w)) for w in grid], dtype=complex)
    return FrequencyResponse(np.asarray(grid, float), vals, provenance)


def solve_care(A, B, Q, R):
    """Stabilizing solution of ``A'P + PA - P B R^-1 B' P + Q = 0``.

    Uses the ordered real Schur form of the Hamiltonian matrix and keeps the
    stable invariant subspace.

    Returns
    -------
    P : ndarray, shape (n, n)
    K : ndarray, shape (m, n)
        ``K = R^-1 B' P``, so that ``A - B K`` is Hurwitz.
    """
    A = _mat(A)
    n = A.shape[0]
    B = _mat(B).reshape(n, -1)
    Q = _mat(Q)
    R = _mat(R)
    Rinv_Bt = np.linalg.solve(R, B.T)
    H = np.block([[A, -B @ Rinv_Bt], [-Q, -A.T]])
    T, Z, sdim = scipy.linalg.schur(H, output="real", sort="lhp")
    if sdim != n:
        raise SynthesisError("Hamiltonian has imaginary-axis eigenvalues; (A, B) not stabilizable")
    U1, U2 = Z[:n, :n], Z[n:, :n]
    if np.linalg.cond(U1) > 1e12:
        raise SynthesisError("stable subspace is not a graph; no stabilizing solution")
    P = np.linalg.solve(U1.T, U2.T).T
    P = 0.5 * (P + P.T)
    K = Rinv_Bt @ P
    residual = A.T @ P + P @ A - P @ B @ K + Q
    scale = np.linalg.norm(A) * np.linalg.norm(P) + np.linalg.norm(Q)
    if np.linalg.norm(residual) > 1e-8 * scale + 1e-14:
        raise ConditioningError(f"Riccati residual {np.linalg.norm(residual):.3e} too large")
    if not is_hurwitz(A - B @ K):
        raise SynthesisError("closed loop A - BK is not Hurwitz")
    return P, K


def care_residual(A, B, Q, R, P) -> float:
    A, B, Q, R, P = map(_mat, (A, B, Q, R, P))
    B = B.reshape(A.shape[0], -1)
    return float(np.linalg.norm(A.T @ P + P @ A - P @ B @ np.linalg.solve(R, B.T @ P) + Q))


@dataclass(frozen=True)
class HinfResult:
    norm: float
    omega_peak: float
    warning: str | None = None

    def __iter__(self):
        yield self.norm
        yield self.omega_peak


Operator = Union[StateSpaceModel, FrequencyResponse, Callable[[float], np.ndarray]]


def _sigma(evaluate, w: float) -> float:
    try:
        G = evaluate(w)
    except PoleOnGrid:
        G = evaluate(w * (1 + 1e-7))
    return float(np.linalg.svd(np.atleast_2d(G), compute_uv=False)[0])


def hinf_norm(
    response: Operator,
    omega_lo: float = 1e-3,
    omega_hi: float = 1e3,
    points_per_decade: int = 40,
) -> HinfResult:
    """Peak of the largest singular value over frequency.

    The log-spaced grid maximum is refined by golden-section search between
    its neighbours until the bracket is narrower than 0.1 %. For a state-space
    model the high-frequency limit ``sigma_max(D)`` is included. A swept
    :class:`FrequencyResponse` is only known on its grid, which is used as is.
    A peak on the first or last grid point sets ``warning``.
    """
    if isinstance(response, FrequencyResponse):
        sig = response.sigma_max()
        k = int(np.argmax(sig))
        warn = "peak at grid boundary; widen range" if k in (0, sig.size - 1) else None
        return HinfResult(float(sig[k]), float(response.omega[k]), warn)
    if not omega_lo > 0:
        raise AnalysisError("omega_lo must be positive")
    if isinstance(response, StateSpaceModel):
        model = response
        evaluate = lambda w: freq_eval(model, w)  # noqa: E731
        d_limit = float(np.linalg.svd(model.D, compute_uv=False)[0]) if model.D.size else 0.0
    else:
        evaluate = response
        d_limit = None
    grid = log_grid(omega_lo, omega_hi, points_per_decade)
    sig = np.array([_sigma(evaluate, w) for w in grid])
    k = int(np.argmax(sig))
    best, w_best = float(sig[k]), float(grid[k])
    warn = None
    if k in (0, grid.size - 1):
        warn = "peak at grid boundary; widen range"
    else:
        a, b = math.log(grid[k - 1]), math.log(grid[k + 1])
        g = (math.sqrt(5) - 1) / 2
        c, d = b - g * (b - a), a + g * (b - a)
        fc, fd = _sigma(evaluate, math.exp(c)), _sigma(evaluate, math.exp(d))
        while b - a > math.log1p(1e-3):
            if fc > fd:
                b, d, fd = d, c, fc
                c = b - g * (b - a)
                fc = _sigma(evaluate, math.exp(c))
            else:
                a, c, fc = c, d, fd
                d = a + g * (b - a)
                fd = _sigma(evaluate, math.exp(d))
        for val, w in ((fc, math.exp(c)), (fd, math.exp(d))):
            if val > best:
                best, w_best = val, w
    if d_limit is not None and d_limit > best:
        return HinfResult(d_limit, math.inf, None)
    return HinfResult(best, w_best, warn)


@dataclass(frozen=True)
class SisoMargins:
    """Classic margins. ``gm_abs`` is a factor, ``pm_deg`` in degrees."""

    gm_abs: float
    pm_deg: float
    omega_cg: float | None
    omega_cp: float | None

    @property
    def gm_db(self) -> float:
        return 20 * math.log10(self.gm_abs) if math.isfinite(self.gm_abs) else math.inf


def _crossings(x, level):
    # indices k with the segment [k, k+1] crossing `level`
    d = x - level
    return np.nonzero((d[:-1] == 0) | (d[:-1] * d[1:] < 0))[0]


def classic_siso_margins(open_loop: FrequencyResponse) -> SisoMargins:
    """Gain and phase margins of a SISO loop from its tabulated response.

    The phase is unwrapped along the grid from the lowest frequency. Every
    crossing of -180 deg (mod 360) is a phase crossover and every crossing
    of unit magnitude a gain crossover; crossings are interpolated linearly
    in log-frequency. The smallest margins are reported, ``inf`` when no
    crossover exists.
    """
    L = open_loop.siso()
    if L.size < 8:
        raise AnalysisError("frequency grid too sparse for margin analysis")
    logw = np.log(open_loop.omega)
    mag = np.abs(L)
    if np.any(mag == 0):
        raise AnalysisError("zero loop gain on grid")
    logmag = np.log(mag)
    phase = np.degrees(np.unwrap(np.angle(L)))

    gm, w_cg = math.inf, None
    lo = math.floor((phase.min() + 180) / 360)
    hi = math.ceil((phase.max() + 180) / 360)
    for j in range(lo, hi + 1):
        level = -180.0 + 360.0 * j
        for k in _crossings(phase, level):
            f = (level - phase[k]) / (phase[k + 1] - phase[k]) if phase[k + 1] != phase[k] else 0.0
            lm = logmag[k] + f * (logmag[k + 1] - logmag[k])
            g = math.exp(-lm)
            if g < gm:
                gm, w_cg = g, math.exp(logw[k] + f * (logw[k + 1] - logw[k]))

    pm, w_cp = math.inf, None
    for k in _crossings(logmag, 0.0):
        denom = logmag[k + 1] - logmag[k]
        f = -logmag[k] / denom if denom != 0 else 0.0
        ph = phase[k] + f * (phase[k + 1] - phase[k])
        margin = (ph + 180.0 + 180.0) % 360.0 - 180.0
        if margin < pm:
            pm, w_cp = margin, math.exp(logw[k] + f * (logw[k + 1] - logw[k]))
    return SisoMargins(gm, pm, w_cg, w_cp)


def is_hurwitz(A) -> bool:
    A = _mat(A)
    if A.size == 0:
        return True
    return bool(np.all(np.linalg.eigvals(A).real < -HURWITZ_TOL))


def jacobian_at_origin(f: Callable[[np.ndarray], np.ndarray], n: int, h: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian of ``f`` at zero; ``f(0)`` must vanish."""
    f0 = np.asarray(f(np.zeros(n)), dtype=float)
    if np.linalg.norm(f0) > 1e-12:
        raise ModelError("f(0) != 0; the origin is not an equilibrium")
    J = np.empty((n, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = h
        J[:, j] = (np.asarray(f(e), float) - np.asarray(f(-e), float)) / (2 * h)
    return J
