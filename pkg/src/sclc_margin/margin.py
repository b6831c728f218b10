"""L2 gain and time-delay margins of SCLC closed loops.

Two routes lead to the whole-system margins. The theoretical route searches
the largest perturbation for which the small-gain condition
``k_l * ||G_Delta|| < 1`` holds, with

    G_Delta(s) = (sI - A + B (I + Delta(s)) H(s) K)^-1 B Delta(s)

(control law ``u_p = -H K x_p``). The data-driven route measures
``G0B = (sI - A + B H K)^-1 B`` on the simulated closed loop by sine dwells
and applies the closed-form bounds

    gamma_2 = (1 - eps3) / (||G0B|| k_l),   tau_2 = (1 - eps4) / (||s G0B|| k_l).

Primary-system margins come from classic SISO margins or, for MIMO loops,
from the small-gain bounds on the input complementary sensitivity. The
final margins are the element-wise minimum.
"""
from __future__ import annotations

import itertools
import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .exceptions import AnalysisError
from .lti import (
    FrequencyResponse,
    StateSpaceModel,
    classic_siso_margins,
    freq_eval,
    frequency_response,
    hinf_norm,
    is_hurwitz,
    jacobian_at_origin,
    log_grid,
)
from .numerics import integrate, sine_dwell_batch
from .sclc import NonlinearPlant, SclcController, simulate_secondary

__all__ = [
    "KlEstimate",
    "MarginReport",
    "SweepConfig",
    "Probe",
    "probe_family",
    "estimate_kl",
    "primary_closed_loop",
    "g_delta_response",
    "g0b_response",
    "gain_feasibility",
    "delay_feasibility",
    "theoretical_gain_margin",
    "theoretical_delay_margin",
    "sweep_g0b",
    "margins_from_sweep",
    "g0b_norms",
    "primary_margin_siso",
    "primary_margin_mimo",
    "primary_loop_response",
    "combine",
    "nyquist_stable",
]

DEFAULT_GRID = log_grid(1e-3, 1e3, 40)
SEARCH_RTOL = 5e-3


# ---------------------------------------------------------------------------
# primary-loop algebra


def _H_eval(H: StateSpaceModel, w: float) -> np.ndarray:
    return freq_eval(H, w)


def primary_closed_loop(A, B, K, H: StateSpaceModel, gains=None) -> np.ndarray:
    """State matrix of the primary loop ``u = -(I + diag(gains)) H K x``.

    The state is ``[x, xh]`` with ``xh`` the realization state of ``H``.
    """
    A, B, K = np.asarray(A, float), np.asarray(B, float), np.asarray(K, float)
    n, m = B.shape
    E = np.eye(m) if gains is None else np.eye(m) + np.diag(np.broadcast_to(gains, (m,)))
    nh = H.n_states
    top = np.hstack([A - B @ E @ H.D @ K, B @ E @ H.C])
    if nh == 0:
        return top
    bottom = np.hstack([-H.B @ K, H.A])
    return np.vstack([top, bottom])


def _g_delta(A, B, K, H, w, Delta):
    n = A.shape[0]
    M = 1j * w * np.eye(n) - A + B @ (np.eye(Delta.shape[0]) + Delta) @ _H_eval(H, w) @ K
    return np.linalg.solve(M, B @ Delta)


def g_delta_response(A, B, K, H: StateSpaceModel, delta_eval: Callable[[float], np.ndarray], grid) -> FrequencyResponse:
    """Tabulate ``G_Delta(j omega)`` for a frequency-dependent gauge ``Delta``."""
    A, B, K = (np.asarray(v, float) for v in (A, B, K))
    return frequency_response(lambda w: _g_delta(A, B, K, H, w, np.asarray(delta_eval(w), complex)), grid)


def _g0b(A, B, K, H, w):
    n = A.shape[0]
    return np.linalg.solve(1j * w * np.eye(n) - A + B @ _H_eval(H, w) @ K, B.astype(complex))


def g0b_response(A, B, K, H: StateSpaceModel, grid) -> FrequencyResponse:
    """Direct evaluation of ``G0B(j omega) = (j omega I - A + B H K)^-1 B``."""
    A, B, K = (np.asarray(v, float) for v in (A, B, K))
    return frequency_response(lambda w: _g0b(A, B, K, H, w), grid)


def _loop(A, B, K, H, w):
    # L(jw) = H K (jwI - A)^-1 B, loop broken at the plant input
    n = A.shape[0]
    return _H_eval(H, w) @ K @ np.linalg.solve(1j * w * np.eye(n) - A, B.astype(complex))


def primary_loop_response(A, B, K, H: StateSpaceModel, grid, loop: int | None = None) -> FrequencyResponse:
    """Open-loop ``H K (sI - A)^-1 B``; ``loop=i`` keeps only diagonal element ``i``."""
    A, B, K = (np.asarray(v, float) for v in (A, B, K))
    fr = frequency_response(lambda w: _loop(A, B, K, H, w), grid)
    return fr if loop is None else fr.element(loop, loop)


def nyquist_stable(A, B, K, H: StateSpaceModel, delta_eval: Callable[[float], np.ndarray], w_max: float = 1e4) -> bool:
    """Generalized Nyquist test for ``u = -(I + Delta) H K x``.

    Counts the winding of ``det(I + (I + Delta) L(j omega))`` about the
    origin over the whole imaginary axis (twice the half-axis winding, since
    the loop has real coefficients) and compares it with the number of
    unstable open-loop poles of the plant and of ``H``.
    """
    A, B, K = (np.asarray(v, float) for v in (A, B, K))
    m = B.shape[1]
    P = int(np.sum(np.linalg.eigvals(A).real > 0))
    if H.n_states:
        P += int(np.sum(np.linalg.eigvals(H.A).real > 0))

    def det(w):
        D = np.asarray(delta_eval(w), complex)
        return np.linalg.det(np.eye(m) + (np.eye(m) + D) @ _loop(A, B, K, H, w))

    w = np.concatenate([[0.0], np.logspace(-4, math.log10(w_max), 3000)])
    vals = [det(x) for x in w]
    ws, ds = [w[0]], [vals[0]]
    for k in range(1, len(w)):
        lo, hi, dlo, dhi = w[k - 1], w[k], vals[k - 1], vals[k]
        stack = [(lo, hi, dlo, dhi, 0)]
        seg = []
        while stack:
            a, b, da, db, depth = stack.pop()
            step = abs(np.angle(db / da)) if da != 0 and db != 0 else math.pi
            if step > math.pi / 8 and depth < 30:
                mid = 0.5 * (a + b)
                dm = det(mid)
                stack.append((mid, b, dm, db, depth + 1))
                stack.append((a, mid, da, dm, depth + 1))
            else:
                seg.append((b, db))
        for b, db in seg:
            ws.append(b)
            ds.append(db)
    ds = np.asarray(ds)
    if np.any(np.abs(ds) < 1e-12):
        return False
    phase = np.unwrap(np.angle(ds))
    winding = 2 * (phase[-1] - phase[0]) / (2 * math.pi)
    return abs(winding - P) < 0.5


# ---------------------------------------------------------------------------
# k_l estimation


@dataclass(frozen=True)
class Probe:
    """Prescribed primary trajectory used to bound ``||u_s|| / ||x_p||``."""

    ident: str
    kind: str  # "exp", "sin" or "free"
    amplitude: float
    direction: np.ndarray
    rate: float = 0.0


@dataclass
class KlEstimate:
    k_l: float
    max_ratio: float
    beta: float
    n_probes: int
    max_probe: str | None
    safety: float
    ratios: dict = field(default_factory=dict)
    invalid: list = field(default_factory=list)


def probe_family(plant: NonlinearPlant, ctrl: SclcController, x0, T: float, dt: float = 1e-3,
                 amplitudes: Sequence[float] = (0.1, 1.0, 10.0), omegas: Sequence[float] | None = None) -> list[Probe]:
    """Deterministic probe set.

    For each amplitude scale ``s`` (times ``||x0||``): the free primary
    response from ``s * x0``, plus along every state axis a decaying
    exponential at each primary closed-loop rate and a sinusoid at each of
    ``omegas``. By default ``omegas`` are the peak frequencies of ``||G0B||``
    and ``||s G0B||``, clipped so that at least two periods fit in the
    horizon and at least 20 samples fit in a period.
    """
    x0 = np.asarray(x0, float)
    n = plant.n
    base = float(np.linalg.norm(x0)) or 1.0
    Acl = primary_closed_loop(plant.A, plant.B, ctrl.K, ctrl.H)
    rates = sorted({round(float(r), 9) for r in -np.linalg.eigvals(Acl).real})
    if omegas is None:
        A, B, K, H = plant.A, plant.B, ctrl.K, ctrl.H
        peaks = [hinf_norm(lambda w: _g0b(A, B, K, H, w)).omega_peak,
                 hinf_norm(lambda w: w * _g0b(A, B, K, H, w)).omega_peak]
        lo, hi = 4 * math.pi / T, 0.1 * math.pi / dt
        omegas = sorted({float(np.clip(w, lo, hi)) for w in peaks})
    probes = []
    for s in amplitudes:
        a = s * base
        probes.append(Probe(f"free:s={s:g}", "free", s, x0.copy()))
        for j in range(n):
            e = np.zeros(n)
            e[j] = 1.0
            for r in rates:
                probes.append(Probe(f"exp:s={s:g}:axis={j}:rate={r:.4g}", "exp", a, e, r))
            for w in omegas:
                probes.append(Probe(f"sin:s={s:g}:axis={j}:omega={w:.4g}", "sin", a, e, w))
    return probes


def _probe_signal(probes: Sequence[Probe], Acl: np.ndarray, n: int):
    lam, V = np.linalg.eig(Acl)
    Vinv = np.linalg.inv(V)
    P = len(probes)
    kinds = np.array([p.kind for p in probes])
    amp = np.array([p.amplitude for p in probes])[:, None]
    dirs = np.array([p.direction for p in probes])
    rate = np.array([p.rate for p in probes])
    free = kinds == "free"
    nz = Acl.shape[0]
    coeff = np.zeros((P, nz), dtype=complex)
    for i in np.nonzero(free)[0]:
        z0 = np.zeros(nz)
        z0[:n] = probes[i].amplitude * probes[i].direction
        coeff[i] = Vinv @ z0
    is_exp = (kinds == "exp")[:, None]
    is_sin = (kinds == "sin")[:, None]

    def xp_of_t(t):
        out = np.where(is_exp, amp * dirs * np.exp(-rate * t)[:, None], 0.0)
        out = out + np.where(is_sin, amp * dirs * np.sin(rate * t)[:, None], 0.0)
        if free.any():
            zf = (coeff * np.exp(lam * t)) @ V.T
            out = np.where(free[:, None], zf.real[:, :n], out)
        return out

    return xp_of_t


def estimate_kl(plant: NonlinearPlant, ctrl: SclcController, probes: Sequence[Probe], T: float,
                dt: float = 1e-3, safety: float = 1.2) -> KlEstimate:
    """Empirical bound ``k_l`` with ``||u_s|| <= k_l ||x_p|| + beta``.

    Each probe trajectory drives the secondary subsystem and its law open
    loop from rest; ``k_l`` is the largest observed L2 ratio times
    ``safety``. ``beta`` is the L2 norm of ``u_s`` under zero primary state.
    Probes whose secondary state diverges are reported in ``invalid`` and
    excluded.
    """
    if not probes:
        raise AnalysisError("probe set is empty")
    n = plant.n
    Acl = primary_closed_loop(plant.A, plant.B, ctrl.K, ctrl.H)
    xp_of_t = _probe_signal(probes, Acl, n)
    XP, US, blowup = simulate_secondary(plant, ctrl.secondary_law, xp_of_t, len(probes), T, dt)
    num = np.sqrt(np.trapezoid(np.sum(US ** 2, axis=2), dx=dt, axis=0))
    den = np.sqrt(np.trapezoid(np.sum(XP ** 2, axis=2), dx=dt, axis=0))
    ratios, invalid = {}, []
    for i, p in enumerate(probes):
        if not np.isnan(blowup[i]):
            invalid.append(p.ident)
        elif den[i] > 0:
            ratios[p.ident] = float(num[i] / den[i])
    zero = lambda t: np.zeros((1, n))  # noqa: E731
    _, US0, _ = simulate_secondary(plant, ctrl.secondary_law, zero, 1, T, dt)
    beta = float(np.sqrt(np.trapezoid(np.sum(US0 ** 2, axis=2), dx=dt, axis=0))[0])
    if not ratios:
        raise AnalysisError("every probe destabilized the secondary subsystem")
    best = max(ratios, key=ratios.get)
    max_ratio = ratios[best]
    return KlEstimate(safety * max_ratio, max_ratio, beta, len(probes), best if max_ratio > 0 else None,
                      safety, ratios, invalid)


# ---------------------------------------------------------------------------
# theoretical whole-system margins


def _corners(m: int, box: bool):
    if box:
        for c in itertools.product((-1.0, 0.0, 1.0), repeat=m):
            if any(c):
                yield np.array(c)
        return
    yield np.ones(m)
    yield -np.ones(m)
    if m > 1:
        for i in range(m):
            for sgn in (1.0, -1.0):
                e = np.zeros(m)
                e[i] = sgn
                yield e


def _sup_sigma(fun, grid) -> float:
    grid = np.asarray(grid, float)
    return hinf_norm(fun, grid[0], grid[-1], _ppd(grid)).norm


def _ppd(grid) -> int:
    return max(1, int(round((len(grid) - 1) / math.log10(grid[-1] / grid[0]))))


def gain_feasibility(k_l: float, A, B, K, H: StateSpaceModel, grid=DEFAULT_GRID, box: bool = False):
    """Predicate ``gamma -> bool`` for the small-gain gain-margin test."""
    A, B, K = (np.asarray(v, float) for v in (A, B, K))
    m = B.shape[1]

    def feasible(gamma: float) -> bool:
        for c in _corners(m, box):
            g = gamma * c
            if not is_hurwitz(primary_closed_loop(A, B, K, H, g)):
                return False
            D = np.diag(g).astype(complex)
            if k_l * _sup_sigma(lambda w: _g_delta(A, B, K, H, w, D), grid) >= 1.0:
                return False
        return True

    return feasible


def delay_feasibility(k_l: float, A, B, K, H: StateSpaceModel, grid=DEFAULT_GRID, box: bool = False):
    """Predicate ``tau -> bool`` for the small-gain delay-margin test."""
    A, B, K = (np.asarray(v, float) for v in (A, B, K))
    m = B.shape[1]
    corners = [c for c in _corners(m, box) if np.all(c >= 0)]

    def feasible(tau: float) -> bool:
        for c in corners:
            taus = tau * c
            delta = lambda w, taus=taus: np.diag(np.exp(-1j * w * taus) - 1.0)  # noqa: E731
            if not nyquist_stable(A, B, K, H, delta):
                return False
            if k_l * _sup_sigma(lambda w: _g_delta(A, B, K, H, w, delta(w)), grid) >= 1.0:
                return False
        return True

    return feasible


def _bisect(feasible, start: float = 1.0, upper_cap: float = 1e6, rtol: float = SEARCH_RTOL) -> float:
    if not feasible(1e-9):
        warnings.warn("small-gain condition fails at zero perturbation; margin is 0")
        return 0.0
    lo, hi = 0.0, start
    while feasible(hi):
        lo, hi = hi, 2 * hi
        if hi > upper_cap:
            return math.inf
    if lo == 0.0:
        lo = hi
        while not feasible(lo):
            hi, lo = lo, lo / 2
            if lo < 1e-9:
                return 0.0
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if feasible(mid) else (lo, mid)
    return lo


def theoretical_gain_margin(k_l: float, A, B, K, H: StateSpaceModel, grid=DEFAULT_GRID, box: bool = False) -> float:
    """Largest ``gamma`` with ``k_l ||G_gamma|| < 1`` and a stable perturbed loop.

    The perturbation ``diag(gamma_i)``, ``|gamma_i| <= gamma``, is tested at
    the uniform corners ``+-gamma I`` and at single-channel corners, or at
    every corner of the box when ``box`` is set.
    """
    if k_l <= 0:
        return math.inf
    return _bisect(gain_feasibility(k_l, A, B, K, H, grid, box), start=0.25)


def theoretical_delay_margin(k_l: float, A, B, K, H: StateSpaceModel, grid=DEFAULT_GRID, box: bool = False) -> float:
    """Largest uniform delay bound passing the small-gain test; see :func:`theoretical_gain_margin`."""
    if k_l <= 0:
        return math.inf
    return _bisect(delay_feasibility(k_l, A, B, K, H, grid, box), start=0.1)


# ---------------------------------------------------------------------------
# data-driven whole-system margins


@dataclass
class SweepConfig:
    """Sine-dwell campaign on the closed loop.

    Each frequency settles for ``max(min_settle_periods, settle_tau * tau_slow
    / period)`` periods, with ``tau_slow`` the slowest closed-loop time
    constant, and is measured over ``measure_periods`` periods (fewer when a
    period is longer than ``max_measure_time``). The step for a dwell is
    ``period / samples_per_period``, with the sample count raised until the
    step is at most ``min(dt_max, 1 / rho)``, ``rho`` the fastest linearized
    closed-loop rate. ``amplitude=None`` uses 1 % of ``||x0||``.
    """

    omega_lo: float = 1e-2
    omega_hi: float = 1e2
    points_per_decade: int = 25
    amplitude: float | None = None
    min_settle_periods: int = 2
    settle_tau: float = 10.0
    measure_periods: int = 5
    max_measure_time: float = 60.0
    samples_per_period: int = 64
    dt_max: float = 0.05

    def grid(self) -> np.ndarray:
        return log_grid(self.omega_lo, self.omega_hi, self.points_per_decade)


def _secondary_linearization(plant: NonlinearPlant, ctrl: SclcController) -> np.ndarray:
    n = plant.n
    zero = np.zeros(n)
    g = lambda xs: plant.A @ xs + plant.f(xs) + plant.B @ ctrl.secondary_law(zero, xs)  # noqa: E731
    return jacobian_at_origin(g, n)


def _loop_rates(plant, ctrl):
    eig = np.concatenate([
        np.linalg.eigvals(primary_closed_loop(plant.A, plant.B, ctrl.K, ctrl.H)),
        np.linalg.eigvals(_secondary_linearization(plant, ctrl)),
    ])
    return float(np.min(-eig.real)), float(np.max(np.abs(eig)))


def sweep_g0b(plant: NonlinearPlant, ctrl: SclcController, config: SweepConfig | None = None, x0=None) -> FrequencyResponse:
    """Measure ``G0B`` by sine dwells on the simulated nonlinear closed loop.

    Measurement wiring: the gauge is set to ``Delta = I`` and a gain ``1/2``
    is inserted after ``H`` in the primary path, so the plant receives
    ``mu = (I + Delta)(u_p / 2) + u_s + Delta q`` where ``q`` is the
    excitation injected in place of the ``Delta u_s`` feedthrough. The
    response is read at ``xp_hat = x - xs_hat``. The map ``q -> xp_hat`` is
    then ``G0B`` irrespective of the nonlinearity.

    Frequencies whose dwell diverges are dropped and listed in
    ``meta["invalid"]``.
    """
    cfg = config or SweepConfig()
    n, m = plant.n, plant.m
    A, B, f, K, law, H = plant.A, plant.B, plant.f, ctrl.K, ctrl.secondary_law, ctrl.H
    At, Bt, Kt = A.T, B.T, K.T
    nh = H.n_states
    scale = float(np.linalg.norm(x0)) if x0 is not None else 1.0
    amp = cfg.amplitude if cfg.amplitude is not None else 0.01 * (scale or 1.0)
    slow_rate, fast_rate = _loop_rates(plant, ctrl)
    if slow_rate <= 0:
        raise AnalysisError("measurement loop is not asymptotically stable")
    tau_slow = 1.0 / slow_rate
    dt_cap = min(cfg.dt_max, 1.0 / fast_rate)

    def rhs(t, Z, q):
        x, xs, xh = Z[:, :n], Z[:, n : 2 * n], Z[:, 2 * n :]
        xp = x - xs
        v = -(xp @ Kt)
        hv = v @ H.D.T + (xh @ H.C.T if nh else 0.0)
        u_p = 0.5 * hv
        u_s = law(xp, xs)
        mu = 2.0 * u_p + u_s + q
        fx = f(x)
        dZ = np.empty_like(Z)
        dZ[:, :n] = x @ At + fx + mu @ Bt
        dZ[:, n : 2 * n] = xs @ At + fx + u_s @ Bt
        if nh:
            dZ[:, 2 * n :] = xh @ H.A.T + v @ H.B.T
        return dZ

    # zero-excitation pre-run from a small offset must decay
    z_init = np.zeros(2 * n + nh)
    z_init[:n] = amp / math.sqrt(n)
    pre = integrate(lambda t, z: rhs(t, z[None, :], np.zeros((1, m)))[0], z_init, dt_cap, 10 * tau_slow)
    if pre.diverged or np.linalg.norm(pre.final) >= np.linalg.norm(z_init):
        raise AnalysisError("measurement wiring is not stable under zero excitation")

    grid = cfg.grid()
    period = 2 * np.pi / grid
    spp = np.maximum(cfg.samples_per_period, np.ceil(period / dt_cap)).astype(int)
    settle = np.maximum(cfg.min_settle_periods, np.ceil(cfg.settle_tau * tau_slow / period)).astype(int)
    measure = np.clip(np.floor(cfg.max_measure_time / period), 1, cfg.measure_periods).astype(int)
    omegas = np.repeat(grid, m)
    chans = np.tile(np.arange(m), grid.size)
    gains, valid = sine_dwell_batch(
        rhs, 2 * n + nh, omegas, chans, m, lambda Z: Z[:, :n] - Z[:, n : 2 * n], amp,
        np.repeat(settle, m), np.repeat(measure, m), np.repeat(spp, m),
    )
    vals = gains.reshape(grid.size, m, n).transpose(0, 2, 1)
    ok = valid.reshape(grid.size, m).all(axis=1)
    meta = {
        "amplitude": amp,
        "invalid": [float(w) for w in grid[~ok]],
        "settle_periods": settle.tolist(),
        "measure_periods": measure.tolist(),
        "samples_per_period": spp.tolist(),
        "wiring": "Delta=I, 1/2 gain in primary path, q -> xp_hat",
    }
    return FrequencyResponse(grid[ok], vals[ok], "swept", meta)


def margins_from_sweep(response: FrequencyResponse, k_l: float, eps3: float = 0.05, eps4: float = 0.05):
    """Closed-form whole-system margins from a ``G0B`` response.

    Returns ``(gamma_2, tau_2, ||G0B||, ||s G0B||)``; norms are grid suprema.
    """
    if len(response) == 0:
        raise AnalysisError("empty response")
    if not (0 < eps3 < 1 and 0 < eps4 < 1):
        raise AnalysisError("eps3 and eps4 must lie in (0, 1)")
    sig = response.sigma_max()
    g_norm = float(sig.max())
    sg_norm = float((response.omega * sig).max())
    if k_l <= 0 or g_norm == 0:
        if g_norm == 0:
            warnings.warn("degenerate response with zero norm")
        return math.inf, math.inf, g_norm, sg_norm
    return (1 - eps3) / (g_norm * k_l), (1 - eps4) / (sg_norm * k_l), g_norm, sg_norm


def g0b_norms(A, B, K, H: StateSpaceModel, grid=DEFAULT_GRID) -> tuple[float, float]:
    """``(||G0B||, ||s G0B||)`` evaluated directly, including the high-frequency limit."""
    A, B, K = (np.asarray(v, float) for v in (A, B, K))
    g = _sup_sigma(lambda w: _g0b(A, B, K, H, w), grid)
    sg = _sup_sigma(lambda w: w * _g0b(A, B, K, H, w), grid)
    return g, max(sg, float(np.linalg.svd(B, compute_uv=False)[0]))


# ---------------------------------------------------------------------------
# primary-system margins


def primary_margin_siso(open_loop: FrequencyResponse) -> tuple[float, float]:
    """``(gamma_1, tau_1) = (gm - 1, pm / omega_cp)`` from classic margins."""
    sm = classic_siso_margins(open_loop)
    gamma = sm.gm_abs - 1 if math.isfinite(sm.gm_abs) else math.inf
    if math.isinf(sm.pm_deg) or sm.omega_cp is None:
        tau = math.inf
    else:
        tau = math.radians(sm.pm_deg) / sm.omega_cp
    return gamma, tau


def _t_input(A, B, K, H, w):
    n = A.shape[0]
    Hk = _H_eval(H, w) @ K
    return Hk @ np.linalg.solve(1j * w * np.eye(n) - A + B @ Hk, B.astype(complex))


def primary_margin_mimo(A, B, K, H: StateSpaceModel, grid=DEFAULT_GRID) -> tuple[float, float]:
    """Small-gain margins of the primary loop.

    With the input complementary sensitivity
    ``T_i = H K (sI - A + B H K)^-1 B``: ``gamma_1 = 1 / ||T_i||`` and, since
    ``|exp(-j w tau) - 1| <= w tau``, ``tau_1 = 1 / ||s T_i||``.
    """
    A, B, K = (np.asarray(v, float) for v in (A, B, K))
    if not is_hurwitz(primary_closed_loop(A, B, K, H)):
        raise AnalysisError("primary loop is unstable")
    t_norm = _sup_sigma(lambda w: _t_input(A, B, K, H, w), grid)
    st_norm = _sup_sigma(lambda w: w * _t_input(A, B, K, H, w), grid)
    # high-frequency limit of s T_i is H(inf) K B
    st_norm = max(st_norm, float(np.linalg.svd(H.D @ K @ B, compute_uv=False)[0]))
    gamma = 1.0 / t_norm if t_norm > 0 else math.inf
    tau = 1.0 / st_norm if st_norm > 0 else math.inf
    return gamma, tau


# ---------------------------------------------------------------------------
# report


def _num(v):
    if v is None:
        return None
    v = float(v)
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    if math.isnan(v):
        return "nan"
    return float(f"{v:.12g}")


@dataclass
class MarginReport:
    """All margins of one analysis, with the method behind each value."""

    gamma1: float
    tau1: float
    gamma2: float
    tau2: float
    gamma: float
    tau: float
    k_l: float
    g0b_norm: float | None = None
    sg0b_norm: float | None = None
    eps3: float = 0.05
    eps4: float = 0.05
    methods: dict = field(default_factory=dict)
    gamma2_theory: float | None = None
    tau2_theory: float | None = None
    gamma2_sweep: float | None = None
    tau2_sweep: float | None = None
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        return _clean(d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def summary_row(self, example) -> list[str]:
        fmt = lambda v: "inf" if v is None or math.isinf(v) else f"{v:.6g}"  # noqa: E731
        method = self.methods.get("gamma2", "")
        return [str(example), fmt(self.gamma1), fmt(self.tau1), fmt(self.gamma2), fmt(self.tau2),
                fmt(self.gamma), fmt(self.tau), fmt(self.k_l), method]

    SUMMARY_HEADER = ["example", "gamma1", "tau1", "gamma2", "tau2", "gamma", "tau", "kl", "method"]


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (bool, str)) or obj is None:
        return obj
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return _num(obj)
    return str(obj)


def combine(gamma1: float, tau1: float, gamma2: float, tau2: float, k_l: float, **parts) -> MarginReport:
    """Element-wise minimum of primary and whole-system margins."""
    return MarginReport(gamma1, tau1, gamma2, tau2, min(gamma1, gamma2), min(tau1, tau2), k_l, **parts)
