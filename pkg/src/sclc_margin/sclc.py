"""State-compensation-linearization-based control (SCLC).

The plant ``dx = A x + f(x) + B mu`` is split additively into a linear
primary system carrying the initial state and a nonlinear secondary system
started from rest. A copy of the secondary dynamics driven by the measured
state serves as observer::

    d/dt xs_hat = A xs_hat + f(x) + B u_s,   xs_hat(0) = 0
    xp_hat      = x - xs_hat

and the applied control is ``u = H(s)(-K xp_hat) + L(xp_hat, xs_hat)``. The
margin gauge acts on the total command, ``mu = (I + Delta) u``.

Nonlinearities and secondary laws act on the last axis of their arguments so
that batches of trajectories can be propagated at once.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .exceptions import ConfigError, ModelError
from .lti import StateSpaceModel, is_hurwitz, jacobian_at_origin, solve_care
from .numerics import DelayLine, TimeSeries, integrate, l2_norm

__all__ = [
    "NonlinearPlant",
    "Perturbation",
    "SclcController",
    "JlcController",
    "SimResult",
    "NONLINEARITIES",
    "SECONDARY_LAWS",
    "make_nonlinearity",
    "make_secondary_law",
    "simulate_closed_loop",
    "simulate_decomposed",
    "simulate_secondary",
    "simulate_jlc",
    "prestabilize",
    "jlc_controller",
]

Nonlinearity = Callable[[np.ndarray], np.ndarray]
SecondaryLaw = Callable[[np.ndarray, np.ndarray], np.ndarray]


# ---------------------------------------------------------------------------
# catalog of nonlinearities f(x)


def _zero_field(params):
    return lambda x: np.zeros_like(np.asarray(x, dtype=float))


def _linear_field(params):
    M = np.asarray(params["M"], dtype=float)
    return lambda x: np.asarray(x, dtype=float) @ M.T


def _rational_square(params):
    """``f_target = x_source^2 / (1 + a x_source^2)``; ``a = 0`` is a plain square."""
    a = float(params.get("a", 0.0))
    src = int(params["source"])
    dst = int(params.get("target", src))
    n = int(params["n"])

    def f(x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[:-1] + (n,))
        xi = x[..., src]
        sq = xi * xi
        out[..., dst] = sq / (1.0 + a * sq)
        return out

    return f


NONLINEARITIES: dict[str, Callable[[Mapping], Nonlinearity]] = {
    "zero": _zero_field,
    "linear": _linear_field,
    "rational_square": _rational_square,
}


def make_nonlinearity(name: str, params: Mapping | None = None) -> Nonlinearity:
    try:
        factory = NONLINEARITIES[name]
    except KeyError:
        raise ConfigError(f"unknown nonlinearity {name!r}") from None
    return factory(dict(params or {}))


# ---------------------------------------------------------------------------
# plant, perturbation gauge, controllers


@dataclass(frozen=True)
class NonlinearPlant:
    """``dx = A x + f(x) + B mu`` with ``f(0) = 0``.

    ``k0`` records a prestabilizing feedback already folded into ``A``; the
    input physically applied is then ``mu - k0 x``.
    """

    A: np.ndarray
    B: np.ndarray
    f: Nonlinearity
    name: str = "plant"
    k0: np.ndarray | None = None
    f_spec: tuple | None = None

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        n = A.shape[0]
        if A.shape != (n, n):
            raise ModelError("A must be square")
        B = np.asarray(self.B, dtype=float).reshape(n, -1)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        f0 = np.asarray(self.f(np.zeros(n)), dtype=float)
        if f0.shape != (n,):
            raise ModelError("f must map R^n to R^n")
        if np.linalg.norm(f0) > 1e-12:
            raise ModelError("f(0) must vanish")

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    def jacobian(self) -> np.ndarray:
        return self.A + jacobian_at_origin(self.f, self.n)


@dataclass(frozen=True)
class Perturbation:
    """The margin gauge at the plant input.

    ``kind`` is ``"none"``, ``"gain"`` (``Delta = diag(values)``) or
    ``"delay"`` (``mu_i(t) = u_i(t - values[i])``).
    """

    kind: str = "none"
    values: tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind not in ("none", "gain", "delay"):
            raise ConfigError(f"unknown perturbation kind {self.kind!r}")
        vals = tuple(float(v) for v in np.atleast_1d(self.values)) if self.kind != "none" else ()
        if not all(np.isfinite(vals)):
            raise ConfigError("perturbation entries must be finite")
        if self.kind == "delay" and any(v < 0 for v in vals):
            raise ConfigError("delays must be non-negative")
        object.__setattr__(self, "values", vals)

    @classmethod
    def none(cls) -> "Perturbation":
        return cls()

    @classmethod
    def gain(cls, gammas) -> "Perturbation":
        return cls("gain", tuple(np.atleast_1d(gammas)))

    @classmethod
    def delay(cls, taus) -> "Perturbation":
        return cls("delay", tuple(np.atleast_1d(taus)))

    def resolved(self, m: int) -> np.ndarray:
        """Per-channel values; a single entry is broadcast to all ``m`` inputs."""
        v = np.asarray(self.values, dtype=float)
        if v.size == 1 and m > 1:
            v = np.full(m, v[0])
        if v.size != m:
            raise ConfigError(f"perturbation needs {m} entries, got {v.size}")
        return v

    def describe(self) -> str:
        if self.kind == "none":
            return "none"
        return f"{self.kind}(" + ",".join(f"{v:g}" for v in self.values) + ")"


@dataclass(frozen=True)
class SclcController:
    """Composed controller: primary ``u_p = H(s)(-K xp_hat)`` plus secondary law.

    Immutable; the observer and filter states live in each simulation run.
    """

    K: np.ndarray
    H: StateSpaceModel
    secondary_law: SecondaryLaw
    law_name: str = "custom"

    def __post_init__(self):
        K = np.atleast_2d(np.asarray(self.K, dtype=float))
        object.__setattr__(self, "K", K)
        m, n = K.shape
        if self.H.n_inputs != m or self.H.n_outputs != m:
            raise ModelError("H must be m x m")
        if not is_hurwitz(self.H.A):
            raise ModelError("H must be stable")
        us0 = np.asarray(self.secondary_law(np.zeros(n), np.zeros(n)), dtype=float)
        if us0.shape != (m,):
            raise ModelError("secondary law must return an m-vector")
        if np.linalg.norm(us0) > 1e-12:
            raise ModelError("secondary law must vanish at the origin")

    @property
    def n(self) -> int:
        return self.K.shape[1]

    @property
    def m(self) -> int:
        return self.K.shape[0]


@dataclass(frozen=True)
class JlcController:
    """Linear state feedback ``u = -K x`` from the Jacobian linearization."""

    K: np.ndarray
    A_lin: np.ndarray


@dataclass
class SimResult:
    x: TimeSeries
    xp_hat: TimeSeries
    xs_hat: TimeSeries
    u_p: TimeSeries
    u_s: TimeSeries
    u: TimeSeries
    mu: TimeSeries
    blowup_time: float | None = None
    norms: dict = field(default_factory=dict)

    @property
    def verdict(self) -> str:
        return "diverged" if self.blowup_time is not None else "converged"

    @property
    def converged(self) -> bool:
        return self.blowup_time is None

    def decomposition_error(self) -> float:
        """``max_t ||xp_hat + xs_hat - x||``."""
        return float(np.max(np.linalg.norm(self.xp_hat.samples + self.xs_hat.samples - self.x.samples, axis=1)))

    def timeseries(self) -> TimeSeries:
        """All signals side by side, for CSV export."""
        blocks, names = [], []
        for label, ts in (("x", self.x), ("xp_hat", self.xp_hat), ("xs_hat", self.xs_hat),
                          ("u_p", self.u_p), ("u_s", self.u_s), ("u", self.u), ("mu", self.mu)):
            blocks.append(ts.samples)
            names += [f"{label}{i + 1}" for i in range(ts.n_channels)]
        return TimeSeries(self.x.dt, np.hstack(blocks), self.x.t0, tuple(names), self.blowup_time)


def _primary_filter(ctrl: SclcController):
    """Return ``(dxh(xh, v), up(xh, v))`` for ``v = -K xp`` through ``H``."""
    H = ctrl.H
    if H.is_static:
        D = H.D
        identity = np.array_equal(D, np.eye(ctrl.m))
        return None, (lambda xh, v: v) if identity else (lambda xh, v: v @ D.T)
    return (lambda xh, v: xh @ H.A.T + v @ H.B.T), (lambda xh, v: xh @ H.C.T + v @ H.D.T)


def _mu_series(pert: Perturbation, u: np.ndarray, dt: float, m: int) -> np.ndarray:
    if pert.kind == "none":
        return u.copy()
    vals = pert.resolved(m)
    if pert.kind == "gain":
        return u * (1.0 + vals)
    line = DelayLine(vals, dt)
    out = np.empty_like(u)
    for k, row in enumerate(u):
        line.push(k * dt, row)
        out[k] = np.where(vals == 0.0, row, line.read(k * dt))
    return out


def _ts(dt, samples, blowup):
    return TimeSeries(dt, samples, blowup_time=blowup)


def simulate_closed_loop(
    plant: NonlinearPlant,
    ctrl: SclcController,
    pert: Perturbation,
    x0,
    T: float,
    dt: float = 1e-3,
) -> SimResult:
    """Simulate the plant under the composed controller and margin gauge.

    Plant, observer and ``H`` filter advance together in one RK4 step on the
    stacked state ``[x, xs_hat, xh]``.
    """
    n, m = plant.n, plant.m
    if ctrl.n != n or ctrl.m != m:
        raise ModelError("controller dimensions do not match plant")
    A, B, f, K, law = plant.A, plant.B, plant.f, ctrl.K, ctrl.secondary_law
    At, Bt, Kt = A.T, B.T, K.T
    dxh, up_of = _primary_filter(ctrl)
    nh = ctrl.H.n_states
    kind = pert.kind
    vals = pert.resolved(m) if kind != "none" else None
    line = DelayLine(vals, dt) if kind == "delay" else None
    zero_delay = (vals == 0.0) if kind == "delay" else None

    def controls(z):
        x, xs = z[..., :n], z[..., n : 2 * n]
        xh = z[..., 2 * n :]
        xp = x - xs
        v = -(xp @ Kt)
        u_p = up_of(xh, v)
        u_s = law(xp, xs)
        return x, xs, xh, xp, v, u_p, u_s

    def dynamics(t, z):
        x, xs, xh, xp, v, u_p, u_s = controls(z)
        u = u_p + u_s
        if kind == "none":
            mu = u
        elif kind == "gain":
            mu = u * (1.0 + vals)
        else:
            mu = np.where(zero_delay, u, line.read(t))
        fx = f(x)
        dz = np.empty_like(z)
        dz[:n] = x @ At + fx + mu @ Bt
        dz[n : 2 * n] = xs @ At + fx + u_s @ Bt
        if nh:
            dz[2 * n :] = dxh(xh, v)
        return dz

    def record_input(t, z):
        *_, u_p, u_s = controls(z)
        line.push(t, u_p + u_s)

    z0 = np.concatenate([np.asarray(x0, float).ravel(), np.zeros(n), np.zeros(nh)])
    traj = integrate(dynamics, z0, dt, T, on_step=record_input if line is not None else None)
    Z = traj.samples
    x, xs, _, xp, _, u_p, u_s = controls(Z)
    u = u_p + u_s
    mu = _mu_series(pert, u, dt, m)
    bt = traj.blowup_time
    res = SimResult(
        x=_ts(dt, x, bt), xp_hat=_ts(dt, xp, bt), xs_hat=_ts(dt, xs, bt),
        u_p=_ts(dt, u_p, bt), u_s=_ts(dt, u_s, bt), u=_ts(dt, u, bt), mu=_ts(dt, mu, bt),
        blowup_time=bt,
    )
    res.norms = {k: l2_norm(getattr(res, k)) for k in ("x", "xp_hat", "xs_hat", "u_p", "u_s", "u", "mu")}
    return res


def simulate_decomposed(plant: NonlinearPlant, ctrl: SclcController, x0, T: float, dt: float = 1e-3):
    """Integrate the primary and secondary subsystems with their own controllers.

    Primary: ``dxp = A xp + B u_p``, ``xp(0) = x0``. Secondary:
    ``dxs = A xs + f(xp + xs) + B u_s``, ``xs(0) = 0``, with
    ``u_s = L(xp, xs)``. No perturbation.

    Returns
    -------
    (primary, secondary) : tuple of SimResult
        ``primary.x`` is ``xp``; ``secondary.x`` is ``xs``.
    """
    n, m = plant.n, plant.m
    A, B, f, K, law = plant.A, plant.B, plant.f, ctrl.K, ctrl.secondary_law
    At, Bt, Kt = A.T, B.T, K.T
    dxh, up_of = _primary_filter(ctrl)
    nh = ctrl.H.n_states

    def parts(z):
        xp, xh, xs = z[..., :n], z[..., n : n + nh], z[..., n + nh :]
        v = -(xp @ Kt)
        return xp, xh, xs, v, up_of(xh, v), law(xp, xs)

    def dynamics(t, z):
        xp, xh, xs, v, u_p, u_s = parts(z)
        dz = np.empty_like(z)
        dz[:n] = xp @ At + u_p @ Bt
        if nh:
            dz[n : n + nh] = dxh(xh, v)
        dz[n + nh :] = xs @ At + f(xp + xs) + u_s @ Bt
        return dz

    z0 = np.concatenate([np.asarray(x0, float).ravel(), np.zeros(nh), np.zeros(n)])
    traj = integrate(dynamics, z0, dt, T)
    xp, _, xs, _, u_p, u_s = parts(traj.samples)
    bt = traj.blowup_time
    zn, zm = np.zeros_like(xp), np.zeros_like(u_p)
    primary = SimResult(_ts(dt, xp, bt), _ts(dt, xp, bt), _ts(dt, zn, bt), _ts(dt, u_p, bt),
                        _ts(dt, zm, bt), _ts(dt, u_p, bt), _ts(dt, u_p, bt), bt)
    secondary = SimResult(_ts(dt, xs, bt), _ts(dt, xp, bt), _ts(dt, xs, bt), _ts(dt, zm, bt),
                          _ts(dt, u_s, bt), _ts(dt, u_s, bt), _ts(dt, u_s, bt), bt)
    for r in (primary, secondary):
        r.norms = {"x": l2_norm(r.x), "u": l2_norm(r.u)}
    return primary, secondary


def simulate_secondary(plant: NonlinearPlant, law: SecondaryLaw, xp_of_t, n_batch: int, T: float, dt: float = 1e-3):
    """Drive the secondary subsystem open loop by prescribed primary states.

    ``xp_of_t(t)`` returns the ``(n_batch, n)`` primary states at time ``t``;
    every row is an independent run from ``xs(0) = 0``.

    Returns
    -------
    xp, u_s : ndarray, shapes (N, n_batch, n) and (N, n_batch, m)
    blowup : ndarray of float, shape (n_batch,)
        Blow-up time per row, ``nan`` when the row stayed bounded.
    """
    from .numerics import DIVERGENCE_THRESHOLD

    n = plant.n
    A, B, f = plant.A, plant.B, plant.f
    At, Bt = A.T, B.T
    N = int(np.floor(T / dt + 1e-9)) + 1
    xs = np.zeros((n_batch, n))
    alive = np.ones(n_batch, dtype=bool)
    blowup = np.full(n_batch, np.nan)
    XP = np.empty((N, n_batch, n))
    US = np.empty((N, n_batch, plant.m))

    def rhs(t, xs):
        xp = xp_of_t(t)
        return xs @ At + f(xp + xs) + law(xp, xs) @ Bt

    half = 0.5 * dt
    # rows that overflow are detected below and frozen
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(N):
            t = k * dt
            xp = xp_of_t(t)
            XP[k] = xp
            US[k] = law(xp, xs)
            if k == N - 1:
                break
            k1 = rhs(t, xs)
            k2 = rhs(t + half, xs + half * k1)
            k3 = rhs(t + half, xs + half * k2)
            k4 = rhs(t + dt, xs + dt * k3)
            xs = xs + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            bad = alive & (~np.all(np.isfinite(xs), axis=1) | (np.linalg.norm(xs, axis=1) > DIVERGENCE_THRESHOLD))
            if np.any(bad):
                blowup[bad] = (k + 1) * dt
                alive &= ~bad
                xs[bad] = 0.0
    US[:, ~alive] = np.nan
    return XP, US, blowup


def simulate_jlc(plant: NonlinearPlant, jlc: JlcController, pert: Perturbation, x0, T: float, dt: float = 1e-3) -> SimResult:
    """Plant under plain state feedback ``u = -K x``."""
    n, m = plant.n, plant.m
    A, B, f, Kt = plant.A, plant.B, plant.f, jlc.K.T
    kind = pert.kind
    vals = pert.resolved(m) if kind != "none" else None
    line = DelayLine(vals, dt) if kind == "delay" else None

    def dynamics(t, x):
        u = -(x @ Kt)
        if kind == "gain":
            u = u * (1.0 + vals)
        elif kind == "delay":
            u = np.where(vals == 0.0, u, line.read(t))
        return x @ A.T + f(x) + u @ B.T

    on_step = (lambda t, x: line.push(t, -(x @ Kt))) if line is not None else None
    traj = integrate(dynamics, x0, dt, T, on_step=on_step)
    x = traj.samples
    u = -(x @ Kt)
    bt = traj.blowup_time
    zn, zm = np.zeros_like(x), np.zeros_like(u)
    res = SimResult(_ts(dt, x, bt), _ts(dt, x, bt), _ts(dt, zn, bt), _ts(dt, u, bt), _ts(dt, zm, bt),
                    _ts(dt, u, bt), _ts(dt, _mu_series(pert, u, dt, m), bt), bt)
    res.norms = {"x": l2_norm(res.x), "u": l2_norm(res.u)}
    return res


def prestabilize(plant: NonlinearPlant, k0) -> NonlinearPlant:
    """Fold ``u = mu - k0 x`` into the plant so that ``A - B k0`` is Hurwitz."""
    k0 = np.atleast_2d(np.asarray(k0, dtype=float)).reshape(plant.m, plant.n)
    A_bar = plant.A - plant.B @ k0
    if not is_hurwitz(A_bar):
        from .exceptions import SynthesisError

        raise SynthesisError("A - B k0 is not Hurwitz")
    total = k0 if plant.k0 is None else plant.k0 + k0
    return NonlinearPlant(A_bar, plant.B, plant.f, plant.name, total, plant.f_spec)


def jlc_controller(plant: NonlinearPlant, Q, R) -> JlcController:
    """LQR on the Jacobian linearization at the origin."""
    A_lin = plant.jacobian()
    _, K = solve_care(A_lin, plant.B, Q, R)
    return JlcController(K, A_lin)


# ---------------------------------------------------------------------------
# catalog of secondary laws u_s = L(xp_hat, xs_hat)


def _zero_law(plant, params):
    m = plant.m
    return lambda xp, xs: np.zeros(np.shape(xs)[:-1] + (m,))


def _linear_law(plant, params):
    M = np.atleast_2d(np.asarray(params["M"], dtype=float))
    N = np.atleast_2d(np.asarray(params.get("N", np.zeros_like(M)), dtype=float))
    return lambda xp, xs: xs @ M.T + xp @ N.T


def _backstepping(plant, params):
    """Backstepping for two-state strict-feedback secondary dynamics.

    With ``z1 = xs1`` and ``z2 = xs2 + kappa xs1``, ``kappa = (c1 + a11)/a12``,
    the law renders ``dz1 = -c1 z1 + a12 z2`` and ``dz2 = -a12 z1 - c2 z2`` and
    cancels ``f_2`` evaluated at ``xp_hat + xs_hat``.
    """
    A, B, f = plant.A, plant.B, plant.f
    if plant.n != 2 or plant.m != 1 or B[0, 0] != 0.0 or B[1, 0] == 0.0:
        raise ModelError("backstepping law needs n=2, m=1 and B = [0, b2]'")
    probe = np.array([[0.3, -0.7], [1.1, 2.0], [-5.0, 4.0]])
    if np.any(np.abs(f(probe)[:, 0]) > 0):
        raise ModelError("backstepping law needs f_1 = 0 (strict feedback form)")
    (a11, a12), (a21, a22) = A
    if a12 == 0.0:
        raise ModelError("backstepping law needs a12 != 0")
    c1, c2 = float(params["c1"]), float(params["c2"])
    b2 = B[1, 0]
    kappa = (c1 + a11) / a12
    # u_s is linear in xs plus the cancellation term
    g1 = -a12 - c2 * kappa - a21 - kappa * a11
    g2 = -c2 - a22 - kappa * a12
    gains = np.array([g1, g2]) / b2

    def law(xp, xs):
        xs = np.asarray(xs, dtype=float)
        lin = xs @ gains
        return (lin - f(np.asarray(xp, float) + xs)[..., 1] / b2)[..., None]

    law.gains = gains
    return law


def _lyapunov3(plant, params):
    """Three-state, two-input Lyapunov law with cancellation of ``f_3``."""
    if plant.n != 3 or plant.m != 2:
        raise ModelError("lyapunov3 law needs n=3, m=2")
    c = float(params["c"])
    f = plant.f

    def law(xp, xs):
        xs = np.asarray(xs, dtype=float)
        f3 = f(np.asarray(xp, float) + xs)[..., 2]
        u1 = -(xs[..., 0] - xs[..., 1] + f3)
        u2 = -c * (-xs[..., 0] + xs[..., 1] + xs[..., 2])
        return np.stack([u1, u2], axis=-1)

    return law


SECONDARY_LAWS: dict[str, Callable[[NonlinearPlant, Mapping], SecondaryLaw]] = {
    "zero": _zero_law,
    "linear": _linear_law,
    "backstepping": _backstepping,
    "lyapunov3": _lyapunov3,
}


def make_secondary_law(name: str, plant: NonlinearPlant, params: Mapping | None = None) -> SecondaryLaw:
    try:
        factory = SECONDARY_LAWS[name]
    except KeyError:
        raise ConfigError(f"unknown secondary law {name!r}") from None
    return factory(plant, dict(params or {}))
