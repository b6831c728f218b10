import json
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from helpers import built
from sclc_margin.exceptions import AnalysisError
from sclc_margin.lti import FrequencyResponse, StateSpaceModel, classic_siso_margins, frequency_response, log_grid, solve_care
from sclc_margin.margin import (
    MarginReport,
    Probe,
    SweepConfig,
    combine,
    delay_feasibility,
    estimate_kl,
    g0b_norms,
    g0b_response,
    g_delta_response,
    gain_feasibility,
    margins_from_sweep,
    nyquist_stable,
    primary_closed_loop,
    primary_loop_response,
    primary_margin_mimo,
    primary_margin_siso,
    probe_family,
    sweep_g0b,
    theoretical_delay_margin,
    theoretical_gain_margin,
)
from sclc_margin.sclc import NonlinearPlant, SclcController, make_nonlinearity, make_secondary_law

A1 = np.array([[0.0, 1.0], [-2.0, -3.0]])
B1 = np.array([[0.0], [1.0]])
I1 = StateSpaceModel.identity(1)
GRID = log_grid(1e-2, 1e2, 20)


def ex1_gain():
    return solve_care(A1, B1, np.eye(2), np.eye(1))[1]


def test_g_delta_zero_gauge_vanishes():
    K = ex1_gain()
    fr = g_delta_response(A1, B1, K, I1, lambda w: np.zeros((1, 1)), GRID)
    assert not np.any(fr.values)


def test_g_delta_small_gain_linearizes_to_g0b():
    K = ex1_gain()
    g0 = g0b_response(A1, B1, K, I1, GRID).values
    for gamma in (1e-2, 1e-3):
        gd = g_delta_response(A1, B1, K, I1, lambda w: gamma * np.eye(1), GRID).values / gamma
        assert np.abs(gd - g0).max() <= 2 * gamma * np.abs(g0).max()


def test_g0b_formula():
    K = ex1_gain()
    w = 0.7
    expected = np.linalg.solve(1j * w * np.eye(2) - A1 + B1 @ K, B1)
    assert np.allclose(g0b_response(A1, B1, K, I1, [w]).values[0], expected)


def test_g0b_norms_example1():
    g, sg = g0b_norms(A1, B1, ex1_gain(), I1)
    # peak at DC: ||(BK - A)^-1 B||
    assert g == pytest.approx(np.linalg.norm(np.linalg.solve(B1 @ ex1_gain() - A1, B1)), rel=1e-3)
    assert sg == pytest.approx(1.0, rel=1e-9)


def synthetic(values):
    return FrequencyResponse(GRID, np.asarray(values, complex))


def test_margins_from_sweep_formulas():
    vals = 1 / (1j * GRID + 2)
    g, t, gn, sgn = margins_from_sweep(synthetic(vals), 4.0, 0.05, 0.1)
    assert gn == pytest.approx(np.abs(vals).max())
    assert sgn == pytest.approx((GRID * np.abs(vals)).max())
    assert g == pytest.approx(0.95 / (gn * 4.0))
    assert t == pytest.approx(0.9 / (sgn * 4.0))


@settings(max_examples=40, deadline=None)
@given(st.floats(0.01, 100), st.floats(0.01, 100))
def test_margins_from_sweep_homogeneity(k_l, c):
    vals = 1 / (1j * GRID + 1)
    g1, t1, *_ = margins_from_sweep(synthetic(vals), k_l)
    g2, t2, *_ = margins_from_sweep(synthetic(vals), 2 * k_l)
    assert g2 == g1 / 2 and t2 == t1 / 2
    g3, t3, *_ = margins_from_sweep(synthetic(c * vals), k_l)
    assert g3 == pytest.approx(g1 / c, rel=1e-12) and t3 == pytest.approx(t1 / c, rel=1e-12)


def test_margins_from_sweep_degenerate_and_invalid():
    with pytest.warns(UserWarning):
        g, t, *_ = margins_from_sweep(synthetic(np.zeros(GRID.size)), 3.0)
    assert math.isinf(g) and math.isinf(t)
    assert margins_from_sweep(synthetic(np.ones(GRID.size)), 0.0)[0] == math.inf
    with pytest.raises(AnalysisError):
        margins_from_sweep(synthetic(np.ones(GRID.size)), 1.0, eps3=1.0)
    with pytest.raises(AnalysisError):
        margins_from_sweep(FrequencyResponse([], np.zeros((0, 1, 1))), 1.0)


def test_primary_margin_siso_conversion():
    # |L| = 1/w, phase -150 deg at w = 1 falling 30 deg per octave: gm = 2, pm = 30 deg at w = 1
    w = log_grid(0.1, 10, 50)
    L = (1 / w) * np.exp(1j * np.radians(-150 - 30 * np.log2(w)))
    g1, t1 = primary_margin_siso(FrequencyResponse(w, L))
    assert g1 == pytest.approx(1.0, rel=1e-9)
    assert t1 == pytest.approx(math.pi / 6, rel=1e-9)


def test_primary_margin_siso_no_crossover():
    w = log_grid(0.1, 10, 10)
    assert primary_margin_siso(FrequencyResponse(w, 0.1 / (1j * w + 1))) == (math.inf, math.inf)


def test_primary_margin_example1_infinite():
    loop = primary_loop_response(A1, B1, ex1_gain(), I1, log_grid(1e-3, 1e3, 40))
    assert primary_margin_siso(loop) == (math.inf, math.inf)


def test_primary_margin_mimo_zero_gain():
    A = -np.eye(2)
    assert primary_margin_mimo(A, np.eye(2), np.zeros((2, 2)), StateSpaceModel.identity(2)) == (math.inf, math.inf)


def test_primary_margin_mimo_unstable_loop():
    with pytest.raises(AnalysisError):
        primary_margin_mimo(np.eye(2), np.eye(2), np.zeros((2, 2)), StateSpaceModel.identity(2))


def test_primary_margin_mimo_decoupled_loops_bounded_by_siso():
    A = np.diag([-1.0, -2.0])
    K = np.diag([3.0, 5.0])
    H = StateSpaceModel.identity(2)
    g_m, t_m = primary_margin_mimo(A, np.eye(2), K, H)
    grid = log_grid(1e-3, 1e3, 80)
    siso_t = []
    for i in range(2):
        loop = frequency_response(lambda w, i=i: np.array([[K[i, i] / (1j * w - A[i, i])]]), grid)
        sm = classic_siso_margins(loop)
        T = K[i, i] / (1j * grid - A[i, i] + K[i, i])
        assert 1 / np.abs(T).max() <= sm.gm_abs - 1 if math.isfinite(sm.gm_abs) else True
        siso_t.append(math.radians(sm.pm_deg) / sm.omega_cp)
    T1 = np.array([K[i, i] / (1j * grid - A[i, i] + K[i, i]) for i in range(2)])
    assert g_m == pytest.approx(1 / np.abs(T1).max(), rel=1e-3)
    assert t_m <= min(siso_t)


def test_nyquist_delay_margin_first_order_loop():
    # L = 2/(s+1): crossover at sqrt(3), phase margin 120 deg
    A, B, K = np.array([[-1.0]]), np.array([[1.0]]), np.array([[2.0]])
    tau_star = (2 * math.pi / 3) / math.sqrt(3)
    delay = lambda tau: (lambda w: np.array([[np.exp(-1j * w * tau) - 1.0]]))  # noqa: E731
    assert nyquist_stable(A, B, K, I1, delay(0.95 * tau_star))
    assert not nyquist_stable(A, B, K, I1, delay(1.05 * tau_star))


@pytest.mark.parametrize("gain", [-0.9, -0.5, 0.0, 1.0, 5.0])
def test_nyquist_agrees_with_eigenvalues_for_static_gains(gain):
    A = np.array([[1.0, 1.0], [0.0, 1.0]])
    K = solve_care(A, B1, 10 * np.eye(2), np.eye(1))[1]
    eig_stable = bool(np.all(np.linalg.eigvals(primary_closed_loop(A, B1, K, I1, [gain])).real < 0))
    assert nyquist_stable(A, B1, K, I1, lambda w: np.array([[gain]])) == eig_stable


def test_theoretical_margins_vacuous_for_zero_kl():
    K = ex1_gain()
    assert theoretical_gain_margin(0.0, A1, B1, K, I1) == math.inf
    assert theoretical_delay_margin(0.0, A1, B1, K, I1) == math.inf


@pytest.mark.parametrize("k_l", [2.0, 5.0])
def test_theoretical_gain_margin_brackets(k_l):
    K = ex1_gain()
    g = theoretical_gain_margin(k_l, A1, B1, K, I1)
    feas = gain_feasibility(k_l, A1, B1, K, I1)
    assert feas(0.5 * g) and not feas(1.5 * g)
    assert not feas(g * 1.006)  # search resolution 0.5 %


def test_theoretical_delay_margin_brackets():
    K = ex1_gain()
    t = theoretical_delay_margin(5.0, A1, B1, K, I1)
    feas = delay_feasibility(5.0, A1, B1, K, I1)
    assert feas(0.5 * t) and not feas(1.5 * t)


def test_theoretical_margin_zero_when_infeasible_at_origin():
    # k_l so large that the gain test fails even for a tiny perturbation
    K = ex1_gain()
    with pytest.warns(UserWarning):
        assert theoretical_gain_margin(1e12, A1, B1, K, I1) == 0.0


def test_box_corners_no_larger_than_default():
    b = built(3)
    A, B, K, H = b.plant.A, b.plant.B, b.ctrl.K, b.ctrl.H
    g_def = theoretical_gain_margin(5.0, A, B, K, H)
    g_box = theoretical_gain_margin(5.0, A, B, K, H, box=True)
    assert g_box <= g_def * (1 + 1e-9)


def linear_secondary(scale=1.0):
    plant = NonlinearPlant(A1, B1, make_nonlinearity("linear", {"M": [[0.0, 0.0], [0.3, -0.2]]}))
    law = make_secondary_law("linear", plant, {"M": [[-4.0, -4.0]]})
    K = solve_care(A1 + np.array([[0.0, 0.0], [0.3, -0.2]]), B1, np.eye(2), np.eye(1))[1]
    return plant, SclcController(K, I1, law, "linear")


def test_estimate_kl_trivial_secondary():
    plant = NonlinearPlant(A1, B1, make_nonlinearity("zero"))
    law = make_secondary_law("linear", plant, {"M": [[-1.0, -1.0]]})
    ctrl = SclcController(ex1_gain(), I1, law)
    est = estimate_kl(plant, ctrl, probe_family(plant, ctrl, [1.0, 1.0], 5.0), 5.0)
    assert est.k_l == 0.0 and est.beta == 0.0 and est.max_probe is None


def test_estimate_kl_homogeneous_for_linear_law():
    plant, ctrl = linear_secondary()
    probes = probe_family(plant, ctrl, [1.0, 1.0], 5.0, amplitudes=(1.0,))
    doubled = [Probe(p.ident, p.kind, 2 * p.amplitude, p.direction, p.rate) for p in probes]
    e1 = estimate_kl(plant, ctrl, probes, 5.0)
    e2 = estimate_kl(plant, ctrl, doubled, 5.0)
    assert e1.k_l > 0
    for key, r in e1.ratios.items():
        assert e2.ratios[key] == pytest.approx(r, rel=1e-6)


def test_estimate_kl_dominates_every_ratio():
    b = built(1)
    probes = probe_family(b.plant, b.ctrl, b.config.x0, 5.0)
    est = estimate_kl(b.plant, b.ctrl, probes, 5.0)
    assert est.n_probes == len(probes)
    assert all(est.k_l >= r for r in est.ratios.values())
    assert est.k_l == pytest.approx(1.2 * max(est.ratios.values()))


def test_estimate_kl_flags_divergent_probes():
    plant = NonlinearPlant(A1, B1, make_nonlinearity("rational_square", {"a": 0.0, "source": 1, "n": 2}))
    law = make_secondary_law("zero", plant)  # no cancellation: large probes blow up
    ctrl = SclcController(ex1_gain(), I1, law)
    probes = probe_family(plant, ctrl, [10.0, 10.0], 5.0)
    est = estimate_kl(plant, ctrl, probes, 5.0)
    assert est.invalid
    assert not set(est.invalid) & set(est.ratios)


def test_estimate_kl_rejects_empty_probe_set():
    b = built(1)
    with pytest.raises(AnalysisError):
        estimate_kl(b.plant, b.ctrl, [], 1.0)


def brute_force_ratio(b, T=20.0, dt=1e-3):
    """Independent sup of ||u_s|| / ||x_p|| over a dense probe family, via one stacked solve_ivp."""
    plant, ctrl = b.plant, b.ctrl
    A, B, f, law = plant.A, plant.B, plant.f, ctrl.secondary_law
    n = plant.n
    x0n = np.linalg.norm(b.config.x0)
    rates = np.unique(np.round(-np.linalg.eigvals(A - B @ ctrl.K).real, 9))
    omegas = np.geomspace(4 * math.pi / T, 0.1 * math.pi / dt, 5)
    amps, dirs, kinds, params = [], [], [], []
    for s in np.geomspace(0.1, 10.0, 10):
        for ang in np.linspace(0, math.pi, 8, endpoint=False):
            d = np.array([math.cos(ang), math.sin(ang)])
            for r in rates:
                amps.append(s * x0n), dirs.append(d), kinds.append(0), params.append(r)
            for w in omegas:
                amps.append(s * x0n), dirs.append(d), kinds.append(1), params.append(w)
    amps, dirs, kinds, params = map(np.array, (amps, dirs, kinds, params))
    P = amps.size

    def xp(t):
        shape = np.where(kinds == 0, np.exp(-params * t), np.sin(params * t))
        return (amps * shape)[:, None] * dirs

    def rhs(t, y):
        xs = y.reshape(P, n)
        x_p = xp(t)
        return (xs @ A.T + f(x_p + xs) + law(x_p, xs) @ B.T).ravel()

    t_eval = np.arange(0.0, T + dt / 2, dt)
    sol = solve_ivp(rhs, (0.0, T), np.zeros(P * n), t_eval=t_eval, rtol=1e-9, atol=1e-12, max_step=0.005)
    XS = sol.y.T.reshape(-1, P, n)
    XP = np.stack([xp(t) for t in t_eval])
    US = law(XP, XS)
    num = np.trapezoid(np.sum(US**2, axis=2), t_eval, axis=0)
    den = np.trapezoid(np.sum(XP**2, axis=2), t_eval, axis=0)
    return float(np.sqrt(num / den).max())


@pytest.mark.slow
def test_kl_matches_dense_brute_force_example1():
    b = built(1)
    cfg = b.config
    est = estimate_kl(b.plant, b.ctrl, probe_family(b.plant, b.ctrl, cfg.x0, cfg.T), cfg.T)
    oracle = 1.2 * brute_force_ratio(b)
    assert abs(est.k_l - oracle) / oracle <= 0.10


def test_sweep_on_linear_plant_matches_direct():
    plant, ctrl = linear_secondary()
    cfg = SweepConfig(omega_lo=0.1, omega_hi=10.0, points_per_decade=4)
    fr = sweep_g0b(plant, ctrl, cfg)
    assert fr.provenance == "swept" and len(fr) == 9
    direct = g0b_response(plant.A, plant.B, ctrl.K, ctrl.H, fr.omega).values
    assert np.abs(np.abs(fr.values) / np.abs(direct) - 1).max() < 1e-2
    assert np.degrees(np.abs(np.angle(fr.values / direct))).max() < 1.0


def test_sweep_rejects_unstable_secondary_loop():
    plant = NonlinearPlant(A1, B1, make_nonlinearity("zero"))
    law = make_secondary_law("linear", plant, {"M": [[0.0, 5.0]]})
    ctrl = SclcController(ex1_gain(), I1, law)
    with pytest.raises(AnalysisError):
        sweep_g0b(plant, ctrl, SweepConfig(omega_lo=1.0, omega_hi=2.0, points_per_decade=2))


@pytest.mark.parametrize(
    "parts, expected",
    [((math.inf, math.inf, 0.45, 0.20), (0.45, 0.20)), ((2.26, 1.13, 0.19, 0.08), (0.19, 0.08)),
     ((math.inf, math.inf, math.inf, math.inf), (math.inf, math.inf))],
)
def test_combine_takes_minimum(parts, expected):
    rep = combine(*parts, k_l=1.0)
    assert (rep.gamma, rep.tau) == expected


def test_report_serialization_is_strict_json():
    rep = combine(math.inf, math.inf, 0.369, 0.165, 5.76, methods={"gamma2": "swept"}, extras={"a": np.float64(1.5)})
    text = rep.to_json()
    data = json.loads(text, parse_constant=lambda c: pytest.fail(f"non-standard constant {c}"))
    assert data["gamma1"] == "inf" and data["gamma"] == 0.369
    assert text == rep.to_json()
    assert rep.summary_row(1) == ["1", "inf", "inf", "0.369", "0.165", "0.369", "0.165", "5.76", "swept"]
    assert MarginReport.SUMMARY_HEADER == ["example", "gamma1", "tau1", "gamma2", "tau2", "gamma", "tau", "kl", "method"]
