"""Stability margins of nonlinear control loops built by state compensation linearization.

The plant ``dx = A x + f(x) + B mu`` is split into a linear primary part and a
nonlinear secondary part. The primary part is stabilized by LQR feedback and
the secondary part by a registered nonlinear law. L2 gain and time-delay
margins of the closed loop then follow from a small-gain argument on linear
operators, computed either from the model or from a simulated frequency sweep.
"""
from .exceptions import (
    AnalysisError,
    ConditioningError,
    ConfigError,
    ModelError,
    PoleOnGrid,
    SclcError,
    SynthesisError,
)
from .harness import (
    ExampleConfig,
    ExampleRun,
    JlcComparison,
    ValidationVerdict,
    build,
    compare_jlc,
    run_example,
    shipped_config,
    validate_margin,
)
from .lti import (
    FrequencyResponse,
    StateSpaceModel,
    classic_siso_margins,
    freq_eval,
    hinf_norm,
    is_hurwitz,
    jacobian_at_origin,
    solve_care,
)
from .margin import (
    KlEstimate,
    MarginReport,
    SweepConfig,
    combine,
    estimate_kl,
    g0b_response,
    g_delta_response,
    margins_from_sweep,
    primary_margin_mimo,
    primary_margin_siso,
    probe_family,
    sweep_g0b,
    theoretical_delay_margin,
    theoretical_gain_margin,
)
from .numerics import DelayLine, TimeSeries, integrate, sine_dwell_gain
from .sclc import (
    JlcController,
    NonlinearPlant,
    Perturbation,
    SclcController,
    SimResult,
    jlc_controller,
    make_nonlinearity,
    make_secondary_law,
    prestabilize,
    simulate_closed_loop,
    simulate_decomposed,
    simulate_jlc,
)

__version__ = "0.1.0"
