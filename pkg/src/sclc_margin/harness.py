"""Example configurations, the three-step margin pipeline and validation runs.

A run follows the design procedure: (a) synthesize the primary LQR gain and
the registered secondary law, (b) compute the primary-system margins,
(c) compute the whole-system margins by the small-gain search and/or the
closed-loop frequency sweep, then take the element-wise minimum.
"""
from __future__ import annotations

import copy
import csv
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping, Sequence

import jsonschema
import numpy as np

from .exceptions import ConfigError, SclcError
from .lti import FrequencyResponse, StateSpaceModel, log_grid, solve_care
from .margin import (
    KlEstimate,
    MarginReport,
    SweepConfig,
    combine,
    delay_feasibility,
    estimate_kl,
    g0b_response,
    gain_feasibility,
    margins_from_sweep,
    primary_loop_response,
    primary_margin_mimo,
    primary_margin_siso,
    probe_family,
    sweep_g0b,
    theoretical_delay_margin,
    theoretical_gain_margin,
)
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
    simulate_jlc,
)

__all__ = [
    "ExampleConfig",
    "ExampleRun",
    "ValidationVerdict",
    "JlcComparison",
    "shipped_config",
    "build",
    "run_example",
    "validate_margin",
    "compare_jlc",
    "settling_time",
]

BODE_GRID = log_grid(1e-3, 1e3, 40)

_MATRIX = {"type": "array", "minItems": 1, "items": {"type": "array", "minItems": 1, "items": {"type": "number"}}}
_VECTOR = {"type": "array", "minItems": 1, "items": {"type": "number"}}
_NAMED = {
    "type": "object",
    "required": ["name"],
    "properties": {"name": {"type": "string"}, "params": {"type": "object"}},
    "additionalProperties": False,
}
_POS = {"type": "number", "exclusiveMinimum": 0}

SCHEMA = {
    "type": "object",
    "required": ["example", "plant", "controller", "x0", "T", "dt"],
    "additionalProperties": False,
    "properties": {
        "example": {"type": "integer"},
        "name": {"type": "string"},
        "plant": {
            "type": "object",
            "required": ["A", "B", "nonlinearity"],
            "additionalProperties": False,
            "properties": {
                "A": _MATRIX,
                "B": _MATRIX,
                "nonlinearity": _NAMED,
                "k0": {"anyOf": [{"type": "null"}, _MATRIX]},
            },
        },
        "controller": {
            "type": "object",
            "required": ["Q", "R", "secondary_law"],
            "additionalProperties": False,
            "properties": {
                "Q": _MATRIX,
                "R": _MATRIX,
                "H": {
                    "anyOf": [
                        {"type": "null"},
                        {
                            "type": "object",
                            "required": ["D"],
                            "additionalProperties": False,
                            "properties": {k: {"type": "array"} for k in ("A", "B", "C", "D")},
                        },
                    ]
                },
                "secondary_law": _NAMED,
            },
        },
        "x0": _VECTOR,
        "T": _POS,
        "T_delay": {"anyOf": [{"type": "null"}, _POS]},
        "T_jlc": {"anyOf": [{"type": "null"}, _POS]},
        "dt": _POS,
        "primary_method": {"enum": ["siso", "mimo"]},
        "kl": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "safety": _POS,
                "amplitudes": _VECTOR,
                "value": {"anyOf": [{"type": "null"}, {"type": "number", "minimum": 0}]},
                "scale": _POS,
            },
        },
        "sweep": {
            "type": "object",
            "additionalProperties": False,
            "properties": {f.name: {"type": ["number", "null"]} for f in fields(SweepConfig)},
        },
        "eps3": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "eps4": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "jlc_x0": {"type": "array", "items": _VECTOR},
    },
}


def _default_kl() -> dict:
    return {"safety": 1.2, "amplitudes": [0.1, 1.0, 10.0], "value": None, "scale": 1.0}


@dataclass
class ExampleConfig:
    """Everything needed to reproduce one example, in JSON-compatible types.

    ``T`` is the simulation horizon, ``T_delay`` the horizon of delay
    validation runs and ``T_jlc`` that of the SCLC/JLC comparison. ``kl``
    holds the estimation settings; a non-null ``value`` bypasses estimation
    and ``scale`` multiplies the result.
    """

    example: int
    plant: dict
    controller: dict
    x0: list
    T: float = 20.0
    dt: float = 1e-3
    name: str = ""
    T_delay: float | None = None
    T_jlc: float | None = None
    primary_method: str = "siso"
    kl: dict = field(default_factory=_default_kl)
    sweep: dict = field(default_factory=dict)
    eps3: float = 0.05
    eps4: float = 0.05
    jlc_x0: list = field(default_factory=list)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        try:
            jsonschema.validate(self.to_dict(), SCHEMA)
        except jsonschema.ValidationError as exc:
            path = "/".join(str(p) for p in exc.absolute_path) or "<root>"
            raise ConfigError(f"invalid config at {path}: {exc.message}") from None
        n = len(self.plant["A"])
        if any(len(r) != n for r in self.plant["A"]):
            raise ConfigError("plant.A must be square")
        if len(self.plant["B"]) != n or len(self.x0) != n:
            raise ConfigError("plant.B and x0 must have as many rows as A")
        if any(len(r) != n for r in self.jlc_x0):
            raise ConfigError("every jlc_x0 entry must have n components")
        kl = {**_default_kl(), **self.kl}
        self.kl = kl

    @property
    def horizon_delay(self) -> float:
        return self.T_delay if self.T_delay is not None else self.T

    @property
    def horizon_jlc(self) -> float:
        return self.T_jlc if self.T_jlc is not None else self.T

    def sweep_config(self) -> SweepConfig:
        return SweepConfig(**{k: v for k, v in self.sweep.items()})

    def to_dict(self) -> dict:
        return copy.deepcopy(asdict(self))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: Mapping) -> "ExampleConfig":
        if not isinstance(data, Mapping):
            raise ConfigError("config must be a JSON object")
        try:
            jsonschema.validate(dict(data), SCHEMA)
        except jsonschema.ValidationError as exc:
            path = "/".join(str(p) for p in exc.absolute_path) or "<root>"
            raise ConfigError(f"invalid config at {path}: {exc.message}") from None
        return cls(**copy.deepcopy(dict(data)))

    @classmethod
    def from_json(cls, text: str) -> "ExampleConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        return cls.from_dict(data)

    @classmethod
    def load(cls, path) -> "ExampleConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        return cls.from_json(text)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    def with_overrides(self, overrides: Mapping | None) -> "ExampleConfig":
        """Deep-merge ``overrides``; dotted keys such as ``"kl.scale"`` address nested fields."""
        data = self.to_dict()
        for key, value in (overrides or {}).items():
            parts = key.split(".")
            node = data
            for p in parts[:-1]:
                node = node.setdefault(p, {})
            if isinstance(value, Mapping) and isinstance(node.get(parts[-1]), dict):
                node[parts[-1]] = _merge(node[parts[-1]], value)
            else:
                node[parts[-1]] = copy.deepcopy(value)
        return ExampleConfig.from_dict(data)


def _merge(base: dict, upd: Mapping) -> dict:
    out = copy.deepcopy(base)
    for k, v in upd.items():
        out[k] = _merge(out[k], v) if isinstance(v, Mapping) and isinstance(out.get(k), dict) else copy.deepcopy(v)
    return out


def shipped_config(example: int) -> ExampleConfig:
    """One of the three built-in examples."""
    if example == 1:
        return ExampleConfig(
            example=1,
            name="SISO weakly nonlinear system",
            plant={
                "A": [[0.0, 1.0], [-2.0, -3.0]],
                "B": [[0.0], [1.0]],
                "nonlinearity": {"name": "rational_square", "params": {"a": 0.01, "source": 1, "n": 2}},
                "k0": None,
            },
            controller={
                "Q": [[1.0, 0.0], [0.0, 1.0]],
                "R": [[1.0]],
                "H": None,
                "secondary_law": {"name": "backstepping", "params": {"c1": 20.0, "c2": 20.0}},
            },
            x0=[10.0, 10.0],
            T=20.0,
            T_delay=20.0,
            T_jlc=20.0,
            primary_method="siso",
            jlc_x0=[[10.0, 10.0]],
        )
    if example == 2:
        return ExampleConfig(
            example=2,
            name="SISO strongly nonlinear system",
            plant={
                "A": [[1.0, 1.0], [0.0, 1.0]],
                "B": [[0.0], [1.0]],
                "nonlinearity": {"name": "rational_square", "params": {"a": 0.0, "source": 1, "n": 2}},
                "k0": [[6.0, 5.0]],
            },
            controller={
                "Q": [[10.0, 0.0], [0.0, 10.0]],
                "R": [[1.0]],
                "H": None,
                "secondary_law": {"name": "backstepping", "params": {"c1": 20.0, "c2": 20.0}},
            },
            x0=[4.0, 4.0],
            T=20.0,
            T_delay=20.0,
            T_jlc=40.0,
            primary_method="siso",
            jlc_x0=[[3.0, 3.0], [4.0, 4.0]],
        )
    if example == 3:
        return ExampleConfig(
            example=3,
            name="MIMO nonlinear system",
            plant={
                "A": [[-1.0, 0.0, 1.0], [0.0, -1.0, 1.0], [0.0, -2.0, -3.0]],
                "B": [[0.0, -1.0], [0.0, 1.0], [1.0, 1.0]],
                "nonlinearity": {"name": "rational_square", "params": {"a": 0.01, "source": 2, "n": 3}},
                "k0": None,
            },
            controller={
                "Q": [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
                "R": [[1.0, 0.0], [0.0, 1.0]],
                "H": None,
                "secondary_law": {"name": "lyapunov3", "params": {"c": 5.0}},
            },
            x0=[10.0, 10.0, 10.0],
            T=20.0,
            T_delay=30.0,
            T_jlc=20.0,
            primary_method="mimo",
            jlc_x0=[[10.0, 10.0, 10.0]],
        )
    raise ConfigError(f"no shipped example {example!r}; choose 1, 2 or 3")


# ---------------------------------------------------------------------------
# step (a): synthesis


@dataclass
class Built:
    config: ExampleConfig
    raw_plant: NonlinearPlant
    plant: NonlinearPlant
    ctrl: SclcController
    jlc: JlcController
    care_residual: float


def _h_model(spec, m) -> StateSpaceModel:
    if spec is None:
        return StateSpaceModel.identity(m)
    D = np.atleast_2d(np.asarray(spec["D"], float))
    nh = len(spec.get("A", []) or [])
    if nh == 0:
        return StateSpaceModel.static(D)
    return StateSpaceModel(spec["A"], spec["B"], spec["C"], D)


def build(config: ExampleConfig) -> Built:
    """Synthesize plant, SCLC controller and the JLC baseline from a config."""
    from .lti import care_residual

    p = config.plant
    nl = p["nonlinearity"]
    f = make_nonlinearity(nl["name"], nl.get("params"))
    raw = NonlinearPlant(np.asarray(p["A"], float), np.asarray(p["B"], float), f, config.name or f"example{config.example}",
                         f_spec=(nl["name"], json.dumps(nl.get("params", {}), sort_keys=True)))
    plant = prestabilize(raw, p["k0"]) if p.get("k0") is not None else raw
    c = config.controller
    Q, R = np.asarray(c["Q"], float), np.asarray(c["R"], float)
    if Q.shape != (plant.n, plant.n) or R.shape != (plant.m, plant.m):
        raise ConfigError("Q must be n x n and R must be m x m")
    P, K = solve_care(plant.A, plant.B, Q, R)
    resid = care_residual(plant.A, plant.B, Q, R, P)
    law_spec = c["secondary_law"]
    law = make_secondary_law(law_spec["name"], plant, law_spec.get("params"))
    ctrl = SclcController(K, _h_model(c.get("H"), plant.m), law, law_spec["name"])
    # JLC acts on the physical plant, without prestabilization
    jlc = jlc_controller(raw, Q, R)
    return Built(config, raw, plant, ctrl, jlc, resid)


# ---------------------------------------------------------------------------
# validation and JLC comparison


@dataclass(frozen=True)
class ValidationVerdict:
    """Finite-horizon proxy for ``x in L2``.

    ``bounded`` requires no blow-up, ``||x(T)|| <= 1e-2 ||x0||`` and at most
    1 % of the state energy in the last 20 % of the horizon.
    """

    bounded: bool
    final_ratio: float
    tail_fraction: float
    blowup_time: float | None
    perturbation: str

    def to_dict(self) -> dict:
        return asdict(self)


def _verdict(res: SimResult, x0, pert: Perturbation, final_tol: float = 1e-2, tail_tol: float = 1e-2) -> ValidationVerdict:
    x0n = float(np.linalg.norm(x0))
    if res.blowup_time is not None:
        return ValidationVerdict(False, math.inf, math.nan, res.blowup_time, pert.describe())
    X = res.x.samples
    e = np.sum(X * X, axis=1)
    total = float(np.trapezoid(e, dx=res.x.dt))
    start = int(math.floor(0.8 * (len(e) - 1)))
    tail = float(np.trapezoid(e[start:], dx=res.x.dt))
    fn = float(np.linalg.norm(X[-1]))
    if x0n == 0:
        ratio = 0.0 if fn == 0 else math.inf
        frac = 0.0 if total == 0 else tail / total
    else:
        ratio = fn / x0n
        frac = tail / total if total > 0 else 0.0
    return ValidationVerdict(bool(ratio <= final_tol and frac <= tail_tol), ratio, frac, None, pert.describe())


def validate_margin(config: ExampleConfig | int, pert: Perturbation, T: float | None = None,
                    built: Built | None = None) -> ValidationVerdict:
    """Simulate the full nonlinear loop under ``pert`` and judge boundedness.

    The horizon defaults to ``config.T_delay`` for delays and ``config.T``
    otherwise.
    """
    cfg = shipped_config(config) if isinstance(config, int) else config
    b = built or build(cfg)
    if T is None:
        T = cfg.horizon_delay if pert.kind == "delay" else cfg.T
    res = simulate_closed_loop(b.plant, b.ctrl, pert, cfg.x0, T, cfg.dt)
    return _verdict(res, cfg.x0, pert)


def settling_time(res: SimResult, x0, fraction: float = 0.05) -> float:
    """Time after which ``||x|| <= fraction * ||x0||`` holds to the end; ``inf`` if never."""
    if res.blowup_time is not None:
        return math.inf
    norms = res.x.norms()
    bound = fraction * float(np.linalg.norm(x0))
    if norms[0] <= bound and np.all(norms <= bound):
        return 0.0
    above = np.nonzero(norms > bound)[0]
    last = int(above[-1])
    if last == len(norms) - 1:
        return math.inf
    return (last + 1) * res.x.dt


@dataclass(frozen=True)
class JlcComparison:
    x0: tuple
    sclc_converged: bool
    jlc_converged: bool
    sclc_settling: float
    jlc_settling: float
    sclc_blowup: float | None
    jlc_blowup: float | None

    def to_dict(self) -> dict:
        return asdict(self)


def compare_jlc(config: ExampleConfig | int, x0_list: Sequence[Sequence[float]] | None = None,
                T: float | None = None, built: Built | None = None) -> list[JlcComparison]:
    """Run SCLC and JLC from each initial state; horizon defaults to ``config.T_jlc``."""
    cfg = shipped_config(config) if isinstance(config, int) else config
    b = built or build(cfg)
    T = cfg.horizon_jlc if T is None else T
    x0s = cfg.jlc_x0 if x0_list is None else x0_list
    rows = []
    none = Perturbation.none()
    for x0 in x0s:
        x0 = np.asarray(x0, float)
        if x0.shape != (b.plant.n,):
            raise ConfigError(f"initial state needs {b.plant.n} components")
        rs = simulate_closed_loop(b.plant, b.ctrl, none, x0, T, cfg.dt)
        rj = simulate_jlc(b.raw_plant, b.jlc, none, x0, T, cfg.dt)
        rows.append(JlcComparison(tuple(float(v) for v in x0), rs.converged, rj.converged,
                                  settling_time(rs, x0), settling_time(rj, x0), rs.blowup_time, rj.blowup_time))
    return rows


# ---------------------------------------------------------------------------
# the pipeline


@dataclass
class ExampleRun:
    report: MarginReport
    config: ExampleConfig
    built: Built
    sim: SimResult
    kl: KlEstimate | None
    g0b: FrequencyResponse
    bode: dict
    files: dict = field(default_factory=dict)


def _stage(name):
    def wrap(fn):
        def inner(*a, **kw):
            try:
                return fn(*a, **kw)
            except SclcError as exc:
                if exc.stage is None:
                    exc.stage = name
                raise
        return inner
    return wrap


def run_example(example: ExampleConfig | int, overrides: Mapping | None = None, out_dir=None,
                method: str = "both") -> ExampleRun:
    """Run the full procedure on one example.

    ``method`` selects the whole-system path: ``"theory"``, ``"sweep"`` or
    ``"both"``. The reported ``gamma2``/``tau2`` are the swept values when a
    sweep ran, else the theoretical ones. With ``out_dir`` the run writes
    ``timeseries.csv``, ``bode_<loop>.csv``, ``g0b.csv``, ``report.json`` and
    ``summary.csv``.
    """
    if method not in ("theory", "sweep", "both"):
        raise ConfigError(f"unknown method {method!r}")
    cfg = shipped_config(example) if isinstance(example, int) else example
    cfg = cfg.with_overrides(overrides)
    if cfg.sweep:
        cfg.sweep_config()  # unknown keys fail early

    b = _stage("synthesis")(build)(cfg)
    plant, ctrl = b.plant, b.ctrl
    A, B, K, H = plant.A, plant.B, ctrl.K, ctrl.H
    sim = _stage("simulation")(simulate_closed_loop)(plant, ctrl, Perturbation.none(), cfg.x0, cfg.T, cfg.dt)

    @_stage("primary-margin")
    def primary():
        bode = {}
        if cfg.primary_method == "siso":
            if plant.m != 1:
                raise ConfigError("siso primary margin needs a single-input plant")
            loop = primary_loop_response(A, B, K, H, BODE_GRID)
            bode["primary"] = loop
            bode["jlc"] = primary_loop_response(b.raw_plant.jacobian(), B, b.jlc.K, StateSpaceModel.identity(1), BODE_GRID)
            g1, t1 = primary_margin_siso(loop)
        else:
            for i in range(plant.m):
                bode[f"primary_{i + 1}"] = primary_loop_response(A, B, K, H, BODE_GRID, loop=i)
                bode[f"jlc_{i + 1}"] = primary_loop_response(b.raw_plant.jacobian(), B, b.jlc.K,
                                                             StateSpaceModel.identity(plant.m), BODE_GRID, loop=i)
            g1, t1 = primary_margin_mimo(A, B, K, H)
        return g1, t1, bode

    gamma1, tau1, bode = primary()

    @_stage("kl")
    def kl_step():
        if cfg.kl.get("value") is not None:
            return None, float(cfg.kl["value"]) * cfg.kl["scale"]
        probes = probe_family(plant, ctrl, cfg.x0, cfg.T, cfg.dt, amplitudes=cfg.kl["amplitudes"])
        est = estimate_kl(plant, ctrl, probes, cfg.T, cfg.dt, safety=cfg.kl["safety"])
        return est, est.k_l * cfg.kl["scale"]

    est, k_l = kl_step()
    extras: dict[str, Any] = {
        "example": cfg.example,
        "primary_method": cfg.primary_method,
        "care_residual": b.care_residual,
        "K": K.tolist(),
        "jlc_K": b.jlc.K.tolist(),
        "simulation": {"verdict": sim.verdict, "final_norm": float(np.linalg.norm(sim.x.final)),
                       "decomposition_error": sim.decomposition_error()},
    }
    if est is not None:
        extras["kl"] = {"max_ratio": est.max_ratio, "beta": est.beta, "n_probes": est.n_probes,
                        "max_probe": est.max_probe, "safety": est.safety, "invalid": est.invalid,
                        "scale": cfg.kl["scale"]}
    else:
        extras["kl"] = {"value": cfg.kl["value"], "scale": cfg.kl["scale"]}

    @_stage("whole-margin")
    def whole():
        out = {}
        if method in ("theory", "both"):
            gt = theoretical_gain_margin(k_l, A, B, K, H)
            tt = theoretical_delay_margin(k_l, A, B, K, H)
            out["theory"] = (gt, tt)
            if 0 < gt < math.inf:
                feas = gain_feasibility(k_l, A, B, K, H)
                extras["gamma2_theory_bracket"] = [feas(0.5 * gt), not feas(1.5 * gt)]
            if 0 < tt < math.inf:
                feas = delay_feasibility(k_l, A, B, K, H)
                extras["tau2_theory_bracket"] = [feas(0.5 * tt), not feas(1.5 * tt)]
        scfg = cfg.sweep_config()
        if method in ("sweep", "both"):
            fr = sweep_g0b(plant, ctrl, scfg, x0=cfg.x0)
            extras["sweep"] = {"n_valid": len(fr), "invalid": fr.meta["invalid"], "amplitude": fr.meta["amplitude"],
                               "grid": [scfg.omega_lo, scfg.omega_hi, scfg.points_per_decade]}
        else:
            fr = g0b_response(A, B, K, H, scfg.grid())
        gs, ts, gn, sgn = margins_from_sweep(fr, k_l, cfg.eps3, cfg.eps4)
        if method in ("sweep", "both"):
            out["sweep"] = (gs, ts)
        return out, fr, gn, sgn

    parts, g0b, gn, sgn = whole()
    if "sweep" in parts:
        gamma2, tau2 = parts["sweep"]
        tag = "swept"
    else:
        gamma2, tau2 = parts["theory"]
        tag = "theoretical"
    g1_tag = "classic" if cfg.primary_method == "siso" else "small-gain"
    report = combine(
        gamma1, tau1, gamma2, tau2, k_l,
        g0b_norm=gn, sg0b_norm=sgn, eps3=cfg.eps3, eps4=cfg.eps4,
        methods={"gamma1": g1_tag, "tau1": g1_tag, "gamma2": tag, "tau2": tag,
                 "g0b": g0b.provenance},
        gamma2_theory=parts.get("theory", (None, None))[0], tau2_theory=parts.get("theory", (None, None))[1],
        gamma2_sweep=parts.get("sweep", (None, None))[0], tau2_sweep=parts.get("sweep", (None, None))[1],
        extras=extras,
    )
    run = ExampleRun(report, cfg, b, sim, est, g0b, bode)
    if out_dir is not None:
        write_outputs(run, out_dir)
    return run


def write_outputs(run: ExampleRun, out_dir) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {}
    p = out / "timeseries.csv"
    run.sim.timeseries().to_csv(p)
    files["timeseries"] = p
    for loop, fr in run.bode.items():
        p = out / f"bode_{loop}.csv"
        fr.to_csv(p)
        files[f"bode_{loop}"] = p
    p = out / "g0b.csv"
    run.g0b.to_csv(p)
    files["g0b"] = p
    p = out / "report.json"
    p.write_text(run.report.to_json() + "\n")
    files["report"] = p
    p = out / "summary.csv"
    with open(p, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MarginReport.SUMMARY_HEADER)
        w.writerow(run.report.summary_row(run.config.example))
    files["summary"] = p
    run.files = files
    return files
