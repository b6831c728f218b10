"""Command-line entry point.

Exit codes: 0 on success, 2 on analysis errors, 3 on configuration errors.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from .exceptions import ConfigError, ModelError, SclcError
from .harness import ExampleConfig, build, compare_jlc, run_example, shipped_config, validate_margin
from .margin import (
    estimate_kl,
    g0b_response,
    margins_from_sweep,
    probe_family,
    sweep_g0b,
    theoretical_delay_margin,
    theoretical_gain_margin,
)
from .sclc import Perturbation, simulate_closed_loop

EXIT_OK, EXIT_ANALYSIS, EXIT_CONFIG = 0, 2, 3


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"cannot parse numbers from {text!r}") from None


def _load(path) -> ExampleConfig:
    return ExampleConfig.load(path)


def _num(v):
    return "inf" if isinstance(v, float) and math.isinf(v) else v


def _cmd_example(args) -> int:
    cfg = _load(args.config) if args.config else shipped_config(args.id)
    if cfg.example != args.id:
        raise ConfigError(f"config is for example {cfg.example}, not {args.id}")
    run = run_example(cfg, out_dir=args.out, method=args.method)
    print(",".join(run.report.SUMMARY_HEADER))
    print(",".join(run.report.summary_row(cfg.example)))
    if args.out:
        print(f"outputs written to {args.out}", file=sys.stderr)
    return EXIT_OK


def _cmd_margin(args) -> int:
    cfg = _load(args.config)
    b = build(cfg)
    plant, ctrl = b.plant, b.ctrl
    if cfg.kl.get("value") is not None:
        k_l = float(cfg.kl["value"]) * cfg.kl["scale"]
    else:
        probes = probe_family(plant, ctrl, cfg.x0, cfg.T, cfg.dt, amplitudes=cfg.kl["amplitudes"])
        k_l = estimate_kl(plant, ctrl, probes, cfg.T, cfg.dt, safety=cfg.kl["safety"]).k_l * cfg.kl["scale"]
    A, B, K, H = plant.A, plant.B, ctrl.K, ctrl.H
    if args.method == "theory":
        g, t = theoretical_gain_margin(k_l, A, B, K, H), theoretical_delay_margin(k_l, A, B, K, H)
        fr = g0b_response(A, B, K, H, cfg.sweep_config().grid())
    else:
        fr = sweep_g0b(plant, ctrl, cfg.sweep_config(), x0=cfg.x0)
    gs, ts, gn, sgn = margins_from_sweep(fr, k_l, cfg.eps3, cfg.eps4)
    if args.method == "sweep":
        g, t = gs, ts
    out = {"method": args.method, "k_l": k_l, "gamma2": _num(g), "tau2": _num(t),
           "g0b_norm": gn, "sg0b_norm": sgn}
    print(json.dumps(out, indent=2, sort_keys=True))
    return EXIT_OK


def _perturbation(args) -> Perturbation:
    if args.gain is not None:
        return Perturbation.gain(_floats(args.gain))
    if args.delay is not None:
        return Perturbation.delay(_floats(args.delay))
    return Perturbation.none()


def _cmd_validate(args) -> int:
    cfg = _load(args.config)
    verdict = validate_margin(cfg, _perturbation(args), T=args.T)
    print(json.dumps({k: _num(v) for k, v in verdict.to_dict().items()}, indent=2, sort_keys=True))
    return EXIT_OK


def _cmd_compare(args) -> int:
    cfg = _load(args.config)
    x0s = None
    if args.x0:
        x0s = [_floats(chunk) for chunk in args.x0.split(";") if chunk.strip()]
    rows = compare_jlc(cfg, x0s, T=args.T)
    print("x0,sclc,jlc,sclc_settling,jlc_settling")
    for r in rows:
        x0 = " ".join(f"{v:g}" for v in r.x0)
        verdict = lambda ok: "converged" if ok else "diverged"  # noqa: E731
        print(f"{x0},{verdict(r.sclc_converged)},{verdict(r.jlc_converged)},{r.sclc_settling:g},{r.jlc_settling:g}")
    return EXIT_OK


def _cmd_simulate(args) -> int:
    cfg = _load(args.config)
    b = build(cfg)
    pert = _perturbation(args)
    T = args.T if args.T is not None else cfg.T
    res = simulate_closed_loop(b.plant, b.ctrl, pert, cfg.x0, T, cfg.dt)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    res.timeseries().to_csv(out / "timeseries.csv")
    final = float(np.linalg.norm(res.x.final))
    print(f"{res.verdict},final_norm={final:.6g}" + (f",blowup={res.blowup_time:g}" if res.blowup_time else ""))
    return EXIT_OK


def _cmd_show_config(args) -> int:
    text = shipped_config(args.id).to_json()
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        print(text)
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    # usage mistakes are configuration errors, not analysis errors
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _parser() -> argparse.ArgumentParser:
    p = _Parser(prog="sclc-margin", description="Stability margins of SCL-based nonlinear control loops.")
    sub = p.add_subparsers(dest="command", required=True)

    e = sub.add_parser("example", help="run the full procedure on a shipped example")
    e.add_argument("id", type=int, choices=(1, 2, 3))
    e.add_argument("--config", help="JSON config replacing the shipped one")
    e.add_argument("--out", help="directory for CSV and JSON outputs")
    e.add_argument("--method", choices=("theory", "sweep", "both"), default="both")
    e.set_defaults(func=_cmd_example)

    m = sub.add_parser("margin", help="whole-system margins by one method")
    m.add_argument("method", choices=("theory", "sweep"))
    m.add_argument("--config", required=True)
    m.set_defaults(func=_cmd_margin)

    def perturbation_args(q, required):
        g = q.add_mutually_exclusive_group(required=required)
        g.add_argument("--gain", help="comma-separated per-channel gains")
        g.add_argument("--delay", help="comma-separated per-channel delays [s]")
        q.add_argument("--T", type=float, help="horizon override [s]")

    v = sub.add_parser("validate", help="simulate under a perturbation and judge boundedness")
    v.add_argument("--config", required=True)
    perturbation_args(v, True)
    v.set_defaults(func=_cmd_validate)

    c = sub.add_parser("compare-jlc", help="SCLC versus Jacobian-linearization control")
    c.add_argument("--config", required=True)
    c.add_argument("--x0", help='initial states, e.g. "3,3;4,4"')
    c.add_argument("--T", type=float, help="horizon override [s]")
    c.set_defaults(func=_cmd_compare)

    s = sub.add_parser("simulate", help="closed-loop simulation to timeseries.csv")
    s.add_argument("--config", required=True)
    s.add_argument("--out", default=".")
    perturbation_args(s, False)
    s.set_defaults(func=_cmd_simulate)

    sc = sub.add_parser("show-config", help="print a shipped example config as JSON")
    sc.add_argument("id", type=int, choices=(1, 2, 3))
    sc.add_argument("--out", help="write to this file instead of stdout")
    sc.set_defaults(func=_cmd_show_config)
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ModelError) as exc:
        stage = f" [{exc.stage}]" if exc.stage else ""
        print(f"config error{stage}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SclcError as exc:
        stage = f" [{exc.stage}]" if exc.stage else ""
        print(f"analysis error{stage}: {exc}", file=sys.stderr)
        return EXIT_ANALYSIS


if __name__ == "__main__":
    sys.exit(main())
