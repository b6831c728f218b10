"""Example 1: second-order plant with a saturating square term.

Walks the whole procedure once: LQR design, primary margins from the Bode
plot, the k_l estimate, both whole-system margin paths and a check that
the loop survives the reported gain and delay.

    python3 demos/example1_siso.py
"""
import numpy as np

from sclc_margin import Perturbation, run_example, validate_margin

run = run_example(1)
rep = run.report

print("LQR gain K:", np.round(run.built.ctrl.K, 4))
print(f"primary loop: gamma1 = {rep.gamma1}, tau1 = {rep.tau1} (no gain crossover)")
print(f"k_l = {rep.k_l:.3f}, worst probe {rep.extras['kl']['max_probe']}")
print(f"theory:  gamma2 = {rep.gamma2_theory:.3f}, tau2 = {rep.tau2_theory:.3f} s")
print(f"sweep:   gamma2 = {rep.gamma2_sweep:.3f}, tau2 = {rep.tau2_sweep:.3f} s")
print(f"whole system: gamma = {rep.gamma:.3f}, tau = {rep.tau:.3f} s")

# the margins are sufficient conditions; slightly past them the loop still settles
for pert in (Perturbation.gain(0.45), Perturbation.delay(0.20)):
    v = validate_margin(1, pert, built=run.built)
    print(f"{pert.describe():>12}: bounded={v.bounded}, |x(T)|/|x0| = {v.final_ratio:.1e}")
