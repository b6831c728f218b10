"""Example 3: three states, two inputs, Lyapunov-based secondary law.

Primary margins use the small-gain bound on the loop transfer, which for this
loop lands on the values obtained by multivariable loop-at-a-time analysis.

    python3 demos/example3_mimo.py
"""
from sclc_margin import Perturbation, run_example, validate_margin

run = run_example(3)
rep = run.report
print(f"primary:  gamma1 = {rep.gamma1:.3f}, tau1 = {rep.tau1:.3f} s")
print(f"|G0B| = {rep.g0b_norm:.4f}, |sG0B| = {rep.sg0b_norm:.4f}, k_l = {rep.k_l:.3f}")
print(f"theory:   gamma2 = {rep.gamma2_theory:.3f}, tau2 = {rep.tau2_theory:.4f} s")
print(f"sweep:    gamma2 = {rep.gamma2_sweep:.3f}, tau2 = {rep.tau2_sweep:.4f} s")

for pert in (Perturbation.gain([0.19, 0.19]), Perturbation.delay([0.08, 0.08])):
    v = validate_margin(3, pert, built=run.built)
    print(f"{pert.describe():>16}: bounded={v.bounded}")
