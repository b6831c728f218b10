"""Example 2: unstable plant, prestabilized, compared against JLC.

The Jacobian-linearization controller is LQR on the raw linearization and
ignores the square term. From [3, 3] both controllers settle; from [4, 4] the
ignored nonlinearity wins and only the compensated loop converges.

    python3 demos/example2_jlc.py
"""
import numpy as np

from sclc_margin import build, compare_jlc, shipped_config

b = build(shipped_config(2))
print("prestabilized A:\n", b.plant.A)
print("SCLC gain K:", np.round(b.ctrl.K, 3), "  JLC gain:", np.round(b.jlc.K, 3))

for row in compare_jlc(2, built=b):
    jlc = f"settles in {row.jlc_settling:.2f} s" if row.jlc_converged else f"diverges at {row.jlc_blowup:.2f} s"
    print(f"x0 = {list(row.x0)}: SCLC settles in {row.sclc_settling:.2f} s, JLC {jlc}")
