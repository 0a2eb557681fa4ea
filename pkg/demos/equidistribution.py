"""How fast do orbits of a circle rotation and a skew shift fill the torus?

Prints the discrepancy D_N of the golden rotation, the skew shift on T^2
and an i.i.d. uniform sample, then the fitted exponents in D_N ~ N^a.
"""
import math

import numpy as np

from qpmsa.equidistribution import DynamicsSpec, certify_diophantine, discrepancy, fit_discrepancy_exponent, golden, orbit

omega = golden()
cert = certify_diophantine(omega, kappa=1.0, K_max=100_000)
print(f"golden mean: min_k k*||k omega|| up to 1e5 = {cert.tau:.4f} (worst k = {cert.worst_k})")

rot = DynamicsSpec("shift", (omega,))
skew = DynamicsSpec("skew_shift", (omega,), b=2)
rng = np.random.default_rng(0)

print(f"\n{'N':>7} {'rotation':>10} {'3 log N / N':>12} {'skew (grid)':>12} {'iid':>9}")
Ns = [2 ** k for k in range(8, 15)]
for N in Ns:
    d_rot = discrepancy(orbit(rot, [0.0], np.arange(N)), "exact_1d").D_N
    d_skew = discrepancy(orbit(skew, [0.0, 0.0], np.arange(N)), "grid:128")
    d_iid = discrepancy(rng.random(N), "exact_1d").D_N
    print(f"{N:7d} {d_rot:10.2e} {3 * math.log(N) / N:12.2e} {d_skew.D_N:12.2e} {d_iid:9.2e}")

fit_rot = fit_discrepancy_exponent(rot, [0.0], Ns)
fit_skew = fit_discrepancy_exponent(skew, [0.0, 0.0], Ns[:5], method="grid:128")
print(f"\nexponent, rotation:   {fit_rot.exponent:+.3f}  (log N / N behaves like N^-1)")
print(f"exponent, skew shift: {fit_skew.exponent:+.3f}  (grid resolution 1/128 limits the tail)")
