"""Eigenvector decay across the metal-insulator transition at lam = 1.

Median decay rate of the eigenvectors in the middle of the spectrum on
[-N, N].  Above lam = 1 the rate tracks log lam; below it the vectors are
extended and the fitted rate sits at zero.
"""
import math

from qpmsa.operators import amo
from qpmsa.spectral import localization_profiles, median_rate

N = 150
print(f"{'lam':>5} {'median rate':>12} {'log lam':>8} {'median mass near peak':>22}")
for lam in (0.2, 0.5, 0.9, 1.5, 3.0, 10.0):
    prof = localization_profiles(amo(lam), 0.3, N)
    mass = sorted(p.mass for p in prof)[len(prof) // 2]
    print(f"{lam:5.1f} {median_rate(prof):12.4f} {max(math.log(lam), 0):8.4f} {mass:22.4f}")
