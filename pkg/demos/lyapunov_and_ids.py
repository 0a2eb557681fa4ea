"""Transfer matrices and eigenvalue counting for the almost Mathieu family.

For v(x) = 2 lam cos(2 pi x) the Lyapunov exponent on the spectrum is
max(log lam, 0).  We compare the sampled exponent with that value, then
look at the integrated density of states of a finite box against the free
Laplacian.
"""
import math

import numpy as np

from qpmsa.equidistribution import golden
from qpmsa.operators import amo
from qpmsa.spectral import cosine_potential, free_ids, ids, lyapunov

omega = golden()
print(f"{'lam':>5} {'L(E=0)':>9} {'stderr':>8} {'log lam':>8}")
for lam in (0.5, 1.0, 2.0, 3.0, 10.0):
    L, se = lyapunov(0.0, omega, cosine_potential(lam), k=5000, x_samples=50)
    print(f"{lam:5.1f} {L:9.5f} {se:8.1e} {max(math.log(lam), 0):8.5f}")

E = np.linspace(-3, 3, 13)
free = ids(amo(0.0), 0.0, 400, E).counts
strong = ids(amo(2.0), 0.3, 400, E).counts
print(f"\n{'E':>5} {'k_free(box)':>12} {'k_free exact':>13} {'k_lam=2':>9}")
for e, a, b in zip(E, free, strong):
    print(f"{e:5.1f} {a:12.4f} {float(free_ids(e)):13.4f} {b:9.4f}")
