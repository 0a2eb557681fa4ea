"""Small-singular-value sets and the bad set of phases.

First the measure of {x : ||T(x)^-1|| >= 1/eps} for the diagonal sine family
and for a finite almost Mathieu block, against eps.  Then the fraction of
phases whose size-N Green's function fails the decay test, for a few N.
"""
import math

from qpmsa.cartan import cartan_measure, diag_sine_family, envelope_exponent, operator_family
from qpmsa.ldt import PropertyPParams, Sampler, measure_bad_set
from qpmsa.lattice import cube
from qpmsa.operators import amo

eps = [1e-2, 1e-3, 1e-4, 1e-5, 1e-6]
# the operator family costs one 11x11 eigenvalue solve per grid point
for fam, n in ((diag_sine_family(), 200_000), (operator_family(amo(5.0), cube([0], 5), E=0.3), 5_000)):
    res = cartan_measure(fam, eps, n_grid=n)
    print(f"{fam.name}: monotone={res.monotone}, mes ~ eps^{envelope_exponent(res.points):.3f}")
    for p in res.points:
        print(f"  eps={p.eps:7.0e}  measure={p.measure:10.3e}  measure/eps={p.measure / p.eps:7.3f}")

params = PropertyPParams(mu=0.5, zeta=0.5, c2=0.5 * math.log(10))
print("\nbad-set fraction for lam = 10, E = 0 (grid sampler, 400 phases)")
for N in (20, 40, 80):
    est = measure_bad_set(amo(10.0), 0.0, N, params, Sampler("grid", 400))
    print(f"  N={N:3d}  fraction={est.fraction:.4f}  95% CI=({est.ci[0]:.4f}, {est.ci[1]:.4f})  "
          f"cover measure={est.cover.measure():.4f}")
