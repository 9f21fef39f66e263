"""
One controller for three operating points
=========================================

Three frequency responses of the same 2 x 2 process, taken at different
operating points, are shaped towards a common desired loop
``L_d = wc / (z - 1)`` (an integrator with crossover near ``wc / Ts``).
All three models share the decision variables, so the final controller
is checked model by model.
"""

import numpy as np

from fdlmi import (DesignSpec, RationalWeight, SynthesisConfig,
                   achieved_hinf, build_log_grid, frs_from_rational,
                   run_synthesis)
from fdlmi.analysis import closed_loop

ts = 0.1
grid = build_log_grid(1e-2, 0.98 * np.pi / ts, 100, ts=ts)


def operating_point(speed):
    """Unit DC gain channels; `speed` slows the poles and adds coupling.

    The coupling has a zero at z = 1, so all models agree at DC.  Without
    that no single integrating controller could match the target's
    integrator on every model.
    """
    a, c = 0.7 + 0.1 * speed, 0.3 * speed
    b = 1 - a
    return [[([b], [1, -a]), ([c, -c], [1, -0.5])],
            [([-c, c], [1, -0.5]), ([b], [1, -a])]]


models = [operating_point(s) for s in (0.0, 0.5, 1.0)]
frs = frs_from_rational(models, grid)

target = RationalWeight([0.3], [1, -1], 2, variable='z')
spec = DesignSpec('ls-hinf', target=target,
                  bounds=[('S', 0.5)])          # |S| below 2 on the grid
cfg = SynthesisConfig(spec, degree=1, fy=[-1.0, 1.0], max_iterations=25)
result = run_synthesis(cfg, frs)

print(f"{result.status} after {result.iterations} iterations, "
      f"loop mismatch bound {result.objective:.4f}")
for i, m in enumerate(result.certificate.models):
    print(f"model {i}: {m.verdict}, winding {m.winding}")

for i in range(frs.q):
    cl = closed_loop(frs, result.controller, model=i)
    lo = np.linalg.svd(cl.L[:5], compute_uv=False).min()
    peak = achieved_hinf(frs.select([i]), result.controller, stack='S')
    print(f"model {i}: min gain at low frequency {lo:.1f}, "
          f"peak |S| between grid points {peak:.3f}")
