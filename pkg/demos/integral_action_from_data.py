"""
Integral control designed from measured data
=============================================

Only input/output records of the plant are used.  A random-input
experiment is turned into frequency-response data by Fourier analysis,
then a discrete controller with a fixed integrator ``(z - 1)`` in its
denominator is synthesized and checked with the Nyquist certificate.

The "true" plant below only generates the data; the design never sees it.
"""

import numpy as np
from scipy import signal

from fdlmi import (DesignSpec, ExperimentRecord, FrequencyGrid,
                   FrequencyResponseSet, RationalWeight, SynthesisConfig,
                   achieved_hinf, certify_stability,
                   estimate_frequency_response, run_synthesis)

ts = 0.05
num, den = [0.0, 0.06, 0.03], [1.0, -1.5, 0.6]    # lightly damped, stable

rng = np.random.default_rng(1)
n_samples = 4096
u = rng.choice([-1.0, 1.0], size=n_samples)
# a periodic input removes the transient: simulate two periods, keep one
y = signal.lfilter(num, den, np.tile(u, 2))[n_samples:]
record = ExperimentRecord(u, y, ts)

# with a periodic input the estimate is exact at the DFT bins of one period,
# so pick a roughly logarithmic subset of them
bins = np.unique(np.geomspace(1, 0.95 * n_samples / 2, 150).astype(int))
grid = FrequencyGrid(2 * np.pi * bins / (n_samples * ts), ts=ts)
measured = estimate_frequency_response(record, grid)
frs = FrequencyResponseSet(measured, grid)

# sanity check against the generating model
_, exact = signal.freqz(num, den, worN=grid.omega * ts)
err = np.abs(measured[:, 0, 0] - exact) / np.abs(exact)
print(f"identification error: max {err.max():.2e} relative")

# integral action through the fixed factor (z - 1) of Y
w1 = RationalWeight([1, -0.9], [1, -0.999], variable='z')
cfg = SynthesisConfig(DesignSpec(w1=w1, w2=0.2), degree=2, fy=[-1.0, 1.0],
                      max_iterations=30)
result = run_synthesis(cfg, frs)
print(f"{result.status} after {result.iterations} iterations, "
      f"gamma = {result.objective:.5f}")

cert = certify_stability(frs, result.controller, dense_factor=20)
print(cert.verdict, "with", cert.models[0].winding, "net encirclements")
K1 = result.controller.response(np.array([0.999]))[0, 0, 0]
print(f"|K| near z = 1: {abs(K1):.1f} (integrator)")
print("peak |S|:", round(achieved_hinf(frs, result.controller,
                                         stack='S'), 4))
