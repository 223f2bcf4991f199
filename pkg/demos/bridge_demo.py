# Scalar regression with Brownian bridge random features. As m grows the
# trained model approaches the kernel interpolant for min(x, x') - x x',
# which is the piecewise-linear interpolant of the data.
import numpy as np

from fvrf import bridge

table = bridge.demo(n=32, ms=(50, 500, 5000), seed=0)
for m, gap in bridge.sup_gaps(table).items():
    print(f"m={m:5d}  sup |RFM - kernel interpolant| = {gap:.4f}")

x = table["x"]
print(f"oracle at endpoints: {table['oracle'][0]:.2e}, {table['oracle'][-1]:.2e}")
print(f"sup |oracle - target| = {np.max(np.abs(table['oracle'] - table['truth'])):.4f}")

# Monte Carlo estimate of the kernel at (x, x') = (0.25, 0.5); exact value 0.125
for m in (100, 1000, 10000):
    print(f"m={m:5d}  k_m(0.25, 0.5) = {bridge.empirical_bridge_kernel(0.25, 0.5, m, seed=1):.4f}")
