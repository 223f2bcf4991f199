# Learn the viscous Burgers flow map u(0) -> u(T) with Fourier random features,
# then evaluate the same model on finer and coarser meshes.
import numpy as np

from fvrf.burgers import BurgersConfig, gen_burgers_dataset
from fvrf.features import FourierFamily
from fvrf.grid import Grid1D
from fvrf.rfm import expected_relative_test_error, train

# Training and test data on N = 128 unique periodic nodes, T = 1
cfg = BurgersConfig(Grid1D(128))
train_data = gen_burgers_dataset(256, cfg, master_seed=11)
test_data = gen_burgers_dataset(100, cfg, master_seed=12)

# m random Fourier features, minimum-norm least squares (lambda = 0)
model = train(train_data, FourierFamily(), m=256, lam=0.0, seed=0)
print(f"test error at N=128: {expected_relative_test_error(model, test_data):.4f}")

# The feature maps are defined on functions, so the same coefficients apply on
# other meshes. Coarser meshes simply drop modes they cannot resolve.
for n in (64, 256, 512):
    test_n = gen_burgers_dataset(50, BurgersConfig(Grid1D(n)), master_seed=12)
    print(f"test error at N={n}: {expected_relative_test_error(model, test_n):.4f}")

# Larger m gives a better approximation of the limiting kernel regressor
for m in (32, 128, 512):
    err = expected_relative_test_error(train(train_data, FourierFamily(), m=m, seed=0), test_data)
    print(f"m={m:4d}  error={err:.4f}")
