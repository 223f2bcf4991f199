# The trained random feature model equals kernel ridge regression with the
# empirical kernel built from the same m features, at the same lambda.
import numpy as np

from fvrf.burgers import BurgersConfig, gen_burgers_dataset
from fvrf.features import FourierFamily
from fvrf.grid import Grid1D
from fvrf.rfm import kernel_ridge_oracle, predict_values, train

grid = Grid1D(16)
data = gen_burgers_dataset(6, BurgersConfig(grid, t_final=0.2), master_seed=3)
test = gen_burgers_dataset(4, BurgersConfig(grid, t_final=0.2), master_seed=4)

for lam in (1e-3, 1e-1):
    model = train(data, FourierFamily(), m=40, lam=lam, seed=0)
    Phi_train = model.features(data.inputs, grid)
    Phi_test = model.features(test.inputs, grid)
    oracle = kernel_ridge_oracle(Phi_train, data.outputs, grid.weights, lam)
    rfm = predict_values(model, test.inputs, grid)
    rel = np.linalg.norm(rfm - oracle(Phi_test)) / np.linalg.norm(rfm)
    print(f"lambda={lam:g}  relative difference RFM vs kernel ridge: {rel:.2e}")
