# Learn the Darcy map (coefficient a -> pressure p) for piecewise-constant
# coefficients with predictor-corrector random features.
import numpy as np

from fvrf.darcy import DarcyConfig, gen_darcy_dataset
from fvrf.features import PredictorCorrectorFamily
from fvrf.grid import Grid2D
from fvrf.rfm import expected_relative_test_error, predict_values, train

grid = Grid2D(33)
cfg = DarcyConfig(grid)
train_data = gen_darcy_dataset(128, cfg, master_seed=21)
test_data = gen_darcy_dataset(50, cfg, master_seed=22)
print("coefficient values present:", np.unique(train_data.inputs[0]))

model = train(train_data, PredictorCorrectorFamily(), m=200, lam=1e-8, seed=0)
print(f"test error at r=33: {expected_relative_test_error(model, test_data):.4f}")

pred = predict_values(model, test_data.inputs[:1], grid)[0]
print(f"sample 0: max |p| = {test_data.outputs[0].max():.4f}, "
      f"max |p - prediction| = {np.abs(pred - test_data.outputs[0]).max():.2e}")

# Evaluate the r=33 model on a finer mesh without retraining
fine = gen_darcy_dataset(20, DarcyConfig(Grid2D(65)), master_seed=22)
print(f"test error at r=65: {expected_relative_test_error(model, fine):.4f}")
