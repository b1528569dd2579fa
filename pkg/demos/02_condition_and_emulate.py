"""Condition a small model on two runs and emulate a third input.

The simulator has a quadratic loss term that its affine linearization leaves
out. The emulator corrects the linear model using the design runs; it agrees
with literal Gaussian conditioning on the full joint covariance
(``dense_oracle``), passes through the design runs, and its variance
collapses there.
"""
import numpy as np

from dynemu import (AffineModel, ConditionConfig, DesignSet, InputTrajectory, MetricSpec, ObservationSet,
                    TimeGrid, condition, dense_oracle, emulate)
from dynemu.simulator import integrate_ode, observe_states



class QuadraticLoss(AffineModel):
    """Affine linearization, but the simulator also drains the second store quadratically."""

    def rhs(self, state, params, forcing):
        return super().rhs(state, params, forcing) - np.array([0.0, 0.6 * state[1] ** 2])


# drift depends on one parameter theta: A(theta) = A0 + theta * A1
model = QuadraticLoss(A0=[[-0.4, 0.3], [0.0, -0.9]], A_params=[[[0.0, 0.0], [0.5, 0.0]]],
                    b0=[0.2, 0.0], Bu=[[1.0], [0.0]], H=[[0.0, 1.0]], xi0=[1.0, 0.0])
grid = TimeGrid.regular(0.0, 0.5, 20)
rain = np.where(np.arange(20) % 6 == 0, 2.0, 0.0)[:, None]
metric = MetricSpec((0,), [0.5])
CCt = np.diag([0.05, 0.02])


def run(theta):
    x = InputTrajectory([theta], rain, grid.key)
    return x, observe_states(model, x.params, integrate_ode(model, x, grid))


(x1, y1), (x2, y2) = run(0.2), run(0.9)

design = DesignSet([x1, x2])
runs = ObservationSet(np.stack([y1, y2]))
ce = condition(model, design, runs, metric, CCt, ConditionConfig(), grid=grid)
print(f"conditioning matrix {ce.dim}x{ce.dim}, jitter {ce.jitter}, timings {ce.timings}")

x_new, y_true = run(0.5)
res = emulate(ce, x_new, variance=True)
mean_o, cov_o = dense_oracle(model, design, runs, x_new, CCt, metric, grid)
print("max |emulator - dense oracle| mean: %.2e" % np.abs(res.mean - mean_o).max())
print("max |emulator - dense oracle| var:  %.2e" % np.abs(res.variance[1:, 0, 0] - np.diag(cov_o)).max())
prior = emulate(condition(model, DesignSet([]), ObservationSet(np.zeros((0, 21, 1))), metric, CCt, grid=grid), x_new)
print("max |emulated - simulated| at theta=0.5: %.4f (linear model alone: %.4f)"
      % (np.abs(res.mean - y_true).max(), np.abs(prior.mean - y_true).max()))

at_design = emulate(ce, x1, variance=True)
print("at a design input: max |mean - run| %.1e, max variance %.1e"
      % (np.abs(at_design.mean - y1).max(), at_design.variance.max()))

print("\n  t     truth   emulated  linear   +-2sd")
for i in range(0, 21, 4):
    sd = np.sqrt(max(res.variance[i, 0, 0], 0.0))
    print(f"{grid.times[i]:4.1f}  {y_true[i, 0]:7.4f}  {res.mean[i, 0]:7.4f}  {prior.mean[i, 0]:7.4f}  {2 * sd:6.4f}")
