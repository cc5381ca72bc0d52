"""Path attributions and the completeness bookkeeping.

Every path method carries its endpoints, so |sum(A) - (f(x) - f(x'))| is a
measurable quantity: zero (to rounding) on affine models at any step count,
and shrinking with T on nonlinear ones.
"""
import numpy as np

from attrikit import (
    ExplanationTask,
    TrainConfig,
    boundary_ig,
    build,
    completeness_residual,
    expected_gradients,
    integrated_gradients,
    make_bars,
    train,
)

# affine case: exact at T=1
affine = ExplanationTask.for_model(build("linear", 6, 3, seed=2))
x = np.linspace(-1, 1, 6)
for T in (1, 4, 64):
    res = integrated_gradients(affine, x, 0, T=T)
    print(f"affine model, T={T:3d}: residual {completeness_residual(affine, res):.2e}")

# nonlinear case: quadrature error decays with T
bars = make_bars(n=400, seed=11)
model = build("mlp", 64, 4, seed=41)
train(model, (bars.inputs.reshape(len(bars), -1), bars.labels),
      TrainConfig(learning_rate=0.2, epochs=15, batch_size=16, seed=41))
task = ExplanationTask.for_model(model)
x = bars.inputs[0].ravel()
label = int(bars.labels[0])
print("\ntrained MLP, one sample:")
for T in (4, 16, 64, 256):
    res = integrated_gradients(task, x, label, T=T)
    print(f"  T={T:4d}: residual {completeness_residual(task, res):.2e}")

# expected gradients averages the gap over a baseline pool
pool = [bars.inputs[i].ravel() for i in range(8)]
res = expected_gradients(task, x, label, pool, n_draws=128, seed=0)
print(f"\nexpected gradients over an 8-sample pool: residual {completeness_residual(task, res):.2e}")

# boundary variant walks from an adversarial baseline back to x; with a
# budget too small to flip the class it falls back to the static baseline
from attrikit import BIM, UpdateConfig

weak = boundary_ig(task, x, label, T=64)
strong = boundary_ig(task, x, label, T=64,
                     attack=BIM(UpdateConfig(epsilon=0.3, alpha=0.03, steps=25, clamp=(0.0, 1.0))))
print(f"\nboundary path, weak attack:   {weak.notes}")
print(f"boundary path, strong attack: {strong.notes}")
print(f"strong-attack residual: {completeness_residual(task, strong):.2e}")
