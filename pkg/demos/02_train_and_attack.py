"""Train the small model zoo and measure robustness under sign attacks.

The attack budget is an l-infinity ball; robust accuracy counts predictions
that survive relative to the clean ones, so budget zero is exactly 1.0.
"""
import numpy as np

from attrikit import (
    ExplanationTask,
    PGD,
    TrainConfig,
    UpdateConfig,
    build,
    make_bars,
    robust_accuracy,
    train,
)

bars = make_bars(n=400, seed=11)
holdout = make_bars(n=160, seed=12)

model = build("mlp", 64, 4, seed=41)
flat_train = (bars.inputs.reshape(len(bars), -1), bars.labels)
result = train(model, flat_train, TrainConfig(learning_rate=0.2, epochs=15, batch_size=16, seed=41))
print(f"train accuracy by epoch: {[round(a, 3) for a in result.accuracies[::3]]}")

task = ExplanationTask.for_model(model)
flat_holdout = type(holdout)(holdout.name, holdout.inputs.reshape(len(holdout), -1),
                             holdout.labels, holdout.n_classes, holdout.input_range)

print("\nPGD robust accuracy vs budget")
for eps in (0.0, 2 / 255, 8 / 255, 16 / 255, 32 / 255):
    update = PGD(UpdateConfig(epsilon=eps, steps=10, seed=0, clamp=(0.0, 1.0)))
    report = robust_accuracy(task, flat_holdout, update, n_samples=100)
    print(f"  eps {eps:8.5f}  accuracy {report.accuracy:.3f}  flipped {len(report.flipped)}")
