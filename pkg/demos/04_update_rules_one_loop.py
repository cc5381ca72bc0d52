"""One accumulation loop, many update rules.

The core loop sums displacement * (-loss gradient) along whatever trajectory
the update rule produces. A straight interpolation recovers the usual path
integral; attack steps give adversarial-trajectory attributions.
"""
import numpy as np

from attrikit import (
    BIM,
    ExplanationTask,
    TrainConfig,
    UpdateConfig,
    adversarial_path,
    build,
    fundamental_attribute,
    make_bars,
    make_update,
    train,
)

bars = make_bars(n=400, seed=11)
model = build("mlp", 64, 4, seed=41)
train(model, (bars.inputs.reshape(len(bars), -1), bars.labels),
      TrainConfig(learning_rate=0.2, epochs=15, batch_size=16, seed=41))
task = ExplanationTask.for_model(model)

x = bars.inputs[3].ravel()
label = int(bars.labels[3])

print("core loop under each update rule (top-3 feature indices by |A|):")
cfg = UpdateConfig(epsilon=0.1, alpha=0.01, steps=20, seed=0, clamp=(0.0, 1.0))
for kind in ("linearpath", "noise", "fgsm", "bim", "pgd", "mim"):
    update = make_update(kind, cfg)
    res = fundamental_attribute(task, x, label, update)
    top = np.argsort(-np.abs(res.attribution))[:3]
    print(f"  {kind:10s} -> {res.method_name:18s} top features {top.tolist()}")

# the named adversarial-path method is the same loop restricted to
# iterative attacks, with the path anchored at x itself
res = adversarial_path(task, x, label, attack=BIM(cfg))
print(f"\nadversarial path: steps taken {res.steps_taken}, "
      f"start is x itself: {np.array_equal(res.path_endpoints[0], x)}")
