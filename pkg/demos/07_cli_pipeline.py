"""The whole pipeline through the command line, in one sitting.

Runs train -> attribute -> attack -> metrics -> axioms -> bench against a
synthetic dataset inside a scratch directory. Every artifact is seeded,
schema-validated JSON; rerunning any step with the same seed reproduces it
byte-for-byte (timing aside).
"""
import json
import pathlib
import tempfile

from attrikit import main

scratch = pathlib.Path(tempfile.mkdtemp(prefix="attrikit_demo_"))
data = "synthetic:bars(n=120, seed=7)"
print(f"artifacts under {scratch}\n")

config = scratch / "train.json.cfg"
config.write_text(json.dumps({"epochs": 10, "learning_rate": 0.2}))
assert main(["train", "--model", "mlp", "--data", data, "--seed", "5",
             "--out", str(scratch / "train"), "--config", str(config)]) == 0
weights = str(scratch / "train" / "weights.bin")
print("trained:", json.loads((scratch / "train" / "train.json").read_text())["final_accuracy"])

assert main(["attribute", "--weights", weights, "--data", data, "--method", "ig",
             "--T", "32", "--seed", "5", "--out", str(scratch / "attr")]) == 0
attr = json.loads((scratch / "attr" / "attribution.json").read_text())
print("attributed sample 0:", attr["method"], "residual", attr["completeness_residual"])

assert main(["attack", "--weights", weights, "--data", data, "--update", "pgd",
             "--eps", "0.05", "--seed", "5", "--out", str(scratch / "atk")]) == 0
print("robust accuracy:", json.loads((scratch / "atk" / "robustness.json").read_text())["accuracy"])

mcfg = scratch / "metrics.cfg"
mcfg.write_text(json.dumps({"n_samples": 10, "with_fps": False}))
assert main(["metrics", "--weights", weights, "--data", data, "--method", "ig",
             "--seed", "5", "--out", str(scratch / "met"), "--config", str(mcfg)]) == 0
print("metrics row:", json.loads((scratch / "met" / "metrics.json").read_text())["report"])

assert main(["axioms", "--method", "ig", "--seed", "0", "--out", str(scratch / "ax")]) == 0
verdicts = json.loads((scratch / "ax" / "axioms.json").read_text())
print("axioms:", {v["axiom"]: v["holds"] for v in verdicts["verdicts"]})

bcfg = scratch / "bench.cfg"
bcfg.write_text(json.dumps({"n_samples": 6, "methods": ["ig", "random"],
                            "with_fps": False, "infd_probes": 16}))
assert main(["bench", "--weights", weights, "--data", data, "--eps", "0.1",
             "--seed", "5", "--out", str(scratch / "bench"), "--config", str(bcfg)]) == 0
grid = json.loads((scratch / "bench" / "bench.json").read_text())
print("bench sweep:", [(r["method_name"], r["robust_acc"]) for r in grid["update_sweep"]])
