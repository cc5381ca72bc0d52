"""Executable axiom checks: verdicts, witnesses, replay, flag comparison."""
import json

import numpy as np
import pytest

from attrikit.axioms import (
    AxiomVerdict,
    LINEAR_THETAS,
    PairNotEquivalentError,
    SensitivityInstance,
    build_sensitivity_family,
    check_complete,
    check_implementation_invariance,
    check_linear,
    check_sensitivity,
    refuted_declarations,
    replay_witness,
)
from attrikit.methods import integrated_gradients
from attrikit.models import build, make_equivalent_pair
from attrikit.task import ExplanationTask
from attrikit.updates import BIM, UpdateConfig


@pytest.fixture(scope="module")
def mlp_pair():
    mlp = build("mlp", 16, 3, seed=5, hidden=[12])
    return make_equivalent_pair(mlp, seed=1)


@pytest.fixture(scope="module")
def affine_task3():
    model = build("linear", input_shape=4, num_classes=3, seed=2)
    return ExplanationTask.for_model(model)


class TestSensitivityFamily:
    def test_size_and_mix(self):
        family = build_sensitivity_family(size=20, seed=0)
        assert len(family) == 20
        kinds = {inst.kind for inst in family}
        assert kinds == {"affine", "quadratic", "relu", "saturated_relu"}

    def test_each_instance_isolates_one_live_feature(self):
        for inst in build_sensitivity_family():
            nz = np.where(np.abs(inst.x - inst.x_prime) > 0)[0]
            assert nz.tolist() == [inst.j]
            task = inst.make_task()
            gap = abs(task.score_value(inst.x, 0) - task.score_value(inst.x_prime, 0))
            assert gap > 1e-6

    def test_deterministic_rebuild(self):
        a = [inst.params() for inst in build_sensitivity_family(seed=3)]
        b = [inst.params() for inst in build_sensitivity_family(seed=3)]
        assert a == b


class TestSensitivity:
    def test_path_methods_hold(self):
        for name in ("ig", "fig", "big", "eg"):
            verdict = check_sensitivity(name)
            assert verdict.holds is True, name
            assert verdict.witness is None

    def test_saliency_misses_saturated_feature(self):
        verdict = check_sensitivity("sm")
        assert verdict.holds is False
        w = verdict.witness
        assert w["instance"]["kind"] == "saturated_relu"
        assert abs(w["observed"]) <= verdict.tolerance
        assert w["gap"] > 0
        assert replay_witness(w)["reproduced"] is True

    def test_smoothgrad_misses_saturated_feature(self):
        verdict = check_sensitivity("sg")
        assert verdict.holds is False
        assert replay_witness(verdict.witness)["reproduced"] is True

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_self_anchored_path_is_vacuous(self):
        # the attack path starts at x itself, so no instance isolates a feature
        verdict = check_sensitivity("mfaba")
        assert verdict.holds is True

    def test_constant_function_is_vacuous(self):
        x = np.array([1.0, 0.0])
        family = [SensitivityInstance(kind="affine", j=0, coeff=0.0,
                                      x=x, x_prime=np.zeros(2))]
        verdict = check_sensitivity("sm", task_family=family)
        assert verdict.holds is True

    def test_not_applicable_methods(self):
        conv = check_sensitivity("gradcam")
        assert conv.holds is None and "conv" in conv.witness["reason"]
        spatial = check_sensitivity("rise")
        assert spatial.holds is None and "cannot run" in spatial.witness["reason"]

    def test_deterministic_verdicts(self):
        a = check_sensitivity("sm").to_dict()
        b = check_sensitivity("sm").to_dict()
        assert a == b


class TestImplementationInvariance:
    def test_gradient_methods_agree_on_permuted_pair(self, mlp_pair):
        for name in ("ig", "sm", "sg"):
            verdict = check_implementation_invariance(name, mlp_pair, n_probes=20)
            assert verdict.holds is True, name

    def test_unequal_pair_is_a_usage_error(self):
        a = build("mlp", 16, 3, seed=5, hidden=[12])
        b = build("mlp", 16, 3, seed=6, hidden=[12])
        with pytest.raises(PairNotEquivalentError, match="differs"):
            check_implementation_invariance("ig", (a, b))

    def test_not_applicable_methods(self, mlp_pair):
        conv = check_implementation_invariance("gradcam", mlp_pair, n_probes=5)
        assert conv.holds is None and "conv-free" in conv.witness["reason"]
        spatial = check_implementation_invariance("rise", mlp_pair, n_probes=5)
        assert spatial.holds is None

    def test_replay_mechanics(self, mlp_pair):
        # hand-build a witness from real runs, then corrupt it: replay must
        # confirm the former bitwise and reject the latter
        m1, m2 = mlp_pair
        x = np.linspace(0.1, 0.9, 16)
        t1 = ExplanationTask.for_model(m1)
        label = t1.predict(x)
        a1 = integrated_gradients(t1, x, label).attribution
        a2 = integrated_gradients(ExplanationTask.for_model(m2), x, label).attribution
        witness = {
            "check": "implementation_invariance", "method": "ig",
            "x": x.tolist(), "label": int(label), "feature": 3,
            "value_a": float(a1[3]), "value_b": float(a2[3]), "max_diff": 0.0,
        }
        assert replay_witness(witness, model_pair=mlp_pair)["reproduced"] is True
        witness["value_a"] += 1.0
        assert replay_witness(witness, model_pair=mlp_pair)["reproduced"] is False

    def test_repeat_verdicts_identical(self, mlp_pair):
        a = check_implementation_invariance("ig", mlp_pair, n_probes=10).to_dict()
        b = check_implementation_invariance("ig", mlp_pair, n_probes=10).to_dict()
        assert a == b


class TestComplete:
    def test_straight_path_on_affine_model_is_exact(self, affine_task3):
        rng = np.random.default_rng(0)
        samples = rng.normal(size=(10, 4))
        assert check_complete("ig", affine_task3, samples, tolerance=1e-10).holds is True
        assert check_complete("eg", affine_task3, samples, tolerance=1e-10).holds is True

    def test_local_methods_are_not_applicable(self, affine_task3):
        for name in ("sm", "sg", "rise", "gradcam", "random"):
            verdict = check_complete(name, affine_task3, np.zeros((2, 4)))
            assert verdict.holds is None, name
            assert verdict.holds is not False

    def test_attack_path_on_relu_mlp_within_relative_band(self, mlp_bars, bars_eval):
        task = ExplanationTask.for_model(mlp_bars)
        samples = bars_eval.inputs.reshape(len(bars_eval.inputs), -1)[:50]
        attack = BIM(UpdateConfig(epsilon=0.1, alpha=0.005, steps=40))
        verdict = check_complete("mfaba", task, samples, tolerance=0.05,
                                 min_pass_fraction=0.95,
                                 overrides={"attack": attack})
        assert verdict.holds is True

    def test_failure_records_worst_sample_and_replays(self, mlp_bars, bars_eval):
        # a nonlinear model cannot meet an affine-exact tolerance at T=64
        task = ExplanationTask.for_model(mlp_bars)
        samples = bars_eval.inputs.reshape(len(bars_eval.inputs), -1)[:5]
        verdict = check_complete("ig", task, samples, tolerance=1e-12)
        assert verdict.holds is False
        w = verdict.witness
        assert w["residual"] > w["bound"]
        assert 0.0 <= w["pass_fraction"] < 1.0
        assert replay_witness(w, task=task)["reproduced"] is True

    def test_replay_requires_task(self, mlp_bars, bars_eval):
        task = ExplanationTask.for_model(mlp_bars)
        samples = bars_eval.inputs.reshape(len(bars_eval.inputs), -1)[:2]
        verdict = check_complete("ig", task, samples, tolerance=1e-12)
        with pytest.raises(ValueError, match="task"):
            replay_witness(verdict.witness)


class TestLinear:
    def test_straight_path_methods_recover_coefficients(self):
        for name in ("ig", "fig", "eg", "big", "sm", "sg"):
            verdict = check_linear(name)
            assert verdict.holds is True, name

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_sign_step_path_fails_with_replayable_witness(self):
        verdict = check_linear("mfaba")
        assert verdict.holds is False
        w = verdict.witness
        assert w["theta"] == [10.0, 0.1]
        # five sign steps of alpha=0.1 descend the score: total displacement
        # is -epsilon per coordinate, so A = theta * (-0.5)
        assert np.allclose(w["observed"], [-5.0, -0.05], atol=1e-9)
        assert w["expected"] == [10.0, 0.1]
        assert replay_witness(w)["reproduced"] is True

    def test_noise_baseline_fails(self):
        verdict = check_linear("random")
        assert verdict.holds is False
        assert replay_witness(verdict.witness)["reproduced"] is True

    def test_not_applicable_methods(self):
        assert check_linear("gradcam").holds is None
        assert check_linear("rise").holds is None

    def test_zero_function_member_is_harmless(self):
        assert (0.0, 0.0) in LINEAR_THETAS
        assert check_linear("ig").holds is True


class TestVerdictPlumbing:
    def test_to_dict_is_json_ready(self):
        verdict = check_sensitivity("sm")
        blob = json.dumps(verdict.to_dict())
        assert "saturated_relu" in blob

    def test_unknown_witness_kind_rejected(self):
        with pytest.raises(ValueError, match="unknown witness"):
            replay_witness({"check": "nonsense", "method": "ig"})


class TestRefutedDeclarations:
    def test_declared_true_refuted_by_false_verdict(self):
        fake = AxiomVerdict("Sensitivity", False, {"check": "sensitivity"}, 1e-8)
        assert refuted_declarations("ig", [fake]) == ["Sensitivity"]

    def test_declared_false_cannot_be_refuted(self):
        fake = AxiomVerdict("Sensitivity", False, {"check": "sensitivity"}, 1e-8)
        assert refuted_declarations("sm", [fake]) == []

    def test_not_applicable_never_refutes(self):
        na = AxiomVerdict("Complete", None, {"reason": "n/a"}, 1e-6)
        assert refuted_declarations("ig", [na]) == []

    def test_linear_has_no_declared_flag(self):
        fake = AxiomVerdict("Linear", False, {"check": "linear"}, 1e-8)
        assert refuted_declarations("ig", [fake]) == []

    def test_passing_verdicts_never_refute(self):
        good = AxiomVerdict("Complete", True, None, 1e-6)
        assert refuted_declarations("ig", [good]) == []
