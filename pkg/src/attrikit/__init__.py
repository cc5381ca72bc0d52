"""attrikit: gradient attribution, adversarial update methods, axiom checks, metrics.

The package is layered bottom-up:

- tensor: reverse-mode autodiff on float64 numpy arrays
- models: small trainable zoo (linear, logistic, MLP, tiny CNN) with a binary
  weight format
- task / core: the gradient-accumulation attribution loop shared by every
  path-style method
- updates: path and attack update rules (linear path, noise, FGSM, BIM, PGD,
  MIM) plus robustness evaluation
- methods: concrete attribution methods and their registry
- metrics: insertion/deletion curves, infidelity, throughput, benchmark grids
- axioms: sensitivity, completeness, linearity, implementation invariance
- data / heatmap / cli: dataset ingestion, artifact emission, command line
"""

from .tensor import (
    NonFiniteError,
    ShapeError,
    Tape,
    TapeError,
    Tensor,
    backward,
    conv2d,
    gather,
    log_softmax,
    matmul,
    max_pool2x2,
    no_grad,
    no_grad_eval,
    relu,
    reshape,
    sigmoid,
    softmax,
    tape,
    value_and_grad,
)
from .models import (
    Model,
    TrainConfig,
    TrainResult,
    TrainingDiverged,
    WeightFormatError,
    build,
    functionally_equal,
    load_weights,
    make_equivalent_pair,
    save_weights,
    train,
)
from .task import AttributionResult, ExplanationTask
from .core import completeness_residual, fundamental_attribute
from .updates import (
    AttackOutcome,
    BIM,
    FGSM,
    GaussianNoise,
    LinearPath,
    MIM,
    PGD,
    RobustnessReport,
    UpdateConfig,
    first_order_gain,
    make_update,
    robust_accuracy,
    run_attack,
)
from .methods import (
    METHODS,
    MethodSpec,
    adversarial_path,
    boundary_ig,
    expected_gradients,
    fast_integrated_gradients,
    get_method,
    grad_cam,
    integrated_gradients,
    random_attribution,
    rise,
    run_method,
    saliency_map,
    smoothgrad,
)
from .metrics import (
    ATTACK_SWEEP_KINDS,
    BenchmarkTable,
    MetricConfig,
    MetricReport,
    PerturbationCurve,
    benchmark,
    deletion_score,
    infd_score,
    insertion_score,
    table_to_csv,
    throughput,
    update_method_sweep,
)
from .axioms import (
    AxiomVerdict,
    build_sensitivity_family,
    check_complete,
    check_implementation_invariance,
    check_linear,
    check_sensitivity,
    refuted_declarations,
    replay_witness,
)
from .data import DataFormatError, Dataset, load_dataset, make_bars, make_blobs
from .heatmap import emit_heatmap, load_heatmap
from .schemas import strip_timing, validate_artifact
from .cli import cli, main

__version__ = "0.1.0"
