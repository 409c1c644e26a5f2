"""kenas: kernel-level inference-energy estimation and energy-aware
architecture search for tabular networks."""

from .errors import GraphError, KenasError
from .graph import (
    ComputationGraph,
    GraphBuilder,
    OpKind,
    OpNode,
    TensorShape,
    infer_shapes,
    load_graph,
    save_graph,
    topological_levels,
    validate,
)
from .fusion import (
    FusionRule,
    Kernel,
    KernelPlan,
    MergeRecord,
    detect_kernels,
    load_rules,
    merge_parallel,
)
from .cost import (
    AnalyticParams,
    EnergyEstimate,
    PlatformProfile,
    PowerTrace,
    energy_from_trace,
    estimate_energy,
    load_profile,
    moving_average,
    predict_kernel,
    total_power,
)
from .space import (
    ArchitectureSpec,
    ChoiceRange,
    SpaceDef,
    candidate_count,
    decode,
    encode,
    enumerate_specs,
    fttransformer_space,
    lower,
    mlp_space,
    resnet_space,
    sample_uniform,
)
from .supernet import (
    Supernet,
    TrainConfig,
    evaluate_accuracy,
    load_checkpoint,
    r2_score,
    save_checkpoint,
    subnet_backward,
    subnet_forward,
    train,
)
from .search import (
    ControllerConfig,
    Policy,
    RewardConfig,
    SearchRun,
    SpecEvaluator,
    brute_force,
    energy_saving,
    objective,
    reinforce_step,
    search,
)
from .report import ComparisonReport, render_report_text, run_comparison

__version__ = "0.1.0"
