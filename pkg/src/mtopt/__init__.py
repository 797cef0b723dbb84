"""Multi-task gradient aggregation operators with executable certificates.

The package implements the common specialized multi-task optimizers (plain
summed-loss scalarization, MGDA, IMTL, PCGrad, GradDrop, random loss
weighting, random task dropping) as pure maps over per-task gradient sets, a
small numpy MLP trainer to exercise them end to end, and a property suite
that certifies each method's documented convergence set.
"""

from .aggregators import (
    BernoulliMaskSample,
    GradDropSample,
    LossScaleState,
    PCGradTrace,
    graddrop,
    graddrop_repr,
    imtl_g,
    imtl_l_step,
    mgda,
    mgda_rescale,
    pcgrad,
    rgd,
    rlw,
    sign_agnostic_graddrop,
    unitary,
)
from .diagnostics import (
    StationarityReport,
    TriadReport,
    gradient_triad_report,
    stationarity_report,
    triad_report,
    undertraining_curve,
)
from .errors import (
    ConfigError,
    DegenerateInputError,
    DimensionError,
    IngestionError,
    MTOptError,
    TrainingDivergedError,
    ValidationError,
)
from .gradcore import (
    AggregateUpdate,
    GradientSet,
    GradSpace,
    SimplexWeights,
    combine,
    cosine,
    dot,
    norm2,
)
from .minnorm import (
    AffineMinNorm,
    MinNormSolution,
    affine_min_norm,
    min_norm_point,
    two_task_min_norm,
)
from .net import (
    AdamState,
    Batch,
    MultiTaskModel,
    forward,
    jvp_trunk,
    load_checkpoint,
    per_task_param_grads,
    per_task_repr_grads,
    save_checkpoint,
    sgd_or_adam_step,
    task_loss,
    unitary_grad,
)
from .seeding import spawn_rng
from .tasks import (
    QuadraticSuite,
    TaskSuite,
    load_multimnist,
    load_suite,
    make_blob_classification,
    make_conflicting_quadratics,
    make_scale_imbalanced_regression,
    save_suite,
)
from .trainer import (
    METHODS,
    DirectParameters,
    RunRecord,
    TrainConfig,
    TrainResult,
    evaluate,
    select_model,
    select_model_per_task,
    train,
    write_run_csv,
)

__version__ = "0.1.0"
