"""flatlab: a desk-scale laboratory for flat-minima optimization.

The package trains small models with plain first-order optimizers, with
sharpness-aware perturbed-gradient steps, with cumulative iterate
averaging, and with the combination of the two, and provides the analysis
toolkit (linear interpolations, random-plane surfaces, sharpness probes)
used to study the solutions they find.
"""

from .data import Dataset, Minibatch, generate, load_idx, sample_batches, save_idx
from .errors import ConfigError, DivergenceError
from .harness import (
    ExperimentConfig,
    ResultTable,
    RunConfig,
    interpolate_checkpoints,
    report,
    run_experiment,
    surface_checkpoint,
)
from .landscape import (
    BarrierReport,
    DirectionPair,
    LandscapeGrid,
    analytic_evaluator,
    analytic_loss_fn,
    interpolate,
    model_evaluator,
    model_loss_fn,
    sample_plane,
    sharpness_probe,
    surface,
)
from .losses import (
    AsymmetricValley1D,
    Quadratic,
    Rosenbrock2D,
    SharpFlatBimodal1D,
    analytic_eval,
    make_loss,
)
from .models import (
    BatchNormState,
    Gradient,
    Model,
    build_model,
    evaluate,
    forward,
    gradient,
    recompute_bn_stats,
)
from .optimizers import (
    AveragedState,
    OptimizerConfig,
    OptimizerState,
    SamStepRecord,
    TrainingResult,
    average_update,
    base_step,
    run_analytic,
    run_training,
    sam_perturbation,
    sam_step,
)
from .params import ParameterVector, Segment, linear_combination, load_checkpoint, save_checkpoint
from .rng import RngStream

__version__ = "0.1.0"
