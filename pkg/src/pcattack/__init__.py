"""Gradient-sign adversarial attacks, their prediction-correction variants,
small numpy classifiers to attack, and the harness that scores them."""

from .attacks import (
    AttackConfig,
    AttackResult,
    ensemble_attack,
    expected_grad_evals,
    fgsm,
    i_fgsm,
    mi_fgsm,
    ni_fgsm,
    parse_attack,
    pc_fgsm,
    pc_iterative,
    pc_predict,
    run_attack,
)
from .augment import AugmentConfig, DimConfig, GradientEstimator, SimConfig, TimConfig, gaussian_kernel
from .autodiff import DegenerateGradientError, GradientTape, clip_ball, l1_normalize, sign
from .checkpoint import load_checkpoint, save_checkpoint
from .data import Dataset, EmptySubsetError, load_dataset, make_synthetic, save_dataset
from .harness import BudgetError, SuccessMatrix, SweepResult, build_matrix, emit_report, filter_correct
from .models import Checkpoint, Classifier, FusedClassifier, ModelSpec, TrainConfig, predict, train
from .ode import OdeProblem, euler, fgsm_correspondence_demo, improved_euler, trapezoid
from .zoo import Zoo

__version__ = "0.1.0"
