"""Surgical workflow recognition and long-horizon anticipation toolkit."""

from ._kernels import BACKEND_NAME as kernel_backend
from .core import (
    Dataset,
    FeatureSequence,
    HorizonGrid,
    LabeledSequence,
    load_features,
    load_labels,
    save_features,
    save_labels,
)
from .priors import TransitionPriorTensor, extract_transition_priors, load_priors, save_priors
from .simulate import FeatureModel, WorkflowGrammar, build_dataset, generate_features, generate_workflow

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "FeatureModel",
    "FeatureSequence",
    "HorizonGrid",
    "LabeledSequence",
    "TransitionPriorTensor",
    "WorkflowGrammar",
    "build_dataset",
    "extract_transition_priors",
    "generate_features",
    "generate_workflow",
    "kernel_backend",
    "load_features",
    "load_labels",
    "load_priors",
    "save_features",
    "save_labels",
    "save_priors",
    "__version__",
]
