"""Modality-specific knowledge distillation for two-modality classifiers."""

from .data import DataGenConfig, ModalityView, generate_dataset, load_dataset, save_dataset, view_inputs
from .estimators import DistilledStudentClassifier, ModalityMasker, TeacherClassifier
from .losses import DistillConfig
from .meta import MetaOptConfig
from .nn import DenseNet, forward, init_dense, load_net, save_net, softmax_temp
from .training import METHODS, train_student, train_teacher

__version__ = "0.1.0"

__all__ = [
    "DataGenConfig", "ModalityView", "generate_dataset", "load_dataset", "save_dataset", "view_inputs",
    "DistilledStudentClassifier", "ModalityMasker", "TeacherClassifier",
    "DistillConfig", "MetaOptConfig",
    "DenseNet", "forward", "init_dense", "load_net", "save_net", "softmax_temp",
    "METHODS", "train_student", "train_teacher",
]
