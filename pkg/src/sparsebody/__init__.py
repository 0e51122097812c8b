"""Articulated body model with sparse per-joint pose correctives.

The package covers the full pipeline: mesh and kinematic primitives
(:mod:`sparsebody.mesh`), rotation math (:mod:`sparsebody.rotations`),
the forward model (:mod:`sparsebody.body`), training
(:mod:`sparsebody.training`), pose/shape fitting and PCA analysis
(:mod:`sparsebody.fitting`), a synthetic ground-truth generator
(:mod:`sparsebody.synthetic`), versioned file containers
(:mod:`sparsebody.containers`) and a CLI (:mod:`sparsebody.cli`).
"""

from .body import BodyModel, CorrectiveTable, ForwardJacobian, ParameterCount
from .errors import (
    InvalidArgumentError,
    NumericalError,
    ObjParseError,
    SparseBodyError,
    UnreachableVertexError,
    ValidationError,
)
from .fitting import FitOptions, FitResult, PcaBasis, explained_variance, fit, pca_fit, v2v
from .mesh import (
    JointNeighborhoods,
    KinematicTree,
    Mesh,
    geodesic_distances,
    joint_seed_vertices,
    load_obj,
    save_obj,
)
from .rotations import (
    axis_angle_to_matrix,
    axis_angle_to_quaternion,
    canonicalize_sign,
    pose_to_feature,
    quaternion_to_matrix,
)
from .synthetic import SynthConfig, make_body, make_shape_populations, sample_registrations
from .training import (
    EpochMetrics,
    Registration,
    TrainConfig,
    init_activations,
    initialize_for_training,
    loss_activation,
    loss_blend,
    loss_data,
    loss_skinning,
    prune,
    total_loss,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "BodyModel",
    "CorrectiveTable",
    "EpochMetrics",
    "FitOptions",
    "FitResult",
    "ForwardJacobian",
    "InvalidArgumentError",
    "JointNeighborhoods",
    "KinematicTree",
    "Mesh",
    "NumericalError",
    "ObjParseError",
    "ParameterCount",
    "PcaBasis",
    "Registration",
    "SparseBodyError",
    "SynthConfig",
    "TrainConfig",
    "UnreachableVertexError",
    "ValidationError",
    "axis_angle_to_matrix",
    "axis_angle_to_quaternion",
    "canonicalize_sign",
    "explained_variance",
    "fit",
    "geodesic_distances",
    "init_activations",
    "initialize_for_training",
    "joint_seed_vertices",
    "load_obj",
    "loss_activation",
    "loss_blend",
    "loss_data",
    "loss_skinning",
    "make_body",
    "make_shape_populations",
    "pca_fit",
    "pose_to_feature",
    "prune",
    "quaternion_to_matrix",
    "sample_registrations",
    "save_obj",
    "total_loss",
    "train",
    "v2v",
]
