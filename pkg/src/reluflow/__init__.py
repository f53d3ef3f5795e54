"""Numerical laboratory for gradient flow on univariate depth-2 ReLU
networks: small-loss attainment, implicit bias toward max-margin KKT
points, linear-region counts, and dormancy lower bounds."""

from .net import Params, PiecewiseLinear, evaluate, scale, sign_changes, to_piecewise
from .data import Dataset, TeacherSpec, interval_structure, make_fr_teacher, sample_dataset
from .init import InitConfig, NeuronGeometry, breakpoint_law_check, classify_neurons, sample_init
from .loss import EXPONENTIAL, LOGISTIC, LossKind, SubgradientPolicy, empirical_loss, loss_gradient, population_loss
from .flow import FlowConfig, Trajectory, direction_of, integrate, pl_diagnostic, trajectory_length
from .kkt import KKTCertificate, certify, normalize_to_margin_one, track_kkt_along
from .regions import RegionReport, activation_points_per_interval, count_regions, region_bound, region_bound_check
from .sep import (
    NeighborhoodSpec,
    SeparabilityConstants,
    check_separability,
    grad_lower_bound,
    masking_inverse_bound,
    neighborhood_membership,
    theoretical_constants,
)

__all__ = [n for n in dir() if not n.startswith("_")]
__version__ = "0.1.0"
