"""Tensor neural networks for parametric elliptic PDEs with separable quadrature."""

from .diffnet import NetArchitecture, backward_params, forward_jet, init_subnetwork
from .errors import DegenerateFactorError, InvalidArgumentError, NonCoerciveProblemError, NumericFailureError
from .loss import assemble, assemble_strong, assemble_weak, loss_gradient_check
from .metrics import error_report, projection_error_h1, projection_error_l2
from .optim import Adam, LBFGS, Schedule, Stage, desk_schedule, paper_schedule, train
from .problem import ellipticity_lower_bound, make_example1, make_example2, make_example3, make_problem
from .quad import Interval, composite_rule, gauss_legendre_rule, integrate
from .tnn import TNNModel, build_factors, eval_point, gram, load_checkpoint, model_for_problem, moment, save_checkpoint

__version__ = "0.1.0"
