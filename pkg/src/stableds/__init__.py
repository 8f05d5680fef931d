"""Stable motion learning from demonstrations.

Point-to-point motions are driven by a learned neural Lyapunov function
whose value provably decreases along every trajectory; periodic motions
converge to a learned limit cycle guarded by a transverse-contraction
check.  See README.md for the CLI and the acceptance suite.
"""

from .autodiff import ParamVector, Tape, Value, gradcheck, input_gradient, jacobian_fd
from .data import AffineMap, DemonstrationSet, MetricsReport, Trajectory, \
    convergence_stats, ingest_csv, normalize, sea, synth_cycle, synth_p2p, v_rmse
from .cycle import CycleModel, GateReport, lambda_max_2x2, poincare_return
from .errors import ConfigError, ContractError, DataError, NumericError, StabledsError
from .networks import MlpSpec, ModelConstants, default_specs, init_params
from .p2p import P2pModel, StableDsModel, projections
from .runtime import RolloutSpec, field_grid, load_model, plot_svg, rollout, save_model
from .train import TrainConfig, TrainRecord, adamw_step, train, velocity_loss

__version__ = "0.1.0"
