"""Mixture-of-experts selective state-space kernels.

Selective SSM scans (sequential and chunked semiseparable), a
MoE parameterization that mixes expert input/readout streams into a
single recurrence, the separated per-expert baseline, an analytic
backward pass, a FLOP cost model, and executable verification of the
structure/stability/equality/complexity/expressivity claims.

Hot kernels run under numba by default; set MOESSM_BACKEND=numpy to
force the pure-numpy fallback (or call kernels.use_backend at runtime).
"""

from .bench import (
    BenchRecord,
    KernelBenchRecord,
    SweepConfig,
    compare_backends,
    read_records_csv,
    run_sweep,
    write_records_csv,
)
from .checks import CheckResult, run_verification
from .costmodel import DESIGNS, FlopCounts, c_mix, c_mix_out, c_route, c_step, flop_model
from .errors import (
    ConvergenceError,
    InvalidInputError,
    MoessmError,
    NumericError,
    SizeLimitError,
    UnsupportedTransitionError,
)
from .gradients import (
    GradBundle,
    adjoint_dot_test,
    finite_diff_check,
    layer_backward,
    layer_forward,
    loss_and_grads,
)
from .instances import LayerInstance, RngInstanceSpec, StreamInstance, generate_instance, generate_layer
from .kernels import active_backend, available_backends, use_backend
from .linalg import spectral_norm
from .moe import (
    ExpertParams,
    MixedForward,
    MixedStreams,
    SeparatedForward,
    expert_streams,
    mix_streams,
    mixed_forward_streams,
    moe_param_forward,
    moe_separated_forward,
)
from .router import RouterParams, router_logits, softmax_route, softmax_weights, topk_mask
from .ssd import ChunkPlan, decay_matrix, semiseparable_apply, semiseparable_materialize, ssd_chunked, ssd_chunked_core
from .ssm import DiscretizationInput, selective_ssm, ssm_scan_sequential, zoh_discretize
from .theory import (
    check_delta_recursion,
    check_equality_regime,
    check_mismatch_bound,
    check_stability,
    check_structure,
    expressivity_demo,
    stability_tightness_witness,
)
from .types import (
    RoutingPlan,
    SequenceBatch,
    StateTrajectory,
    StreamSet,
    TransitionSpec,
)

__version__ = "0.1.0"

__all__ = [
    "BenchRecord",
    "ChunkPlan",
    "CheckResult",
    "ConvergenceError",
    "DESIGNS",
    "DiscretizationInput",
    "ExpertParams",
    "FlopCounts",
    "GradBundle",
    "InvalidInputError",
    "KernelBenchRecord",
    "LayerInstance",
    "MixedForward",
    "MixedStreams",
    "MoessmError",
    "NumericError",
    "RngInstanceSpec",
    "RouterParams",
    "RoutingPlan",
    "SeparatedForward",
    "SequenceBatch",
    "SizeLimitError",
    "StateTrajectory",
    "StreamInstance",
    "StreamSet",
    "SweepConfig",
    "TransitionSpec",
    "UnsupportedTransitionError",
    "active_backend",
    "adjoint_dot_test",
    "available_backends",
    "c_mix",
    "c_mix_out",
    "c_route",
    "c_step",
    "check_delta_recursion",
    "check_equality_regime",
    "check_mismatch_bound",
    "check_stability",
    "check_structure",
    "compare_backends",
    "decay_matrix",
    "expert_streams",
    "expressivity_demo",
    "finite_diff_check",
    "flop_model",
    "generate_instance",
    "generate_layer",
    "layer_backward",
    "layer_forward",
    "loss_and_grads",
    "mix_streams",
    "mixed_forward_streams",
    "moe_param_forward",
    "moe_separated_forward",
    "read_records_csv",
    "router_logits",
    "run_sweep",
    "run_verification",
    "selective_ssm",
    "semiseparable_apply",
    "semiseparable_materialize",
    "softmax_route",
    "softmax_weights",
    "spectral_norm",
    "ssd_chunked",
    "ssd_chunked_core",
    "ssm_scan_sequential",
    "stability_tightness_witness",
    "topk_mask",
    "use_backend",
    "write_records_csv",
    "zoh_discretize",
]
