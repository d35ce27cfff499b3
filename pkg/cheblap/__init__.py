from cheblap.graph import (
    ALL_KINDS,
    AdjacencyParam,
    LaplacianKind,
    LaplacianOperator,
    Parametrization,
    build_laplacian,
    degree_matrix,
    laplacian_violations,
    rescale_spectrum,
)
from cheblap.chebyshev import ChebyshevBasis, aggregate, derivative_basis, forward_basis
from cheblap.laplacian_grad import (
    BasisGradients,
    SparseJacobian,
    apply_parametrization_jacobian,
    grad_wrt_laplacian,
    project_gradient,
    symmetrize_gradient,
)
from cheblap.model import (
    Mode,
    ModelConfig,
    ModelParams,
    batch_gradients,
    classify_and_loss,
    conv_block_backward,
    conv_block_forward,
    global_average_pool,
    init_params,
    model_backward,
    model_forward,
    predict,
)
from cheblap.config import TrainConfig, load_config
from cheblap.optim import AdamState, adam_step, lr_update
from cheblap.skeleton import (
    SkeletonSequence,
    TrajectoryGraph,
    build_graph,
    load_dataset,
    normalize_sequence,
    temporal_chunk,
)
from cheblap.synthetic import SynthSpec, linear_probe_accuracy, synth_generate, write_dataset
# cheblap.train must stay the submodule
from cheblap.train import ablation_grid, basis_diagnostics, evaluate
from cheblap.checkpoint import load_checkpoint, save_checkpoint
from cheblap.gradcheck import check_kind, run_gradcheck
