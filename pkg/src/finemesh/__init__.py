"""Fine-layered mesh linear units with fused complex-gradient training.

The package splits along the natural seams of the problem:

* `primitives` — 2x2 phase-shifter / coupler factors and interferometer
  assembly;
* `mesh` — rectangular fine-layer stacks, dense materialization, the
  forward sweep, and the text checkpoint format;
* `engine` — reverse-mode gradients two independent ways (fused
  collective sweep vs an elementary-operation tape) plus the
  finite-difference oracle;
* `rnn` — the complex-valued recurrent classifier built on a mesh
  hidden unit (modReLU, power readout, RMSProp, BPTT);
* `data` — IDX corpus ingestion, pixel-sequence flattening, and the
  seeded synthetic digit stand-in;
* `harness` — training/benchmark/fit orchestration and metrics
  emission;
* `cli` — the `finemesh` console entry point.
"""
from .data import (
    IdxError,
    MnistDataset,
    flatten_sequence,
    load_mnist_idx,
    synthesize_digits,
)
from .engine import (
    ElementaryTape,
    PhaseGradients,
    SweepStats,
    TapeRun,
    apply_phase_step,
    dense_complex_backward,
    finite_difference_gradient,
    fused_backward_sweep,
    tape_forward,
    tape_forward_backward,
)
from .mesh import (
    BasicUnit,
    FineLayer,
    LayerKind,
    MeshFormatError,
    RectangularMesh,
    SweepWorkspace,
    a_pairs,
    b_pairs,
    build_mesh,
    forward_sweep,
    layer_to_matrix,
    load_mesh,
    mesh_to_matrix,
    save_mesh,
)
from .primitives import MziKind, canonical_phase, dc_matrix, embed_single_mzi, mzi_matrix, ps_matrix
from .rnn import (
    DivergenceError,
    EpisodeTrace,
    RmsProp,
    RnnConfig,
    RnnGradients,
    RnnModel,
    apply_updates,
    evaluate,
    load_model,
    modrelu,
    modrelu_backward,
    power_backward,
    power_forward,
    rnn_backward,
    rnn_forward,
    save_model,
    softmax_cross_entropy,
    train_step,
)
from .units import dcps_backward, dcps_forward, diag_backward, diag_forward, psdc_backward, psdc_forward

__version__ = "0.1.0"
