"""Complex-valued Elman recurrence with a unitary mesh as the hidden unit.

Per timestep (all tensors feature-major, columns = batch):

    y(t) = W_in x(t) + b_in + M h(t-1)      M = the mesh's linear map
    h(t) = modReLU(y(t); b_act)
    z    = W_out h(T) + b_out
    p    = |z|^2   (power readout, the classifier's logits)

Training is full back-propagation through time with the mesh gradients
accumulated by the engine's collective sweep (or, optionally, the
elementary tape), and RMSProp updates per parameter group.  Complex
parameters are updated per real component: the complex array is viewed
as interleaved float pairs so Re and Im get their own accumulators, and
the update consumes dL/dw* directly (the conventional factor of two
lives in the learning rate).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .engine import (
    PhaseGradients,
    SweepStats,
    dense_complex_backward,
    fused_backward_sweep,
    tape_forward,
)
from .mesh import (
    BasicUnit,
    RectangularMesh,
    SweepWorkspace,
    build_mesh,
    forward_sweep,
    load_mesh,
    save_mesh,
)

__all__ = [
    "DivergenceError",
    "RnnConfig",
    "RnnModel",
    "RmsProp",
    "evaluate",
    "load_model",
    "modrelu",
    "modrelu_backward",
    "power_backward",
    "power_forward",
    "rnn_forward",
    "save_model",
    "softmax_cross_entropy",
    "train_step",
]


class DivergenceError(RuntimeError):
    """Raised when training produces non-finite activations or loss."""


# ---------------------------------------------------------------------------
# pointwise pieces
# ---------------------------------------------------------------------------

def modrelu(y, b):
    """Shrink |y| by the (learned, usually negative) bias b, keeping arg(y).

    out = y (|y| + b) / |y| where |y| + b > 0, else 0; y = 0 maps to 0.
    """
    y = np.asarray(y)
    b = np.asarray(b, dtype=float)
    if y.ndim == 2 and b.ndim == 1:
        b = b[:, None]
    r = np.abs(y)
    safe_r = np.where(r > 0.0, r, 1.0)
    scale = np.where((r + b > 0.0) & (r > 0.0), (r + b) / safe_r, 0.0)
    return y * scale


def modrelu_backward(y_saved, b, g_out):
    """Wirtinger pullback of modReLU; returns (g_y, g_b).

    On the active set (|y| + b > 0):
        d(out)/dy  = 1 + b/(2|y|)
        d(out)/dy* = -b y^2 / (2|y|^3)
        g_y = conj(g_out) d(out)/dy* + g_out d(out)/dy
        g_b = 2 Re(g_out y*) / |y|
    Zero on the clipped set and at the |y| + b = 0 boundary.  g_b is
    summed over batch columns when y is a (features, batch) block.
    """
    y = np.asarray(y_saved)
    b = np.asarray(b, dtype=float)
    b_col = b[:, None] if y.ndim == 2 and b.ndim == 1 else b
    g_out = np.asarray(g_out)
    r = np.abs(y)
    active = (r + b_col > 0.0) & (r > 0.0)
    safe_r = np.where(r > 0.0, r, 1.0)
    d_dy = 1.0 + b_col / (2.0 * safe_r)
    d_dyc = -(b_col * y * y) / (2.0 * safe_r**3)
    g_y = np.where(active, np.conj(g_out) * d_dyc + g_out * d_dy, 0.0)
    g_b_elem = np.where(active, 2.0 * (g_out * np.conj(y)).real / safe_r, 0.0)
    if y.ndim == 2 and b.ndim == 1:
        g_b = np.sum(g_b_elem, axis=1)
    else:
        g_b = g_b_elem
    return g_y, g_b


def power_forward(z):
    """Elementwise optical power |z|^2 (real)."""
    z = np.asarray(z)
    return (z * np.conj(z)).real


def power_backward(z_saved, g_p):
    """Pullback of p = |z|^2: dL/dz* = g_p * z for real g_p."""
    return np.asarray(g_p) * np.asarray(z_saved)


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy over batch columns; returns (loss, g_logits, n_correct)."""
    logits = np.asarray(logits, dtype=float)
    labels = np.asarray(labels)
    o, batch = logits.shape
    shifted = logits - logits.max(axis=0, keepdims=True)
    e = np.exp(shifted)
    probs = e / e.sum(axis=0, keepdims=True)
    idx = (labels, np.arange(batch))
    loss = float(-np.mean(np.log(probs[idx] + 1e-300)))
    g = probs.copy()
    g[idx] -= 1.0
    g /= batch
    n_correct = int(np.sum(np.argmax(logits, axis=0) == labels))
    return loss, g, n_correct


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

class RmsProp:
    """Keyed RMSProp with in-place updates.

    Complex parameters and gradients are viewed as interleaved float
    pairs, so every real component carries its own mean-square
    accumulator.  State is keyed by name so it can round-trip through
    checkpoints.
    """

    def __init__(self, decay: float = 0.99, eps: float = 1e-8) -> None:
        self.decay = float(decay)
        self.eps = float(eps)
        self.state: dict[str, np.ndarray] = {}

    def update(self, key: str, param: np.ndarray, grad: np.ndarray, lr: float) -> None:
        if np.iscomplexobj(param):
            # view, not copy: the float-pair update must hit the param in place
            p = param.view(np.float64)
            g = np.ascontiguousarray(grad).view(np.float64)
        else:
            p = param
            g = np.asarray(grad, dtype=float)
        if p.shape != g.shape:
            raise ValueError(f"{key}: gradient shape {g.shape} != param {p.shape}")
        v = self.state.get(key)
        if v is None:
            v = np.zeros_like(p)
            self.state[key] = v
        v *= self.decay
        v += (1.0 - self.decay) * g * g
        p -= lr * g / (np.sqrt(v) + self.eps)


# ---------------------------------------------------------------------------
# model
# ---------------------------------------------------------------------------

@dataclass
class RnnConfig:
    hidden_size: int = 64
    output_size: int = 10
    fine_layers: int = 4
    basic_unit: BasicUnit = BasicUnit.PSDC
    with_diag: bool = True
    eta_in: float = 1e-4
    eta_out: float = 1e-2
    eta_hidden: float = 1e-4
    eta_act: float = 1e-5
    batch_size: int = 100
    epochs: int = 5
    seed: int = 0
    rms_decay: float = 0.99
    rms_eps: float = 1e-8

    def __post_init__(self) -> None:
        if self.hidden_size < 2:
            raise ValueError("hidden_size must be >= 2")
        if self.output_size < 2:
            raise ValueError("output_size must be >= 2")
        if self.fine_layers < 1:
            raise ValueError("fine_layers must be >= 1")
        for name in ("eta_in", "eta_out", "eta_hidden", "eta_act"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if isinstance(self.basic_unit, str):
            self.basic_unit = BasicUnit(self.basic_unit)


@dataclass(eq=False)
class RnnModel:
    config: RnnConfig
    mesh: RectangularMesh
    w_in: np.ndarray  # (H, 1) complex
    b_in: np.ndarray  # (H, 1) complex
    w_out: np.ndarray  # (O, H) complex
    b_out: np.ndarray  # (O, 1) complex
    b_act: np.ndarray  # (H,) real
    opt: RmsProp

    @classmethod
    def build(cls, config: RnnConfig) -> "RnnModel":
        ss = np.random.SeedSequence(config.seed)
        mesh_seed, dense_seed = (int(s.generate_state(1)[0]) for s in ss.spawn(2))
        h, o = config.hidden_size, config.output_size
        mesh = build_mesh(
            h,
            config.fine_layers,
            basic_unit=config.basic_unit,
            with_diag=config.with_diag,
            init="uniform",
            seed=mesh_seed,
        )
        rng = np.random.default_rng(dense_seed)

        def cgauss(shape, fan_in):
            s = 1.0 / math.sqrt(fan_in)
            return s * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))

        return cls(
            config=config,
            mesh=mesh,
            w_in=cgauss((h, 1), 1),
            b_in=np.zeros((h, 1), dtype=complex),
            w_out=cgauss((o, h), h),
            b_out=np.zeros((o, 1), dtype=complex),
            b_act=np.zeros(h),
            opt=RmsProp(config.rms_decay, config.rms_eps),
        )


@dataclass(eq=False)
class EpisodeTrace:
    """Everything backward-through-time needs from one forward pass."""

    mesh_acts: np.ndarray  # (T, depth, H, B) per-timestep sweep stacks
    pre: np.ndarray  # (T, H, B) pre-activations y(t)
    h_last: np.ndarray  # (H, B)
    z: np.ndarray  # (O, B)
    pixels: np.ndarray  # (T, B) input referenced by backward

    @classmethod
    def allocate(cls, model: RnnModel, steps: int, batch: int) -> "EpisodeTrace":
        h = model.config.hidden_size
        o = model.config.output_size
        return cls(
            mesh_acts=np.empty((steps, model.mesh.depth, h, batch), dtype=complex),
            pre=np.empty((steps, h, batch), dtype=complex),
            h_last=np.empty((h, batch), dtype=complex),
            z=np.empty((o, batch), dtype=complex),
            pixels=np.empty((steps, batch)),
        )


def rnn_forward(
    model: RnnModel,
    pixels: np.ndarray,
    trace: EpisodeTrace | None = None,
    stats: SweepStats | None = None,
):
    """Run a (T, batch) pixel block through the recurrence.

    Returns (logits, trace); pass a preallocated `trace` to retain the
    activations BPTT needs, or None for inference (a small rolling
    workspace is used instead).  Raises DivergenceError on non-finite
    logits.
    """
    pixels = np.asarray(pixels, dtype=float)
    steps, batch = pixels.shape
    h_size = model.config.hidden_size
    if trace is not None:
        trace.pixels[...] = pixels
    rolling = None if trace is not None else SweepWorkspace.for_mesh(model.mesh, batch)
    h = np.zeros((h_size, batch), dtype=complex)
    for t in range(steps):
        acts = trace.mesh_acts[t] if trace is not None else rolling.activations
        forward_sweep(model.mesh, h, out=acts, stats=stats)
        y = acts[-1] + model.w_in * pixels[t][None, :] + model.b_in
        if trace is not None:
            trace.pre[t] = y
        h = modrelu(y, model.b_act)
    z = model.w_out @ h + model.b_out
    logits = power_forward(z)
    if trace is not None:
        trace.h_last[...] = h
        trace.z[...] = z
    if not np.all(np.isfinite(logits)):
        raise DivergenceError("non-finite logits in forward pass")
    return logits, trace


@dataclass(eq=False)
class RnnGradients:
    w_in: np.ndarray
    b_in: np.ndarray
    w_out: np.ndarray
    b_out: np.ndarray
    b_act: np.ndarray
    mesh: PhaseGradients


def rnn_backward(
    model: RnnModel,
    trace: EpisodeTrace,
    g_logits: np.ndarray,
    hidden_path: str = "fused",
    stats: SweepStats | None = None,
) -> RnnGradients:
    """Full BPTT from the logits cotangent (real, = dL/dp)."""
    mesh = model.mesh
    steps = trace.pre.shape[0]
    g_z = power_backward(trace.z, g_logits)
    g_h, g_w_out = dense_complex_backward(model.w_out, trace.h_last, g_z)
    g_b_out = np.sum(g_z, axis=1, keepdims=True)
    h_size, batch = g_h.shape
    g_w_in = np.zeros_like(model.w_in)
    g_b_in = np.zeros_like(model.b_in)
    g_b_act = np.zeros_like(model.b_act)
    mesh_grads = PhaseGradients.zeros_for(mesh)
    g_buf = np.empty((h_size, batch), dtype=complex)
    for t in range(steps - 1, -1, -1):
        g_y, g_b = modrelu_backward(trace.pre[t], model.b_act, g_h)
        g_b_act += g_b
        # input pixels are real, so x* = x
        g_w_in += np.sum(g_y * trace.pixels[t][None, :], axis=1, keepdims=True)
        g_b_in += np.sum(g_y, axis=1, keepdims=True)
        if hidden_path == "fused":
            g_h, _ = fused_backward_sweep(
                mesh, trace.mesh_acts[t], g_y, grads=mesh_grads, g_buf=g_buf, stats=stats
            )
        else:
            run = tape_forward(mesh, trace.mesh_acts[t][0], stats=stats)
            g_h, _ = run.backward(g_y, grads=mesh_grads)
    return RnnGradients(g_w_in, g_b_in, g_w_out, g_b_out, g_b_act, mesh_grads)


def apply_updates(model: RnnModel, grads: RnnGradients) -> None:
    cfg = model.config
    opt = model.opt
    opt.update("w_in", model.w_in, grads.w_in, cfg.eta_in)
    opt.update("b_in", model.b_in, grads.b_in, cfg.eta_in)
    opt.update("w_out", model.w_out, grads.w_out, cfg.eta_out)
    opt.update("b_out", model.b_out, grads.b_out, cfg.eta_out)
    opt.update("b_act", model.b_act, grads.b_act, cfg.eta_act)
    for j, (arr, g) in enumerate(zip(model.mesh.phase_arrays(), grads.mesh.arrays())):
        opt.update(f"mesh{j}", arr, g, cfg.eta_hidden)


def train_step(
    model: RnnModel,
    pixels: np.ndarray,
    labels: np.ndarray,
    trace: EpisodeTrace | None = None,
    hidden_path: str = "fused",
    stats: SweepStats | None = None,
) -> tuple[float, int]:
    """One batch: forward, softmax cross-entropy, BPTT, RMSProp updates.

    Returns (loss, n_correct).  `trace` may be reused across calls of the
    same shape to avoid reallocation.
    """
    steps, batch = np.asarray(pixels).shape
    if trace is None:
        trace = EpisodeTrace.allocate(model, steps, batch)
    logits, _ = rnn_forward(model, pixels, trace=trace, stats=stats)
    loss, g_logits, n_correct = softmax_cross_entropy(logits, labels)
    if not math.isfinite(loss):
        raise DivergenceError(f"non-finite loss {loss!r}")
    grads = rnn_backward(model, trace, g_logits, hidden_path=hidden_path, stats=stats)
    apply_updates(model, grads)
    return loss, n_correct


def evaluate(
    model: RnnModel, sequences: np.ndarray, labels: np.ndarray, batch_size: int = 100
) -> tuple[float, float]:
    """Forward-only mean loss and accuracy over all columns of (T, N)."""
    steps, total = sequences.shape
    loss_sum = 0.0
    correct = 0
    for start in range(0, total, batch_size):
        sl = slice(start, min(start + batch_size, total))
        logits, _ = rnn_forward(model, sequences[:, sl])
        loss, _, n_c = softmax_cross_entropy(logits, labels[sl])
        loss_sum += loss * (sl.stop - sl.start)
        correct += n_c
    return loss_sum / total, correct / total


# ---------------------------------------------------------------------------
# model checkpoints
# ---------------------------------------------------------------------------
#
#   rnn-model v1
#   hidden H output O fine_layers L basic_unit BU with_diag D
#   <mesh checkpoint block, own header + L(+1) lines>
#   param <name> <d0>[,d1] <comma-separated floats, complex as re/im pairs>
#   state <key> <dims> <floats>            (RMSProp accumulators)

def _fmt_array(a: np.ndarray) -> str:
    flat = a.ravel()
    if np.iscomplexobj(flat):
        parts = []
        for v in flat:
            parts.append(f"{v.real:.17g}")
            parts.append(f"{v.imag:.17g}")
        return ",".join(parts)
    return ",".join(f"{v:.17g}" for v in flat)


def _parse_array(text: str, shape: tuple[int, ...], complex_: bool) -> np.ndarray:
    vals = np.array([float(t) for t in text.split(",")]) if text else np.empty(0)
    if complex_:
        vals = vals[0::2] + 1j * vals[1::2]
    return vals.reshape(shape)


def save_model(model: RnnModel, path_or_file) -> None:
    own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
    f = open(path_or_file, "w") if own else path_or_file
    cfg = model.config
    try:
        f.write("rnn-model v1\n")
        f.write(
            f"hidden {cfg.hidden_size} output {cfg.output_size} "
            f"fine_layers {cfg.fine_layers} basic_unit {cfg.basic_unit.value} "
            f"with_diag {1 if cfg.with_diag else 0}\n"
        )
        save_mesh(model.mesh, f)
        for name in ("w_in", "b_in", "w_out", "b_out", "b_act"):
            a = getattr(model, name)
            dims = "x".join(str(d) for d in a.shape)
            kind = "c" if np.iscomplexobj(a) else "r"
            f.write(f"param {name} {kind} {dims} {_fmt_array(a)}\n")
        for key in sorted(model.opt.state):
            v = model.opt.state[key]
            dims = "x".join(str(d) for d in v.shape)
            f.write(f"state {key} {dims} {_fmt_array(v)}\n")
    finally:
        if own:
            f.close()


def load_model(path_or_file, config: RnnConfig | None = None) -> RnnModel:
    """Rebuild a model (and its optimizer state) from a checkpoint.

    `config` supplies training hyperparameters not stored in the file
    (learning rates, batch size, ...); structural fields are taken from
    the checkpoint and must agree with `config` when both are given.
    """
    own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
    f = open(path_or_file, "r") if own else path_or_file
    try:
        magic = f.readline().strip()
        if magic != "rnn-model v1":
            raise ValueError(f"not an rnn-model checkpoint: {magic!r}")
        toks = f.readline().split()
        head = dict(zip(toks[0::2], toks[1::2]))
        h, o = int(head["hidden"]), int(head["output"])
        fl = int(head["fine_layers"])
        bu = BasicUnit(head["basic_unit"])
        wd = head["with_diag"] == "1"
        if config is None:
            config = RnnConfig(
                hidden_size=h, output_size=o, fine_layers=fl, basic_unit=bu, with_diag=wd
            )
        else:
            stored = (h, o, fl, bu, wd)
            given = (
                config.hidden_size,
                config.output_size,
                config.fine_layers,
                config.basic_unit,
                config.with_diag,
            )
            if stored != given:
                raise ValueError(f"checkpoint structure {stored} != config {given}")
        mesh = load_mesh(f)
        params: dict[str, np.ndarray] = {}
        opt = RmsProp(config.rms_decay, config.rms_eps)
        for line in f:
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("param "):
                _, name, kind, dims, payload = line.split(" ", 4)
                shape = tuple(int(d) for d in dims.split("x"))
                params[name] = _parse_array(payload, shape, kind == "c")
            elif line.startswith("state "):
                _, key, dims, payload = line.split(" ", 3)
                shape = tuple(int(d) for d in dims.split("x"))
                opt.state[key] = _parse_array(payload, shape, False)
            else:
                raise ValueError(f"unrecognized checkpoint line: {line!r}")
        missing = {"w_in", "b_in", "w_out", "b_out", "b_act"} - params.keys()
        if missing:
            raise ValueError(f"checkpoint missing parameters: {sorted(missing)}")
        return RnnModel(
            config=config,
            mesh=mesh,
            w_in=params["w_in"],
            b_in=params["b_in"],
            w_out=params["w_out"],
            b_out=params["b_out"],
            b_act=params["b_act"],
            opt=opt,
        )
    finally:
        if own:
            f.close()
