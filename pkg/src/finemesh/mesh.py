"""Rectangular fine-layered meshes over n ports.

A mesh is a stack of *fine layers*: each fine layer applies one basic
unit (one shifter + one coupler) to every pair of a fixed brick pattern.
A-layers pair ports (1,2),(3,4),...; B-layers pair (2,3),(4,5),...; the
four-layer cycle A_PHI, A_THETA, B_PHI, B_THETA makes two consecutive
A (or B) layers act as full two-phase interferometers on their pairs.
An optional trained phase diagonal sits on the output side.

Dense materialization (`layer_to_matrix` / `mesh_to_matrix`) and the
sweep (`forward_sweep`) are two independent routes to the same linear
map; the tests hold them against each other.
"""
from __future__ import annotations

import enum
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .primitives import canonical_phase, dc_matrix, ps_matrix
from .units import dcps_forward, diag_forward, psdc_forward

__all__ = [
    "BasicUnit",
    "FineLayer",
    "LayerKind",
    "RectangularMesh",
    "SweepWorkspace",
    "a_pairs",
    "b_pairs",
    "build_mesh",
    "forward_sweep",
    "layer_to_matrix",
    "load_mesh",
    "mesh_to_matrix",
    "save_mesh",
]


class BasicUnit(enum.Enum):
    PSDC = "psdc"  # shifter feeds the coupler; sweeps save layer inputs
    DCPS = "dcps"  # coupler feeds the shifter; sweeps save layer outputs


class LayerKind(enum.Enum):
    A_PHI = "A_PHI"
    A_THETA = "A_THETA"
    B_PHI = "B_PHI"
    B_THETA = "B_THETA"
    DIAG = "DIAG"


_CYCLE = (LayerKind.A_PHI, LayerKind.A_THETA, LayerKind.B_PHI, LayerKind.B_THETA)


def a_pairs(n: int) -> tuple[tuple[int, int], ...]:
    """1-based A-pattern pairs (1,2),(3,4),...; port n idles when n is odd."""
    return tuple((p, p + 1) for p in range(1, n, 2))


def b_pairs(n: int) -> tuple[tuple[int, int], ...]:
    """1-based B-pattern pairs (2,3),(4,5),...; port 1 (and n for even n) idles."""
    return tuple((p, p + 1) for p in range(2, n, 2))


@dataclass(eq=False)
class FineLayer:
    """One brick-pattern layer: a basic unit on each pair, or a DIAG."""

    kind: LayerKind
    basic_unit: BasicUnit
    pairs: tuple[tuple[int, int], ...]
    phases: np.ndarray  # (len(pairs),), or (n,) for DIAG

    # 0-based gather indices, derived once from `pairs`
    idx_p: np.ndarray = field(init=False, repr=False)
    idx_q: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.phases = np.asarray(self.phases, dtype=float)
        if not np.all(np.isfinite(self.phases)):
            raise ValueError(f"non-finite phase in {self.kind.value} layer")
        if self.kind is not LayerKind.DIAG:
            if self.phases.shape != (len(self.pairs),):
                raise ValueError(
                    f"{self.kind.value} layer expects {len(self.pairs)} phases, "
                    f"got {self.phases.shape}"
                )
            seen = [r for pq in self.pairs for r in pq]
            if len(set(seen)) != len(seen):
                raise ValueError("pairs must be disjoint")
        self.idx_p = np.array([p - 1 for p, _ in self.pairs], dtype=np.intp)
        self.idx_q = np.array([q - 1 for _, q in self.pairs], dtype=np.intp)


@dataclass(eq=False)
class RectangularMesh:
    """n ports, a list of fine layers, and an optional output diagonal."""

    n: int
    basic_unit: BasicUnit
    layers: list[FineLayer]
    diag: FineLayer | None = None

    @property
    def with_diag(self) -> bool:
        return self.diag is not None

    @property
    def depth(self) -> int:
        """Number of activation slots a sweep uses (input + one per layer)."""
        return len(self.layers) + 1 + (1 if self.diag is not None else 0)

    def phase_arrays(self) -> list[np.ndarray]:
        """Live phase arrays in canonical order: fine layers first, diag last."""
        out = [layer.phases for layer in self.layers]
        if self.diag is not None:
            out.append(self.diag.phases)
        return out

    @property
    def num_phases(self) -> int:
        return sum(a.size for a in self.phase_arrays())


def _layer_kind(index: int) -> LayerKind:
    return _CYCLE[index % 4]


def _pairs_for(kind: LayerKind, n: int) -> tuple[tuple[int, int], ...]:
    return a_pairs(n) if kind in (LayerKind.A_PHI, LayerKind.A_THETA) else b_pairs(n)


def build_mesh(
    n: int,
    fine_layers: int,
    basic_unit: BasicUnit = BasicUnit.PSDC,
    with_diag: bool = False,
    init: str = "uniform",
    seed: int = 0,
    phases: list[np.ndarray] | None = None,
) -> RectangularMesh:
    """Build an n-port mesh with `fine_layers` brick layers.

    `init` is "uniform" (phases drawn from U[-pi, pi) with `seed`) or
    "zeros"; explicit `phases` (one array per layer, diag last when
    present) override `init`.
    """
    if n < 2:
        raise ValueError(f"need at least 2 ports, got n={n}")
    if fine_layers < 1:
        raise ValueError(f"need at least one fine layer, got {fine_layers}")
    if init not in ("uniform", "zeros"):
        raise ValueError(f"unknown init {init!r}")
    expected = fine_layers + (1 if with_diag else 0)
    if phases is not None and len(phases) != expected:
        raise ValueError(f"expected {expected} phase arrays, got {len(phases)}")
    rng = np.random.default_rng(seed)

    def draw(size: int) -> np.ndarray:
        if init == "uniform":
            return rng.uniform(-math.pi, math.pi, size)
        return np.zeros(size)

    layers = []
    for j in range(fine_layers):
        kind = _layer_kind(j)
        pairs = _pairs_for(kind, n)
        layers.append(FineLayer(kind, basic_unit, pairs, draw(len(pairs))
                                if phases is None else phases[j]))
    diag = None
    if with_diag:
        diag_phases = draw(n) if phases is None else phases[fine_layers]
        diag = FineLayer(LayerKind.DIAG, basic_unit, (), diag_phases)
    return RectangularMesh(n, basic_unit, layers, diag)


# ---------------------------------------------------------------------------
# dense materialization
# ---------------------------------------------------------------------------

def layer_to_matrix(layer: FineLayer, n: int) -> np.ndarray:
    """Dense n x n unitary of one fine layer, built from PS/DC factors."""
    if layer.kind is LayerKind.DIAG:
        if layer.phases.shape != (n,):
            raise ValueError(f"DIAG layer expects {n} phases, got {layer.phases.shape}")
        return np.diag(np.exp(1j * layer.phases))
    out = np.eye(n, dtype=complex)
    dc = dc_matrix()
    for (p, q), phi in zip(layer.pairs, layer.phases):
        if layer.basic_unit is BasicUnit.PSDC:
            block = dc @ ps_matrix(phi)
        else:
            block = ps_matrix(phi) @ dc
        out[p - 1, p - 1] = block[0, 0]
        out[p - 1, q - 1] = block[0, 1]
        out[q - 1, p - 1] = block[1, 0]
        out[q - 1, q - 1] = block[1, 1]
    return out


def mesh_to_matrix(mesh: RectangularMesh) -> np.ndarray:
    """Dense unitary of the whole mesh: layer products, diag last."""
    out = np.eye(mesh.n, dtype=complex)
    for layer in mesh.layers:
        out = layer_to_matrix(layer, mesh.n) @ out
    if mesh.diag is not None:
        out = layer_to_matrix(mesh.diag, mesh.n) @ out
    return out


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class SweepWorkspace:
    """Preallocated buffers for copy-free sweeps at a fixed batch size."""

    activations: np.ndarray  # (depth, n, batch)
    cotangent: np.ndarray  # (n, batch)

    @classmethod
    def for_mesh(cls, mesh: RectangularMesh, batch: int) -> "SweepWorkspace":
        return cls(
            activations=np.empty((mesh.depth, mesh.n, batch), dtype=complex),
            cotangent=np.empty((mesh.n, batch), dtype=complex),
        )


def apply_layer_forward(layer: FineLayer, src: np.ndarray, dst: np.ndarray) -> None:
    """Apply one fine layer, reading `src` and writing `dst` (distinct buffers)."""
    if layer.kind is LayerKind.DIAG:
        np.multiply(np.exp(1j * layer.phases)[:, None], src, out=dst)
        return
    dst[...] = src  # idle ports pass through
    if not layer.pairs:
        return
    x1 = src[layer.idx_p]
    x2 = src[layer.idx_q]
    phi = layer.phases[:, None]
    if layer.basic_unit is BasicUnit.PSDC:
        y1, y2 = psdc_forward(phi, x1, x2)
    else:
        y1, y2 = dcps_forward(phi, x1, x2)
    dst[layer.idx_p] = y1
    dst[layer.idx_q] = y2


def forward_sweep(
    mesh: RectangularMesh,
    x: np.ndarray,
    out: np.ndarray | None = None,
    stats=None,
) -> np.ndarray:
    """Run x (shape (n, batch)) through the mesh layer by layer.

    Returns the activation stack, shape (depth, n, batch): slot 0 is a
    copy of x, slot j+1 the output of layer j, the last slot the mesh
    output.  Pass `out` (e.g. `SweepWorkspace.activations`) to reuse a
    buffer; no per-call allocation happens then.
    """
    t0 = None if stats is None else time.perf_counter_ns()
    x = np.asarray(x)
    if x.ndim != 2 or x.shape[0] != mesh.n:
        raise ValueError(f"expected input of shape ({mesh.n}, batch), got {x.shape}")
    depth = mesh.depth
    if out is None:
        out = np.empty((depth, mesh.n, x.shape[1]), dtype=complex)
    elif out.shape != (depth, mesh.n, x.shape[1]):
        raise ValueError(
            f"workspace shape {out.shape} does not match (depth, n, batch) = "
            f"({depth}, {mesh.n}, {x.shape[1]})"
        )
    out[0] = x
    for j, layer in enumerate(mesh.layers):
        apply_layer_forward(layer, out[j], out[j + 1])
    if mesh.diag is not None:
        apply_layer_forward(mesh.diag, out[depth - 2], out[depth - 1])
    if stats is not None:
        stats.forward_ns += time.perf_counter_ns() - t0
        stats.sweeps += 1
    return out


# ---------------------------------------------------------------------------
# checkpoint text format
# ---------------------------------------------------------------------------
#
#   n L basic_unit with_diag
#   <index> <kind> <phi_1>,...,<phi_k>        (one line per fine layer)
#   <L> DIAG <delta_1>,...,<delta_n>          (only when with_diag)
#
# Phases are canonicalized into [-pi, pi) and printed with 17 significant
# digits, which round-trips float64 exactly.

def _fmt_phases(phases: np.ndarray) -> str:
    return ",".join(f"{canonical_phase(p):.17g}" for p in phases)


def save_mesh(mesh: RectangularMesh, path_or_file) -> None:
    own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
    f = open(path_or_file, "w") if own else path_or_file
    try:
        f.write(f"{mesh.n} {len(mesh.layers)} {mesh.basic_unit.value} "
                f"{1 if mesh.diag is not None else 0}\n")
        for j, layer in enumerate(mesh.layers):
            f.write(f"{j} {layer.kind.value} {_fmt_phases(layer.phases)}\n")
        if mesh.diag is not None:
            f.write(f"{len(mesh.layers)} DIAG {_fmt_phases(mesh.diag.phases)}\n")
    finally:
        if own:
            f.close()


class MeshFormatError(ValueError):
    """Raised for malformed or truncated mesh checkpoints."""


def _parse_phases(text: str, expected: int, where: str) -> np.ndarray:
    items = [t for t in text.split(",") if t] if text else []
    if len(items) != expected:
        raise MeshFormatError(f"{where}: expected {expected} phases, got {len(items)}")
    try:
        return np.array([float(t) for t in items])
    except ValueError as e:
        raise MeshFormatError(f"{where}: {e}") from None


def load_mesh(path_or_file) -> RectangularMesh:
    own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
    f = open(path_or_file, "r") if own else path_or_file
    try:
        return _load_mesh(f)
    finally:
        if own:
            f.close()


def _load_mesh(f) -> RectangularMesh:
    header = f.readline().split()
    if len(header) != 4:
        raise MeshFormatError(f"bad mesh header: {header!r}")
    try:
        n, num_layers = int(header[0]), int(header[1])
        basic_unit = BasicUnit(header[2])
        with_diag = {"0": False, "1": True}[header[3]]
    except (ValueError, KeyError) as e:
        raise MeshFormatError(f"bad mesh header: {e}") from None
    layers = []
    for j in range(num_layers):
        line = f.readline()
        if not line:
            raise MeshFormatError(f"truncated: missing layer {j}")
        parts = line.rstrip("\n").split(" ", 2)
        if len(parts) < 2 or parts[0] != str(j):
            raise MeshFormatError(f"layer {j}: malformed line {line!r}")
        try:
            kind = LayerKind(parts[1])
        except ValueError:
            raise MeshFormatError(f"layer {j}: unknown kind {parts[1]!r}") from None
        if kind != _layer_kind(j):
            raise MeshFormatError(f"layer {j}: kind {kind.value} breaks the layer cycle")
        pairs = _pairs_for(kind, n)
        phases = _parse_phases(parts[2] if len(parts) > 2 else "", len(pairs), f"layer {j}")
        layers.append(FineLayer(kind, basic_unit, pairs, phases))
    diag = None
    if with_diag:
        line = f.readline()
        if not line:
            raise MeshFormatError("truncated: missing DIAG line")
        parts = line.rstrip("\n").split(" ", 2)
        if len(parts) != 3 or parts[1] != "DIAG":
            raise MeshFormatError(f"malformed DIAG line {line!r}")
        diag = FineLayer(LayerKind.DIAG, basic_unit, (),
                         _parse_phases(parts[2], n, "diag"))
    return RectangularMesh(n, basic_unit, layers, diag)
