"""Dual-path reverse-mode differentiation for meshes and dense complex layers.

Two independent gradient routes:

* the *fused* path walks a mesh's layers collectively, applying each
  basic unit's closed-form conjugate-transpose pullback and Im(.) phase
  readout in one vectorized step per layer;
* the *tape* path records every elementary complex scalar operation of
  the same computation and replays the graph in reverse, one node at a
  time.

Both store cotangents as dL/dz* for a real loss L; real parameters
(phases) get ordinary partials.  A central finite-difference oracle
(`finite_difference_gradient`) cross-checks either path from function
values alone.

Determinism: batch reductions always run as a single np.sum over the
trailing batch axis, and the tape replays in strict reverse recording
order, so identical inputs give bit-identical gradients.
"""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .mesh import BasicUnit, RectangularMesh
from .units import (
    dcps_backward,
    dcps_forward,
    diag_backward,
    diag_forward,
    psdc_backward,
    psdc_forward,
)

__all__ = [
    "ElementaryTape",
    "PhaseGradients",
    "SweepStats",
    "TapeRun",
    "apply_phase_step",
    "dcps_backward",
    "dcps_forward",
    "dense_complex_backward",
    "diag_backward",
    "diag_forward",
    "finite_difference_gradient",
    "fused_backward_sweep",
    "psdc_backward",
    "psdc_forward",
    "tape_forward",
    "tape_forward_backward",
]

SQRT1_2 = 2.0 ** -0.5


@dataclass(eq=False)
class SweepStats:
    """Nanosecond counters one differentiation path accumulates."""

    forward_ns: int = 0
    backward_ns: int = 0
    sweeps: int = 0

    def reset(self) -> None:
        self.forward_ns = self.backward_ns = self.sweeps = 0


@dataclass(eq=False)
class PhaseGradients:
    """dL/dphi arrays aligned with a mesh's layout: fine layers, then diag."""

    layers: list[np.ndarray]
    diag: np.ndarray | None = None

    @classmethod
    def zeros_for(cls, mesh: RectangularMesh) -> "PhaseGradients":
        return cls(
            layers=[np.zeros_like(layer.phases) for layer in mesh.layers],
            diag=None if mesh.diag is None else np.zeros_like(mesh.diag.phases),
        )

    def arrays(self) -> list[np.ndarray]:
        return self.layers + ([self.diag] if self.diag is not None else [])

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()] or [np.empty(0)])

    def copy(self) -> "PhaseGradients":
        return PhaseGradients(
            [a.copy() for a in self.layers],
            None if self.diag is None else self.diag.copy(),
        )


def apply_phase_step(mesh: RectangularMesh, grads: PhaseGradients, eta: float) -> None:
    """In-place gradient-descent step phi <- phi - eta * dL/dphi."""
    for arr, g in zip(mesh.phase_arrays(), grads.arrays()):
        arr -= eta * g


# ---------------------------------------------------------------------------
# fused path
# ---------------------------------------------------------------------------

def fused_backward_sweep(
    mesh: RectangularMesh,
    activations: np.ndarray,
    g_out: np.ndarray,
    grads: PhaseGradients | None = None,
    g_buf: np.ndarray | None = None,
    stats: SweepStats | None = None,
) -> tuple[np.ndarray, PhaseGradients]:
    """Pull dL/dy* back through the whole mesh in one collective sweep.

    `activations` is the stack a forward_sweep produced for this mesh
    (shape (depth, n, batch)); `g_out` is the output cotangent (n, batch).
    Phase gradients are summed over batch columns (single np.sum on the
    batch axis, fixed order) and accumulated into `grads` when given —
    callers running truncated-unroll loops pass the same accumulator for
    every timestep.  Returns (g_in, grads); g_in aliases `g_buf` when
    that is supplied and is only valid until the buffer's next use.
    """
    t0 = None if stats is None else time.perf_counter_ns()
    g_out = np.asarray(g_out)
    if (
        g_out.ndim != 2
        or g_out.shape[0] != mesh.n
        or activations.shape != (mesh.depth, mesh.n, g_out.shape[1])
    ):
        raise ValueError(
            f"activation stack {activations.shape} / cotangent {g_out.shape} do not "
            f"match this mesh (depth {mesh.depth}, n {mesh.n}); the stack must come "
            f"from a forward sweep of the same mesh and batch"
        )
    if grads is None:
        grads = PhaseGradients.zeros_for(mesh)
    if g_buf is None:
        g_buf = np.empty_like(g_out, dtype=complex)
    g = g_buf
    g[...] = g_out

    k = mesh.depth - 1
    if mesh.diag is not None:
        gx, ddelta = diag_backward(mesh.diag.phases[:, None], activations[k], g)
        grads.diag += np.sum(ddelta, axis=1)
        g[...] = gx
        k -= 1
    for j in range(len(mesh.layers) - 1, -1, -1):
        layer = mesh.layers[j]
        if not layer.pairs:  # idle layer: cotangent passes straight through
            continue
        gy1 = g[layer.idx_p]
        gy2 = g[layer.idx_q]
        phi = layer.phases[:, None]
        if layer.basic_unit is BasicUnit.PSDC:
            x1 = activations[j][layer.idx_p]  # saved inputs
            gx1, gx2, dphi = psdc_backward(phi, x1, gy1, gy2)
        else:
            y1 = activations[j + 1][layer.idx_p]  # saved outputs
            gx1, gx2, dphi = dcps_backward(phi, y1, gy1, gy2)
        grads.layers[j] += np.sum(dphi, axis=1)
        g[layer.idx_p] = gx1
        g[layer.idx_q] = gx2
    if stats is not None:
        stats.backward_ns += time.perf_counter_ns() - t0
    return g, grads


# ---------------------------------------------------------------------------
# dense complex layers
# ---------------------------------------------------------------------------

def dense_complex_backward(
    w: np.ndarray, x_saved: np.ndarray, gy: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Backward of y = W x for complex W (o, h), x (h, batch), gy (o, batch).

    gx = W^H gy;  gW = gy x^H (batch columns summed by the product).
    With real W and real signals this reduces to the familiar transpose
    rules.
    """
    w = np.asarray(w)
    x_saved = np.asarray(x_saved)
    gy = np.asarray(gy)
    if w.ndim != 2 or x_saved.ndim != 2 or gy.ndim != 2:
        raise ValueError("dense backward expects 2-D W, x, gy")
    if gy.shape != (w.shape[0], x_saved.shape[1]) or x_saved.shape[0] != w.shape[1]:
        raise ValueError(
            f"shape mismatch: W {w.shape}, x {x_saved.shape}, gy {gy.shape}"
        )
    gx = w.conj().T @ gy
    gw = gy @ x_saved.conj().T
    return gx, gw


# ---------------------------------------------------------------------------
# finite-difference oracle
# ---------------------------------------------------------------------------

def finite_difference_gradient(
    loss_fn: Callable[[RectangularMesh], float],
    mesh: RectangularMesh,
    step: float = 1e-6,
) -> PhaseGradients:
    """Central differences of a real loss over every mesh phase.

    Perturbs each phase in place (restoring it afterwards); a non-finite
    loss simply propagates into the returned gradients.
    """
    grads = PhaseGradients.zeros_for(mesh)
    for arr, garr in zip(mesh.phase_arrays(), grads.arrays()):
        for i in range(arr.size):
            orig = arr[i]
            arr[i] = orig + step
            lp = float(loss_fn(mesh))
            arr[i] = orig - step
            lm = float(loss_fn(mesh))
            arr[i] = orig
            garr[i] = (lp - lm) / (2.0 * step)
    return grads


# ---------------------------------------------------------------------------
# elementary-operation tape
# ---------------------------------------------------------------------------

_LEAF, _PHASE, _ADD, _MUL, _CMUL, _CONJ, _EXPI = range(7)


class ElementaryTape:
    """Recorded graph of elementary complex scalar operations.

    Ops: add, mul, multiply-by-constant, conj, and e^{i phi} of a real
    phase leaf.  Node values may be scalars or 1-D arrays sharing one
    batch length — the recorded graph is the per-scalar formula either
    way.  `backward` seeds output cotangents (dL/dz*) and visits every
    node exactly once in reverse recording order; a cotangent reaching a
    scalar node from an array-valued consumer is reduced with one
    np.sum, and EXPI deposits the real partial 2 Im(y* gy) on its phase
    leaf.
    """

    def __init__(self) -> None:
        self._op: list[int] = []
        self._a: list[int] = []
        self._b: list[int] = []
        self._val: list = []
        self._const: list = []

    def _push(self, op: int, a: int, b: int, val, const=None) -> int:
        self._op.append(op)
        self._a.append(a)
        self._b.append(b)
        self._val.append(val)
        self._const.append(const)
        return len(self._op) - 1

    # -- recording ---------------------------------------------------------
    def input(self, value) -> int:
        """Complex input leaf (scalar or (batch,) array)."""
        return self._push(_LEAF, -1, -1, np.asarray(value, dtype=complex))

    def phase(self, value: float) -> int:
        """Real parameter leaf feeding EXPI nodes."""
        return self._push(_PHASE, -1, -1, float(value))

    def add(self, i: int, j: int) -> int:
        return self._push(_ADD, i, j, self._val[i] + self._val[j])

    def mul(self, i: int, j: int) -> int:
        return self._push(_MUL, i, j, self._val[i] * self._val[j])

    def cmul(self, c: complex, i: int) -> int:
        """Multiply node i by the constant c (not differentiated w.r.t. c)."""
        return self._push(_CMUL, i, -1, c * self._val[i], complex(c))

    def conj(self, i: int) -> int:
        return self._push(_CONJ, i, -1, np.conj(self._val[i]))

    def expi(self, i_phase: int) -> int:
        if self._op[i_phase] != _PHASE:
            raise ValueError("expi expects a phase leaf")
        return self._push(_EXPI, i_phase, -1, np.exp(1j * self._val[i_phase]))

    # -- inspection ---------------------------------------------------------
    def value(self, i: int):
        return self._val[i]

    @property
    def num_nodes(self) -> int:
        return len(self._op)

    @property
    def num_ops(self) -> int:
        """Operation nodes only (leaves excluded)."""
        return sum(1 for op in self._op if op not in (_LEAF, _PHASE))

    # -- replay -------------------------------------------------------------
    def backward(self, seeds: dict[int, np.ndarray]) -> list:
        """Reverse sweep; returns per-node cotangents (None where unreached)."""
        op, a, b, val, const = self._op, self._a, self._b, self._val, self._const
        g: list = [None] * len(op)

        def acc(j: int, inc) -> None:
            tv = val[j]
            if (not isinstance(tv, np.ndarray) or tv.ndim == 0) and getattr(inc, "ndim", 0):
                inc = np.sum(inc)
            g[j] = inc if g[j] is None else g[j] + inc

        for i, seed in seeds.items():
            acc(i, np.asarray(seed, dtype=complex))
        for i in range(len(op) - 1, -1, -1):
            gi = g[i]
            if gi is None:
                continue
            o = op[i]
            if o == _ADD:
                acc(a[i], gi)
                acc(b[i], gi)
            elif o == _MUL:
                acc(a[i], gi * np.conj(val[b[i]]))
                acc(b[i], gi * np.conj(val[a[i]]))
            elif o == _CMUL:
                acc(a[i], gi * np.conj(const[i]))
            elif o == _CONJ:
                acc(a[i], np.conj(gi))
            elif o == _EXPI:
                dphi = 2.0 * np.imag(np.conj(val[i]) * gi)
                j = a[i]
                dphi = float(np.sum(dphi))
                g[j] = dphi if g[j] is None else g[j] + dphi
            # leaves accumulate and stop
        return g


def _tape_psdc(t: ElementaryTape, ephi: int, x1: int, x2: int) -> tuple[int, int]:
    u = t.mul(ephi, x1)
    y1 = t.cmul(SQRT1_2, t.add(u, t.cmul(1j, x2)))
    y2 = t.cmul(SQRT1_2, t.add(t.cmul(1j, u), x2))
    return y1, y2


def _tape_dcps(t: ElementaryTape, ephi: int, x1: int, x2: int) -> tuple[int, int]:
    s = t.cmul(SQRT1_2, t.add(x1, t.cmul(1j, x2)))
    y1 = t.mul(ephi, s)
    y2 = t.cmul(SQRT1_2, t.add(t.cmul(1j, x1), x2))
    return y1, y2


@dataclass(eq=False)
class TapeRun:
    """One recorded mesh application: tape plus node-id bookkeeping."""

    tape: ElementaryTape
    mesh: RectangularMesh
    in_ids: list[int]
    out_ids: list[int]
    phase_ids: list[list[int]]  # per fine layer
    diag_ids: list[int] | None
    batch: int

    def output(self) -> np.ndarray:
        return np.stack([np.asarray(self.tape.value(i)) for i in self.out_ids])

    def backward(
        self, g_out: np.ndarray, grads: PhaseGradients | None = None
    ) -> tuple[np.ndarray, PhaseGradients]:
        g_out = np.asarray(g_out, dtype=complex)
        seeds = {node: g_out[row] for row, node in enumerate(self.out_ids)}
        g = self.tape.backward(seeds)
        if grads is None:
            grads = PhaseGradients.zeros_for(self.mesh)
        for j, ids in enumerate(self.phase_ids):
            for k, node in enumerate(ids):
                grads.layers[j][k] += g[node] if g[node] is not None else 0.0
        if self.diag_ids is not None:
            for k, node in enumerate(self.diag_ids):
                grads.diag[k] += g[node] if g[node] is not None else 0.0
        g_in = np.zeros((self.mesh.n, self.batch), dtype=complex)
        for row, node in enumerate(self.in_ids):
            if g[node] is not None:
                g_in[row] = g[node]
        return g_in, grads


def tape_forward(
    mesh: RectangularMesh, x: np.ndarray, stats: SweepStats | None = None
) -> TapeRun:
    """Record the whole mesh application on a fresh elementary tape.

    One input leaf per port row; every basic unit unrolls into its
    elementary scalar formula (8 operation nodes per pair), the diagonal
    into expi+mul per port.
    """
    t0 = None if stats is None else time.perf_counter_ns()
    x = np.asarray(x, dtype=complex)
    if x.ndim != 2 or x.shape[0] != mesh.n:
        raise ValueError(f"expected input of shape ({mesh.n}, batch), got {x.shape}")
    t = ElementaryTape()
    rows = [t.input(x[i]) for i in range(mesh.n)]
    in_ids = list(rows)
    phase_ids: list[list[int]] = []
    for layer in mesh.layers:
        ids = [t.phase(p) for p in layer.phases]
        phase_ids.append(ids)
        build = _tape_psdc if layer.basic_unit is BasicUnit.PSDC else _tape_dcps
        for (p, q), pid in zip(layer.pairs, ids):
            y1, y2 = build(t, t.expi(pid), rows[p - 1], rows[q - 1])
            rows[p - 1], rows[q - 1] = y1, y2
    diag_ids = None
    if mesh.diag is not None:
        diag_ids = [t.phase(p) for p in mesh.diag.phases]
        rows = [t.mul(t.expi(pid), r) for pid, r in zip(diag_ids, rows)]
    run = TapeRun(t, mesh, in_ids, rows, phase_ids, diag_ids, x.shape[1])
    if stats is not None:
        stats.forward_ns += time.perf_counter_ns() - t0
        stats.sweeps += 1
    return run


def tape_forward_backward(
    mesh: RectangularMesh,
    x: np.ndarray,
    g_out: np.ndarray,
    grads: PhaseGradients | None = None,
    stats: SweepStats | None = None,
) -> tuple[np.ndarray, np.ndarray, PhaseGradients]:
    """Record + replay in one call; returns (y, g_in, grads)."""
    run = tape_forward(mesh, x, stats=stats)
    t0 = None if stats is None else time.perf_counter_ns()
    g_in, grads = run.backward(g_out, grads=grads)
    if stats is not None:
        stats.backward_ns += time.perf_counter_ns() - t0
    return run.output(), g_in, grads
