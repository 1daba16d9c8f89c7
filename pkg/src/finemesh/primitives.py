"""2x2 constituent unitaries for programmable interferometer ports.

A programmable phase shifter (PS) and a fixed 50:50 directional coupler
(DC) are the only primitives; every interferometer matrix here is built
by multiplying those factors in the structure's physical order.  Closed
forms are deliberately not used in construction so they stay available
as independent oracles for the tests.
"""
from __future__ import annotations

import cmath
import enum
import math

import numpy as np

__all__ = [
    "MziKind",
    "canonical_phase",
    "dc_matrix",
    "embed_single_mzi",
    "mzi_matrix",
    "ps_matrix",
]

SQRT1_2 = 1.0 / math.sqrt(2.0)


class MziKind(enum.Enum):
    """Two-phase interferometer structures, named by signal order."""

    PSDC2 = "psdc2"  # PS(phi) -> DC -> PS(theta) -> DC
    DCPS2 = "dcps2"  # DC -> PS(phi) -> DC -> PS(theta)
    MIXED = "mixed"  # DC -> PS(phi) -> PS(theta) -> DC, theta on the lower port


def _check_phase(phi: float) -> float:
    phi = float(phi)
    if not math.isfinite(phi):
        raise ValueError(f"phase must be finite, got {phi!r}")
    return phi


def canonical_phase(phi: float) -> float:
    """Map a finite phase into [-pi, pi); e^{i phi} is mathematically unchanged."""
    r = math.remainder(_check_phase(phi), 2.0 * math.pi)
    # remainder() lands in [-pi, pi]; fold the closed upper endpoint.
    return -math.pi if r >= math.pi else r


def ps_matrix(phi: float) -> np.ndarray:
    """Phase shifter on the upper port: diag(e^{i phi}, 1)."""
    phi = _check_phase(phi)
    return np.array([[cmath.exp(1j * phi), 0.0], [0.0, 1.0]])


def dc_matrix() -> np.ndarray:
    """Fixed 50:50 coupler, (1/sqrt 2) [[1, i], [i, 1]]."""
    return np.array([[SQRT1_2, 1j * SQRT1_2], [1j * SQRT1_2, SQRT1_2]])


def mzi_matrix(kind: MziKind, phi: float, theta: float) -> np.ndarray:
    """Two-phase interferometer, assembled by factor multiplication.

    ``kind`` names the factors in signal order (left to right), so the
    matrix product runs right to left.  phi always drives the first
    shifter the signal meets, theta the second.
    """
    phi = _check_phase(phi)
    theta = _check_phase(theta)
    dc = dc_matrix()
    if kind is MziKind.PSDC2:
        return dc @ ps_matrix(theta) @ dc @ ps_matrix(phi)
    if kind is MziKind.DCPS2:
        return ps_matrix(theta) @ dc @ ps_matrix(phi) @ dc
    if kind is MziKind.MIXED:
        # Both shifters sit between the couplers; the theta shifter acts on
        # the lower port, so only the arms' relative phase is programmable.
        lower = np.array([[1.0, 0.0], [0.0, cmath.exp(1j * theta)]])
        return dc @ lower @ ps_matrix(phi) @ dc
    raise ValueError(f"unknown MZI kind: {kind!r}")


def embed_single_mzi(n: int, p: int, q: int, m: np.ndarray) -> np.ndarray:
    """Embed a 2x2 block into the n-port identity at 1-based ports (p, q).

    Rows/columns p and q carry the block; every other port is passed
    through untouched.
    """
    if not (1 <= p < q <= n):
        raise IndexError(f"ports must satisfy 1 <= p < q <= n, got p={p}, q={q}, n={n}")
    m = np.asarray(m)
    if m.shape != (2, 2):
        raise ValueError(f"expected a 2x2 block, got shape {m.shape}")
    out = np.eye(n, dtype=complex)
    out[p - 1, p - 1] = m[0, 0]
    out[p - 1, q - 1] = m[0, 1]
    out[q - 1, p - 1] = m[1, 0]
    out[q - 1, q - 1] = m[1, 1]
    return out
