"""Forward/backward rules for the two basic units and phase diagonals.

A basic unit is one phase shifter fused with one 50:50 coupler acting on
a port pair; a full interferometer is two of them.  Everything here
broadcasts: phases may be scalars or (k, 1) columns, signals scalars or
(k, batch) blocks.

Cotangent convention: every gradient passed through these functions is
dL/dz* of a real loss L (the conjugate Wirtinger partial); phase
derivatives are ordinary real partials dL/dphi.  Because each unit is
unitary, the cotangent map is the conjugate transpose of the forward
map, and the phase partial collapses to a single Im(.) readout at the
shifted port:

  shifter before coupler (PSDC): dphi = 2 Im(x1* gx1), on the input side,
    *after* the cotangent has been pulled back;
  shifter after coupler (DCPS):  dphi = 2 Im(y1* gy1), on the output side,
    *before* the cotangent is pulled back.

The asymmetry decides which activation a sweep must save: PSDC layers
save their inputs, DCPS layers their outputs.
"""
from __future__ import annotations

import math

import numpy as np

__all__ = [
    "dcps_backward",
    "dcps_forward",
    "diag_backward",
    "diag_forward",
    "psdc_backward",
    "psdc_forward",
]

SQRT1_2 = 1.0 / math.sqrt(2.0)


def psdc_forward(phi, x1, x2):
    """y1 = (e^{i phi} x1 + i x2)/sqrt2,  y2 = (i e^{i phi} x1 + x2)/sqrt2."""
    u = np.exp(1j * np.asarray(phi)) * x1
    return SQRT1_2 * (u + 1j * np.asarray(x2)), SQRT1_2 * (1j * u + x2)


def psdc_backward(phi, x1_saved, gy1, gy2):
    """Pull (gy1, gy2) back through a PSDC unit; return (gx1, gx2, dphi).

    The backward map is the unit's conjugate transpose; dphi is read at
    the input interface from the saved forward input x1.
    """
    a = np.exp(-1j * np.asarray(phi))
    gx1 = SQRT1_2 * (a * gy1 - 1j * (a * gy2))
    gx2 = SQRT1_2 * (-1j * gy1 + gy2)
    dphi = 2.0 * (np.conj(x1_saved) * gx1).imag
    return gx1, gx2, dphi


def dcps_forward(phi, x1, x2):
    """y1 = e^{i phi} (x1 + i x2)/sqrt2,  y2 = (i x1 + x2)/sqrt2."""
    s = SQRT1_2 * (np.asarray(x1) + 1j * np.asarray(x2))
    return np.exp(1j * np.asarray(phi)) * s, SQRT1_2 * (1j * np.asarray(x1) + x2)


def dcps_backward(phi, y1_saved, gy1, gy2):
    """Pull (gy1, gy2) back through a DCPS unit; return (gx1, gx2, dphi).

    dphi is read at the output interface from the saved forward output
    y1, before the conjugate-transpose map is applied.
    """
    dphi = 2.0 * (np.conj(y1_saved) * gy1).imag
    u = np.exp(-1j * np.asarray(phi)) * gy1
    gx1 = SQRT1_2 * (u - 1j * np.asarray(gy2))
    gx2 = SQRT1_2 * (-1j * u + gy2)
    return gx1, gx2, dphi


def diag_forward(delta, x):
    """Apply the phase diagonal: y_k = e^{i delta_k} x_k."""
    return np.exp(1j * np.asarray(delta)) * x


def diag_backward(delta, y_saved, gy):
    """Pull gy back through a phase diagonal; return (gx, ddelta).

    ddelta_k = 2 Im(y_k* gy_k), read on the output side like any
    shifter-last unit.
    """
    ddelta = 2.0 * (np.conj(y_saved) * gy).imag
    gx = np.exp(-1j * np.asarray(delta)) * gy
    return gx, ddelta
