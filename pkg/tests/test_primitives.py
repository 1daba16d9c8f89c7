"""Oracle checks for the 2x2 building blocks.

The construction code multiplies PS/DC factor matrices; the closed forms
below were worked out by hand and serve as independent references.
"""
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from finemesh import MziKind, canonical_phase, dc_matrix, embed_single_mzi, mzi_matrix, ps_matrix

FINITE_PHASE = st.floats(min_value=-50.0, max_value=50.0, allow_nan=False)


def closed_form_psdc2(phi: float, theta: float) -> np.ndarray:
    # alpha/beta collect the theta dependence; phi multiplies the first column.
    alpha = np.exp(1j * theta) + 1.0
    beta = np.exp(1j * theta) - 1.0
    e = np.exp(1j * phi)
    return 0.5 * np.array([[e * beta, 1j * alpha], [1j * e * alpha, -beta]])


def closed_form_mixed(phi: float, theta: float) -> np.ndarray:
    ep, et = np.exp(1j * phi), np.exp(1j * theta)
    return 0.5 * np.array([[ep - et, 1j * (ep + et)], [1j * (ep + et), et - ep]])


def test_ps_matrix_is_upper_port_phase():
    m = ps_matrix(0.7)
    assert m[0, 0] == pytest.approx(np.exp(0.7j))
    assert m[1, 1] == 1.0
    assert m[0, 1] == 0.0 and m[1, 0] == 0.0


def test_dc_matrix_value():
    s = 1.0 / math.sqrt(2.0)
    assert np.array_equal(dc_matrix(), np.array([[s, 1j * s], [1j * s, s]]))


def test_dc_matrix_unitary_and_symmetric():
    d = dc_matrix()
    assert np.allclose(d @ d.conj().T, np.eye(2), atol=1e-15)
    assert np.array_equal(d, d.T)


@pytest.mark.parametrize("kind", list(MziKind))
def test_mzi_unitary_unit_determinant_magnitude(kind):
    rng = np.random.default_rng(11)
    for _ in range(50):
        phi, theta = rng.uniform(-np.pi, np.pi, 2)
        m = mzi_matrix(kind, phi, theta)
        assert np.abs(m @ m.conj().T - np.eye(2)).max() < 1e-15
        assert abs(abs(np.linalg.det(m)) - 1.0) < 1e-15


def test_psdc2_matches_closed_form():
    rng = np.random.default_rng(12)
    for _ in range(200):
        phi, theta = rng.uniform(-np.pi, np.pi, 2)
        got = mzi_matrix(MziKind.PSDC2, phi, theta)
        assert np.abs(got - closed_form_psdc2(phi, theta)).max() < 1e-15


def test_dcps2_is_transpose_with_roles_swapped():
    """Swapping which phase meets the signal first turns one ordering
    into the transpose of the other."""
    rng = np.random.default_rng(13)
    for _ in range(200):
        phi, theta = rng.uniform(-np.pi, np.pi, 2)
        lhs = mzi_matrix(MziKind.DCPS2, phi, theta)
        rhs = mzi_matrix(MziKind.PSDC2, theta, phi).T
        assert np.abs(lhs - rhs).max() < 1e-15


def test_dcps2_closed_form_via_transpose():
    rng = np.random.default_rng(14)
    for _ in range(100):
        phi, theta = rng.uniform(-np.pi, np.pi, 2)
        got = mzi_matrix(MziKind.DCPS2, phi, theta)
        assert np.abs(got - closed_form_psdc2(theta, phi).T).max() < 1e-15


def test_mixed_matches_closed_form():
    rng = np.random.default_rng(15)
    for _ in range(200):
        phi, theta = rng.uniform(-np.pi, np.pi, 2)
        got = mzi_matrix(MziKind.MIXED, phi, theta)
        assert np.abs(got - closed_form_mixed(phi, theta)).max() < 1e-15


def test_mixed_depends_only_on_phase_difference_up_to_global_phase():
    # Both shifters sit between the couplers, so adding c to both phases
    # multiplies the whole matrix by e^{ic}.
    phi, theta, c = 0.4, -1.1, 0.9
    a = mzi_matrix(MziKind.MIXED, phi + c, theta + c)
    b = np.exp(1j * c) * mzi_matrix(MziKind.MIXED, phi, theta)
    assert np.abs(a - b).max() < 1e-15


def test_psdc2_at_zero_phases_is_swap_like():
    # Two bare couplers in a row: cross the ports with a losslessly rotated i.
    m = mzi_matrix(MziKind.PSDC2, 0.0, 0.0)
    assert np.abs(m - np.array([[0, 1j], [1j, 0]])).max() < 1e-15


@given(FINITE_PHASE)
def test_canonical_phase_range_and_equivalence(phi):
    c = canonical_phase(phi)
    assert -math.pi <= c < math.pi
    assert abs(np.exp(1j * c) - np.exp(1j * phi)) < 1e-12


@given(FINITE_PHASE, FINITE_PHASE)
@settings(max_examples=50)
def test_mzi_phases_only_matter_mod_2pi(phi, theta):
    a = mzi_matrix(MziKind.PSDC2, phi, theta)
    b = mzi_matrix(MziKind.PSDC2, phi + 2 * math.pi, theta - 2 * math.pi)
    assert np.abs(a - b).max() < 1e-12


def test_canonical_phase_endpoints():
    assert canonical_phase(math.pi) == -math.pi
    assert canonical_phase(-math.pi) == -math.pi
    assert canonical_phase(0.0) == 0.0
    assert canonical_phase(3 * math.pi) == -math.pi


@pytest.mark.parametrize("bad", [float("nan"), float("inf"), -float("inf")])
def test_non_finite_phase_rejected(bad):
    with pytest.raises(ValueError):
        ps_matrix(bad)
    with pytest.raises(ValueError):
        canonical_phase(bad)
    with pytest.raises(ValueError):
        mzi_matrix(MziKind.PSDC2, bad, 0.0)


def test_embed_places_block_and_passes_other_ports():
    block = np.array([[1.0, 2.0], [3.0, 4.0]], dtype=complex)
    m = embed_single_mzi(3, 1, 3, block)
    expect = np.array(
        [[1.0, 0.0, 2.0], [0.0, 1.0, 0.0], [3.0, 0.0, 4.0]], dtype=complex
    )
    assert np.array_equal(m, expect)


def test_embed_adjacent_pair():
    block = mzi_matrix(MziKind.PSDC2, 0.3, -0.2)
    m = embed_single_mzi(4, 2, 3, block)
    assert np.array_equal(m[1:3, 1:3], block)
    assert m[0, 0] == 1.0 and m[3, 3] == 1.0
    assert np.count_nonzero(m) == 2 + 4  # two idle ports + the block


def test_embed_rejects_bad_ports():
    block = np.eye(2, dtype=complex)
    for p, q in [(0, 1), (2, 2), (3, 2), (1, 5)]:
        with pytest.raises(IndexError):
            embed_single_mzi(4, p, q, block)


def test_embed_rejects_non_2x2():
    with pytest.raises(ValueError):
        embed_single_mzi(4, 1, 2, np.eye(3, dtype=complex))
