import math

import numpy as np
import pytest
from scipy.linalg import expm

from catqec import hilbert as hs
from catqec.errors import CutoffTooSmall


def layout_for(a2, Q=2):
    return hs.HilbertLayout(hs.fock_cutoff_for(a2), Q)


def test_layout_invariants():
    L = hs.HilbertLayout(5, 3)
    assert L.dim == 15
    with pytest.raises(ValueError):
        hs.HilbertLayout(1, 2)
    with pytest.raises(ValueError):
        hs.HilbertLayout(5, 4)


def test_cutoff_rule():
    assert hs.fock_cutoff_for(0) == 10
    assert hs.fock_cutoff_for(6) == math.ceil(6 + 8 * math.sqrt(6) + 10)


def test_annihilation_two_level_matrix():
    a = hs.osc_annihilation(2)
    assert np.array_equal(a, np.array([[0, 1], [0, 0]]))
    L = hs.HilbertLayout(2, 2)
    assert np.array_equal(hs.annihilation(L).mat, np.kron(a, np.eye(2)))


def test_commutator_identity_below_top_level():
    F = 12
    a = hs.osc_annihilation(F)
    c = a @ a.conj().T - a.conj().T @ a
    assert np.allclose(c[:-1, :-1], np.eye(F - 1), atol=1e-14)


def test_coherent_state_eigenvector():
    L = layout_for(6)
    alpha = math.sqrt(6) * np.exp(0.3j)
    psi = hs.coherent_state(alpha, L)
    a = hs.annihilation(L)
    v = a.mat @ psi.amp - alpha * psi.amp
    top = [L.index(L.fock_cutoff - 1, 0)]
    v[top] = 0
    # only the truncated top level may deviate
    assert np.linalg.norm(v) < 1e-12
    assert abs(psi.amp[top[0]]) < 1e-7


def test_coherent_state_properties():
    L = layout_for(4)
    vac = hs.coherent_state(0, L)
    assert abs(vac.amp[L.index(0, 0)]) == pytest.approx(1.0)
    a = 2.0
    p, m = hs.coherent_state(a, L), hs.coherent_state(-a, L)
    assert p.overlap(m).real == pytest.approx(math.exp(-2 * a * a), abs=1e-9)
    assert p.expect(hs.number_operator(L)).real == pytest.approx(a * a, abs=1e-8)


def test_cutoff_too_small():
    with pytest.raises(CutoffTooSmall):
        hs.coherent_state(3.0, hs.HilbertLayout(10, 2))
    assert hs.coherent_norm_deficit(2.0, hs.fock_cutoff_for(4)) < 1e-9


def test_cat_states():
    L = layout_for(4)
    even0 = hs.cat_state(0, +1, L)
    assert abs(even0.amp[0]) == pytest.approx(1.0)
    P = hs.parity_operator(L)
    for s in (+1, -1):
        c = hs.cat_state(2.0, s, L)
        assert np.linalg.norm(P.mat @ c.amp - s * c.amp) < 1e-10
        assert c.norm() == pytest.approx(1.0, abs=1e-12)


def test_codeword_wrong_component_overlap():
    a = 2.0
    F = hs.fock_cutoff_for(a * a)
    C = hs.cat_codewords(a, F)
    minus = hs.osc_coherent(-a, F)
    # |0_C> approaches |+alpha>; its weight on |-alpha> is O(exp(-2|alpha|^2))
    w = abs(np.vdot(minus, C[:, 0])) ** 2
    assert w < 10 * math.exp(-4 * a * a)
    assert abs(np.vdot(C[:, 0], C[:, 1])) < 1e-12


def test_dispersive_hamiltonian():
    L = hs.HilbertLayout(20, 3)
    assert np.count_nonzero(hs.dispersive_hamiltonian(0, 0, L).mat) == 0
    H = hs.dispersive_hamiltonian(1.0, 1.0, L)
    for n in range(20):
        assert H.mat[L.index(n, 0), L.index(n, 0)] == 0
    # e^{-i H pi / chi} |e>|alpha> = |e>|-alpha>
    L2 = layout_for(4)
    H2 = hs.dispersive_hamiltonian(1.0, 1.0, L2)
    U = np.diag(np.exp(-1j * np.diag(H2.mat) * math.pi))
    out = U @ hs.coherent_state(2.0, L2, level=1).amp
    tgt = hs.coherent_state(-2.0, L2, level=1).amp
    assert abs(np.vdot(tgt, out)) ** 2 > 1 - 1e-8


def test_displacement():
    L = layout_for(9)
    assert np.allclose(hs.displacement(0, L).mat, np.eye(L.dim))
    a = 1.5 + 0.5j
    D = hs.displacement(a, L)
    vac = hs.coherent_state(0, L)
    assert np.linalg.norm(D.mat @ vac.amp - hs.coherent_state(a, L).amp) < 1e-8
    F = L.fock_cutoff
    Dm, Dp = hs.osc_displacement(-a, F), hs.osc_displacement(a, F)
    # inverse and unitarity on the populated block
    block = slice(0, F - 25)
    assert np.max(np.abs((Dm @ Dp)[block, block] - np.eye(F)[block, block])) < 1e-8
    ref = expm(a * hs.osc_annihilation(F).conj().T - np.conj(a) * hs.osc_annihilation(F))
    assert np.max(np.abs(Dp - ref)) < 1e-10


def test_unitarity_on_populated_block():
    F = hs.fock_cutoff_for(12)
    D = hs.osc_displacement(math.sqrt(3), F)
    U = D.conj().T @ D
    k = F - 20
    assert np.max(np.abs(U[:k, :k] - np.eye(k))) < 1e-7
