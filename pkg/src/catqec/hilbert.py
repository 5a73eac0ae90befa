"""Truncated oscillator (x) transmon Hilbert spaces, operators and cat states.

Tensor order is always oscillator first, transmon second, so the flat index of
``|n, t>`` is ``n * qudit_dim + t``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammainc, gammaln

from .errors import CutoffTooSmall

NORM_DEFICIT_LIMIT = 1e-9


def fock_cutoff_for(mean_photons: float) -> int:
    """Cutoff rule ``ceil(mu + 8 sqrt(mu) + 10)`` for the largest mean photon number."""
    mu = max(float(mean_photons), 0.0)
    return int(math.ceil(mu + 8.0 * math.sqrt(mu) + 10.0))


@dataclass(frozen=True)
class HilbertLayout:
    fock_cutoff: int
    qudit_dim: int = 2

    def __post_init__(self):
        if int(self.fock_cutoff) < 2:
            raise ValueError("fock_cutoff must be >= 2")
        if self.qudit_dim not in (2, 3):
            raise ValueError("qudit_dim must be 2 or 3")

    @property
    def dim(self) -> int:
        return self.fock_cutoff * self.qudit_dim

    def index(self, n: int, level: int) -> int:
        return n * self.qudit_dim + level


class DenseOperator:
    """Square complex matrix acting on a layout's full space."""

    __slots__ = ("mat",)

    def __init__(self, mat):
        m = np.asarray(mat, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("operator must be a square matrix")
        m.setflags(write=False)
        self.mat = m

    @property
    def dim(self) -> int:
        return self.mat.shape[0]

    def dag(self) -> "DenseOperator":
        return DenseOperator(self.mat.conj().T)

    def trace(self) -> complex:
        return complex(np.trace(self.mat))

    def is_hermitian(self, tol: float = 1e-10) -> bool:
        return bool(np.max(np.abs(self.mat - self.mat.conj().T), initial=0.0) <= tol)

    def __matmul__(self, other):
        if isinstance(other, DenseOperator):
            return DenseOperator(self.mat @ other.mat)
        if isinstance(other, StateVector):
            return StateVector(self.mat @ other.amp, normalize=False)
        return self.mat @ other

    def __add__(self, other):
        return DenseOperator(self.mat + _as_mat(other))

    def __sub__(self, other):
        return DenseOperator(self.mat - _as_mat(other))

    def __mul__(self, scalar):
        return DenseOperator(self.mat * scalar)

    __rmul__ = __mul__

    def __repr__(self):
        return f"DenseOperator(dim={self.dim})"


def _as_mat(x):
    return x.mat if isinstance(x, DenseOperator) else np.asarray(x, dtype=complex)


class StateVector:
    __slots__ = ("amp",)

    def __init__(self, amp, normalize: bool = True):
        v = np.asarray(amp, dtype=complex).ravel()
        if normalize:
            nrm = np.linalg.norm(v)
            if nrm == 0:
                raise ValueError("zero vector")
            v = v / nrm
        v.setflags(write=False)
        self.amp = v

    @property
    def dim(self) -> int:
        return self.amp.size

    def norm(self) -> float:
        return float(np.linalg.norm(self.amp))

    def overlap(self, other: "StateVector") -> complex:
        return complex(np.vdot(self.amp, other.amp))

    def projector(self) -> DenseOperator:
        return DenseOperator(np.outer(self.amp, self.amp.conj()))

    def expect(self, op) -> complex:
        return complex(np.vdot(self.amp, _as_mat(op) @ self.amp))


# ----------------------------------------------------------------------------
# oscillator-factor building blocks (plain ndarrays of size fock_cutoff)

def osc_annihilation(cutoff: int) -> np.ndarray:
    return np.diag(np.sqrt(np.arange(1, cutoff, dtype=float)), 1).astype(complex)


def osc_number(cutoff: int) -> np.ndarray:
    return np.diag(np.arange(cutoff, dtype=float)).astype(complex)


def osc_parity(cutoff: int) -> np.ndarray:
    return np.diag((-1.0) ** np.arange(cutoff)).astype(complex)


def coherent_norm_deficit(alpha: complex, cutoff: int) -> float:
    """Probability weight of |alpha> above the truncation (Poisson tail)."""
    lam = abs(alpha) ** 2
    if lam == 0:
        return 0.0
    return float(gammainc(cutoff, lam))


def _check_cutoff(alpha: complex, cutoff: int):
    deficit = coherent_norm_deficit(alpha, cutoff)
    if deficit > NORM_DEFICIT_LIMIT:
        raise CutoffTooSmall(
            f"cutoff {cutoff} too small for |alpha|^2={abs(alpha) ** 2:.3g} "
            f"(norm deficit {deficit:.2e}); need about {fock_cutoff_for(abs(alpha) ** 2)}"
        )


def coherent_amplitudes(alpha: complex, cutoff: int) -> np.ndarray:
    """Fock amplitudes of the (untruncated) coherent state, first ``cutoff`` entries."""
    n = np.arange(cutoff)
    if alpha == 0:
        out = np.zeros(cutoff, dtype=complex)
        out[0] = 1.0
        return out
    r, theta = abs(alpha), np.angle(alpha)
    logmag = -0.5 * r * r + n * math.log(r) - 0.5 * gammaln(n + 1)
    return np.exp(logmag) * np.exp(1j * theta * n)


def osc_coherent(alpha: complex, cutoff: int) -> np.ndarray:
    _check_cutoff(alpha, cutoff)
    v = coherent_amplitudes(alpha, cutoff)
    return v / np.linalg.norm(v)


def osc_cat(alpha: complex, parity: int, cutoff: int) -> np.ndarray:
    """Even (+1) or odd (-1) cat on the oscillator factor."""
    if parity not in (1, -1):
        raise ValueError("parity must be +1 or -1")
    _check_cutoff(alpha, cutoff)
    if alpha == 0:
        if parity == -1:
            raise ValueError("odd cat undefined for alpha=0")
        return coherent_amplitudes(0, cutoff)
    v = coherent_amplitudes(alpha, cutoff)
    n = np.arange(cutoff)
    # |alpha> + parity |-alpha> keeps only Fock states of matching parity
    keep = (n % 2 == 0) if parity == 1 else (n % 2 == 1)
    v = np.where(keep, 2.0 * v, 0.0)
    return v / np.linalg.norm(v)


def osc_displacement(alpha: complex, cutoff: int) -> np.ndarray:
    if alpha == 0:
        return np.eye(cutoff, dtype=complex)
    _check_cutoff(alpha, cutoff)
    a = osc_annihilation(cutoff)
    gen = alpha * a.conj().T - np.conj(alpha) * a
    # gen is anti-Hermitian: gen = -i herm with herm Hermitian
    w, v = np.linalg.eigh(1j * gen)
    return (v * np.exp(-1j * w)) @ v.conj().T


def osc_rotation(theta: float, cutoff: int) -> np.ndarray:
    """exp(i theta a^dag a): maps |beta> to |beta e^{i theta}>."""
    return np.diag(np.exp(1j * theta * np.arange(cutoff)))


# ----------------------------------------------------------------------------
# full-space operators

def embed_oscillator(op: np.ndarray, layout: HilbertLayout) -> DenseOperator:
    return DenseOperator(np.kron(op, np.eye(layout.qudit_dim)))


def embed_qudit(op: np.ndarray, layout: HilbertLayout) -> DenseOperator:
    return DenseOperator(np.kron(np.eye(layout.fock_cutoff), op))


def qudit_projector(level: int, qudit_dim: int) -> np.ndarray:
    p = np.zeros((qudit_dim, qudit_dim), dtype=complex)
    p[level, level] = 1.0
    return p


def qudit_lowering(qudit_dim: int) -> np.ndarray:
    """sum_k sqrt(k) |k-1><k| (harmonic weights |g><e| + sqrt2 |e><f|)."""
    return np.diag(np.sqrt(np.arange(1, qudit_dim, dtype=float)), 1).astype(complex)


def annihilation(layout: HilbertLayout) -> DenseOperator:
    return embed_oscillator(osc_annihilation(layout.fock_cutoff), layout)


def number_operator(layout: HilbertLayout) -> DenseOperator:
    return embed_oscillator(osc_number(layout.fock_cutoff), layout)


def parity_operator(layout: HilbertLayout) -> DenseOperator:
    return embed_oscillator(osc_parity(layout.fock_cutoff), layout)


def dispersive_hamiltonian(chi_e: float, chi_f: float, layout: HilbertLayout) -> DenseOperator:
    n = np.arange(layout.fock_cutoff, dtype=float)
    shifts = np.zeros(layout.qudit_dim)
    shifts[1] = chi_e
    if layout.qudit_dim == 3:
        shifts[2] = chi_f
    return DenseOperator(np.diag(np.kron(n, shifts)).astype(complex))


def displacement(alpha: complex, layout: HilbertLayout) -> DenseOperator:
    return embed_oscillator(osc_displacement(alpha, layout.fock_cutoff), layout)


def product_state(osc_vec: np.ndarray, level: int, layout: HilbertLayout) -> StateVector:
    q = np.zeros(layout.qudit_dim, dtype=complex)
    q[level] = 1.0
    return StateVector(np.kron(osc_vec, q))


def coherent_state(alpha: complex, layout: HilbertLayout, level: int = 0) -> StateVector:
    """Coherent state on the oscillator with the transmon in ``level``."""
    return product_state(osc_coherent(alpha, layout.fock_cutoff), level, layout)


def cat_state(alpha: complex, parity: int, layout: HilbertLayout, level: int = 0) -> StateVector:
    return product_state(osc_cat(alpha, parity, layout.fock_cutoff), level, layout)


def cat_codewords(alpha: complex, cutoff: int) -> np.ndarray:
    """Columns |0_C>, |1_C> = (|+_C> +- |-_C>)/sqrt 2 on the oscillator factor."""
    plus = osc_cat(alpha, 1, cutoff)
    minus = osc_cat(alpha, -1, cutoff)
    return np.stack([(plus + minus) / math.sqrt(2), (plus - minus) / math.sqrt(2)], axis=1)
