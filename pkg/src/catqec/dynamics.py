"""Noise models, Lindblad time evolution and stochastic dephasing.

Rates are expressed in units of the dispersive shift chi, so chi = 1 sets the
time unit unless stated otherwise.

The workhorse is :func:`propagate`, an adaptive Dormand-Prince 5(4) integrator
acting directly on matrix-shaped operators.  When a :class:`HilbertLayout` is
supplied the right-hand side is compiled into a handful of shifted elementwise
products (all operators used here are banded in the Fock index), which is much
cheaper than dense matrix products for cutoffs around 100.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import hilbert as hs
from .errors import DomainError, NegativeRate, StepUnderflow
from .hilbert import DenseOperator, HilbertLayout

EULER_GAMMA = 0.5772156649015329

# ----------------------------------------------------------------------------
# noise models

_VARIANTS = {
    # (kappa1, gamma_down, kappa_phi, gamma_phi, gamma_up) / chi as functions of q
    "Model1": lambda q: (q, 3 * q, 0.01 * q, 1.5 * q, 0.015 * q),
    "Model2": lambda q: (q, q, 0.01 * q, 0.5 * q, 0.005 * q),
    "Model3": lambda q: (q, 5e-4, 0.01 * q, 2.5e-4, 2.5e-6),
}


@dataclass(frozen=True)
class NoiseModel:
    kappa1_over_chi: float
    gamma_down_over_chi: float
    kappa_phi_over_chi: float
    gamma_phi_over_chi: float
    gamma_up_over_chi: float
    q: float = 0.0
    variant: str = "Custom"

    def __post_init__(self):
        for name in ("kappa1_over_chi", "gamma_down_over_chi", "kappa_phi_over_chi",
                     "gamma_phi_over_chi", "gamma_up_over_chi", "q"):
            if getattr(self, name) < 0:
                raise NegativeRate(f"{name} = {getattr(self, name)} < 0")

    @classmethod
    def from_variant(cls, variant: str, q: float) -> "NoiseModel":
        if variant not in _VARIANTS:
            raise ValueError(f"unknown noise model variant {variant!r}")
        if q < 0:
            raise NegativeRate(f"q = {q} < 0")
        return cls(*_VARIANTS[variant](q), q=q, variant=variant)

    @classmethod
    def model1(cls, q):
        return cls.from_variant("Model1", q)

    @classmethod
    def model2(cls, q):
        return cls.from_variant("Model2", q)

    @classmethod
    def model3(cls, q):
        return cls.from_variant("Model3", q)

    def rates(self) -> dict:
        return {
            "kappa1": self.kappa1_over_chi,
            "gamma_down": self.gamma_down_over_chi,
            "kappa_phi": self.kappa_phi_over_chi,
            "gamma_phi": self.gamma_phi_over_chi,
            "gamma_up": self.gamma_up_over_chi,
        }

    def storage_only(self) -> "NoiseModel":
        return NoiseModel(self.kappa1_over_chi, 0.0, self.kappa_phi_over_chi, 0.0, 0.0,
                          q=self.q, variant=self.variant)

    def to_dict(self) -> dict:
        d = self.rates()
        d.update(q=self.q, variant=self.variant)
        return d


def collapse_operators(model: NoiseModel, layout: HilbertLayout, include_engineered: bool = False,
                       kappa2_over_chi: float = 0.0, alpha: complex = 0.0,
                       chi: float = 1.0, include_transmon: bool = True) -> list:
    """Lindblad jump operators for ``model`` on ``layout`` (rates scaled by ``chi``).

    Transmon dephasing uses sqrt(2 gamma_phi) * diag(0, 1, 2, ...), so that the
    g-e coherence decays at gamma_down/2 + gamma_phi.
    """
    if kappa2_over_chi < 0:
        raise NegativeRate(f"kappa2_over_chi = {kappa2_over_chi} < 0")
    F, Q = layout.fock_cutoff, layout.qudit_dim
    a = hs.osc_annihilation(F)
    n = hs.osc_number(F)
    lower = hs.qudit_lowering(Q)
    qnum = np.diag(np.arange(Q, dtype=float)).astype(complex)
    ops = []

    def add(rate, mat):
        if rate < 0:
            raise NegativeRate(f"negative rate {rate}")
        if rate > 0:
            ops.append(DenseOperator(math.sqrt(rate * chi) * mat))

    add(model.kappa1_over_chi, np.kron(a, np.eye(Q)))
    add(model.kappa_phi_over_chi, np.kron(n, np.eye(Q)))
    if include_transmon:
        add(model.gamma_down_over_chi, np.kron(np.eye(F), lower))
        add(2.0 * model.gamma_phi_over_chi, np.kron(np.eye(F), qnum))
        add(model.gamma_up_over_chi, np.kron(np.eye(F), lower.conj().T))
    if include_engineered and kappa2_over_chi > 0:
        add(kappa2_over_chi, np.kron(a @ a - alpha ** 2 * np.eye(F), np.eye(Q)))
    return ops


# ----------------------------------------------------------------------------
# Hamiltonian schedules

class Schedule:
    """Time-dependent Hamiltonian ``H(t) = static + sum_k f_k(t) op_k``.

    Calling the schedule returns the dense operator at time ``t``.  The split
    form lets :func:`propagate` precompile the structure once.
    """

    def __init__(self, static: Optional[DenseOperator] = None, terms: Sequence = ()):
        self.static = static
        self.terms = [(fn, op if isinstance(op, DenseOperator) else DenseOperator(op))
                      for fn, op in terms]

    def __call__(self, t: float) -> DenseOperator:
        mats = [] if self.static is None else [self.static.mat]
        mats += [fn(t) * op.mat for fn, op in self.terms]
        if not mats:
            raise ValueError("empty schedule has no dimension")
        return DenseOperator(sum(mats))


@dataclass
class PropagationResult:
    final_operator: object
    step_count: int
    max_trace_drift: float
    rejected_steps: int = 0


# ----------------------------------------------------------------------------
# right-hand-side builders

class _DenseRHS:
    """Generic path: dense matrix products, works for any schedule callable."""

    def __init__(self, schedule, collapse):
        self.schedule = schedule
        self.L = [c.mat for c in collapse]
        self.LdL = sum(l.conj().T @ l for l in self.L) if self.L else None

    def __call__(self, t, X):
        G = np.zeros(X.shape[-2:], dtype=complex)
        if self.schedule is not None:
            G = G - 1j * self.schedule(t).mat
        if self.LdL is not None:
            G = G - 0.5 * self.LdL
        out = G @ X + X @ G.conj().T
        for l in self.L:
            out = out + l @ X @ l.conj().T
        return out


def _elementaries(mat: np.ndarray, F: int, Q: int, tol: float = 0.0):
    """Split a full-space matrix into |t><s| (x) banded-diagonal pieces.

    Returns tuples (t, s, k, v) with v[n] = <n,t|mat|n+k,s> (zero-padded).
    """
    A = mat.reshape(F, Q, F, Q)
    out = []
    for t in range(Q):
        for s in range(Q):
            B = A[:, t, :, s]
            if not np.any(np.abs(B) > tol):
                continue
            for k in range(-F + 1, F):
                d = np.diagonal(B, k)
                if np.any(np.abs(d) > tol):
                    v = np.zeros(F, dtype=complex)
                    if k >= 0:
                        v[:F - k] = d
                    else:
                        v[-k:] = d
                    out.append((t, s, k, v))
    return out


class _StructuredRHS:
    """Compiled Lindbladian acting on stacks shaped (b, F, Q, F, Q).

    Every contribution has the form
        out[:, n, T1, m, T2] += f(t) c[n, m] X[:, n+k1, S1, m+k2, S2]
    where T/S are a transmon level or ``None`` (all levels).  Elementwise
    contributions (k1 = k2 = 0, T = S) are merged into dense coefficient arrays.
    """

    MAX_DIAGONALS = 40

    def __init__(self, schedule, collapse, layout: HilbertLayout):
        F, Q = layout.fock_cutoff, layout.qudit_dim
        self.F, self.Q = F, Q
        d = F * Q
        static = np.zeros((d, d), dtype=complex)
        tdep = []
        if schedule is not None:
            if isinstance(schedule, DenseOperator):
                static += schedule.mat
            elif isinstance(schedule, Schedule):
                if schedule.static is not None:
                    static += schedule.static.mat
                tdep = list(schedule.terms)
            else:
                raise TypeError("structured path needs a Schedule or DenseOperator")
        L = [c.mat for c in collapse]
        G = -1j * static
        for l in L:
            G = G - 0.5 * (l.conj().T @ l)
        # groups: key -> coefficient; fn index 0 means static
        self.fns = [None]
        self.diag = {0: np.zeros((F, Q, F, Q), dtype=complex)}
        self.terms = {}
        self._add_left(G, 0)
        self._add_right(G.conj().T, 0)
        for j, (fn, op) in enumerate(tdep, start=1):
            self.fns.append(fn)
            self._add_left(-1j * op.mat, j)
            self._add_right(1j * op.mat, j)
        for l in L:
            self._add_sandwich(l, 0)
        self._finalize()

    # -- term registration
    def _put(self, key, coef, fn):
        k1, T1, S1, k2, T2, S2 = key
        if k1 == 0 and k2 == 0 and T1 == S1 and T2 == S2:
            arr = self.diag.setdefault(fn, np.zeros((self.F, self.Q, self.F, self.Q), dtype=complex))
            idx1 = slice(None) if T1 is None else T1
            idx2 = slice(None) if T2 is None else T2
            c = coef
            if T1 is None:
                c = c[:, None, :] if T2 is not None else c[:, None, :, None]
            elif T2 is None:
                c = c[:, :, None]
            arr[:, idx1, :, idx2] += c
            return
        full = key + (fn,)
        if full in self.terms:
            self.terms[full] = self.terms[full] + coef
        else:
            self.terms[full] = coef.copy()

    def _check_band(self, el):
        if len(el) > self.MAX_DIAGONALS * self.Q * self.Q:
            raise ValueError("operator too dense for the structured propagator")

    def _add_left(self, mat, fn):
        el = _elementaries(mat, self.F, self.Q)
        self._check_band(el)
        for t, s, k, v in el:
            self._put((k, t, s, 0, None, None), np.repeat(v[:, None], self.F, axis=1), fn)

    def _add_right(self, mat, fn):
        # (X B)[n, t, m, b] = X[n, t, m - l, a] * w[m - l]  for pieces (a, b, l, w)
        el = _elementaries(mat, self.F, self.Q)
        self._check_band(el)
        F = self.F
        for a_, b_, l, w in el:
            shifted = np.zeros(F, dtype=complex)
            m = np.arange(F)
            ok = (m - l >= 0) & (m - l < F)
            shifted[ok] = w[m[ok] - l]
            self._put((0, None, None, -l, b_, a_), np.repeat(shifted[None, :], F, axis=0), fn)

    def _add_sandwich(self, lmat, fn):
        left = _elementaries(lmat, self.F, self.Q)
        right = _elementaries(lmat.conj().T, self.F, self.Q)
        F = self.F
        m = np.arange(F)
        for t, s, k, v in left:
            for a_, b_, l, w in right:
                shifted = np.zeros(F, dtype=complex)
                ok = (m - l >= 0) & (m - l < F)
                shifted[ok] = w[m[ok] - l]
                self._put((k, t, s, -l, b_, a_), np.outer(v, shifted), fn)

    def _finalize(self):
        F, Q = self.F, self.Q
        self.diag_list = [(fn, arr) for fn, arr in self.diag.items() if np.any(arr != 0) or fn == 0]
        # expand "all levels" placeholders into explicit (T, S) pairs for the kernel
        rows = []
        coefs = []
        for (k1, T1, S1, k2, T2, S2, fn), coef in self.terms.items():
            if not np.any(coef != 0):
                continue
            left = [(T1, S1)] if T1 is not None else [(j, j) for j in range(Q)]
            right = [(T2, S2)] if T2 is not None else [(j, j) for j in range(Q)]
            for t1, s1 in left:
                for t2, s2 in right:
                    rows.append((k1, t1, s1, k2, t2, s2, fn))
                    coefs.append(coef)
        self.term_meta = np.array(rows, dtype=np.int64).reshape(-1, 7)
        self.term_coef = np.array(coefs, dtype=complex).reshape(-1, F, F)
        self.diag_coef = np.array([arr for _, arr in self.diag_list], dtype=complex)
        self.diag_fn = np.array([fn for fn, _ in self.diag_list], dtype=np.int64)

    def scalars(self, t):
        return np.array([1.0] + [fn(t) for fn in self.fns[1:]], dtype=complex)

    def __call__(self, t, X):
        """X has shape (F, Q, F, Q, b) with the batch index innermost."""
        f = self.scalars(t)
        out = np.empty_like(X)
        _lindblad_kernel(X, out, self.diag_coef, f[self.diag_fn], self.term_meta,
                         self.term_coef, f[self.term_meta[:, 6]] if len(self.term_meta) else f[:0])
        return out


try:  # numba is optional; the pure-numpy fallback is slower but equivalent
    from numba import njit
except ImportError:  # pragma: no cover
    njit = None


def _lindblad_kernel_py(X, out, dcoef, dscal, meta, tcoef, tscal):
    out[...] = 0
    for i in range(dcoef.shape[0]):
        out += (dscal[i] * dcoef[i])[..., None] * X
    F = X.shape[0]
    for j in range(meta.shape[0]):
        k1, t1, s1, k2, t2, s2, _ = meta[j]
        n0, n1 = max(0, -k1), min(F, F - k1)
        m0, m1 = max(0, -k2), min(F, F - k2)
        if n0 >= n1 or m0 >= m1:
            continue
        out[n0:n1, t1, m0:m1, t2] += (tscal[j] * tcoef[j, n0:n1, m0:m1])[..., None] * \
            X[n0 + k1:n1 + k1, s1, m0 + k2:m1 + k2, s2]


if njit is not None:
    @njit(cache=True, fastmath=False)
    def _lindblad_kernel(X, out, dcoef, dscal, meta, tcoef, tscal):  # pragma: no cover
        F, Q, _, _, B = X.shape
        nd = dcoef.shape[0]
        nt = meta.shape[0]
        for n in range(F):
            for t in range(Q):
                for m in range(F):
                    for tp in range(Q):
                        c0 = 0j
                        for i in range(nd):
                            c0 += dscal[i] * dcoef[i, n, t, m, tp]
                        for b in range(B):
                            out[n, t, m, tp, b] = c0 * X[n, t, m, tp, b]
        for j in range(nt):
            k1 = meta[j, 0]
            t1 = meta[j, 1]
            s1 = meta[j, 2]
            k2 = meta[j, 3]
            t2 = meta[j, 4]
            s2 = meta[j, 5]
            sc = tscal[j]
            n0 = max(0, -k1)
            n1 = min(F, F - k1)
            m0 = max(0, -k2)
            m1 = min(F, F - k2)
            for n in range(n0, n1):
                for m in range(m0, m1):
                    c = sc * tcoef[j, n, m]
                    if c == 0:
                        continue
                    for b in range(B):
                        out[n, t1, m, t2, b] += c * X[n + k1, s1, m + k2, s2, b]
else:  # pragma: no cover
    _lindblad_kernel = _lindblad_kernel_py


# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B5 - _B4


def _trace_stack(Y, layout):
    if layout is None:
        return np.trace(Y, axis1=-2, axis2=-1)
    d = layout.dim
    return np.trace(Y.reshape(d, d, -1), axis1=0, axis2=1)


def integrate(rhs, y0: np.ndarray, duration: float, tol: float = 1e-10, first_step=None,
              layout=None, max_steps: int = 10_000_000):
    """Adaptive Dormand-Prince integration of ``dy/dt = rhs(t, y)``.

    The local error estimate is compared, in max-norm, against
    ``tol * max(1, max|y|)``.  Returns (y, accepted_steps, rejected, drift).
    """
    if duration < 0:
        raise ValueError("duration must be >= 0")
    y = np.array(y0, dtype=complex, copy=True)
    tr0 = _trace_stack(y, layout)
    if duration == 0:
        return y, 0, 0, 0.0
    shape = y.shape
    N = y.size
    K = np.empty((7, N), dtype=complex)
    t = 0.0
    h = first_step or min(duration, 0.01)
    K[0] = rhs(t, y).ravel()
    accepted = rejected = 0
    drift = 0.0
    h_min = duration * 1e-12
    yflat = y.ravel()
    while t < duration:
        h = min(h, duration - t)
        if h < h_min and duration - t > h_min:
            raise StepUnderflow(f"step {h:.3e} below {h_min:.3e} at t={t:.6g}")
        for i in range(1, 7):
            coeffs = np.asarray(_A[i], dtype=complex) * h
            yi = yflat + coeffs @ K[:i]
            K[i] = rhs(t + _C[i] * h, yi.reshape(shape)).ravel()
        y_new = yi  # the last stage argument is the 5th-order solution (FSAL)
        err = (h * _E.astype(complex)) @ K
        scale = tol * max(1.0, float(np.max(np.abs(y_new))))
        enorm = float(np.max(np.abs(err))) / scale
        if enorm <= 1.0 or h <= h_min:
            t += h
            yflat = y_new
            K[0] = K[6]
            accepted += 1
            drift = max(drift, float(np.max(np.abs(_trace_stack(yflat.reshape(shape), layout) - tr0))))
            fac = 5.0 if enorm == 0 else min(5.0, max(0.2, 0.9 * enorm ** -0.2))
        else:
            rejected += 1
            fac = max(0.2, 0.9 * enorm ** -0.25)
        h *= fac
        if accepted + rejected > max_steps:
            raise StepUnderflow("maximum step count exceeded")
    return yflat.reshape(shape), accepted, rejected, drift


def propagate(hamiltonian_schedule, collapse: Sequence[DenseOperator], input_op, duration: float,
              tol: float = 1e-10, layout: Optional[HilbertLayout] = None, first_step=None,
              rhs=None) -> PropagationResult:
    """Evolve ``input_op`` (or a stack of operators) under the Lindblad equation.

    ``hamiltonian_schedule`` may be ``None``, a constant :class:`DenseOperator`,
    a :class:`Schedule` or any callable ``t -> DenseOperator``.  Passing
    ``layout`` enables the compiled banded right-hand side.  ``input_op`` may be
    a DenseOperator, a (d, d) array or a (b, d, d) stack; the result matches.
    """
    single = isinstance(input_op, DenseOperator)
    X = np.asarray(input_op.mat if single else input_op, dtype=complex)
    squeeze = X.ndim == 2
    if squeeze:
        X = X[None]
    b, d, _ = X.shape
    if rhs is None:
        rhs = make_rhs(hamiltonian_schedule, collapse, layout)
    if layout is not None:
        F, Q = layout.fock_cutoff, layout.qudit_dim
        Y = np.ascontiguousarray(np.moveaxis(X, 0, -1)).reshape(F, Q, F, Q, b)
        Y, acc, rej, drift = integrate(rhs, Y, duration, tol, first_step, layout)
        Y = np.ascontiguousarray(np.moveaxis(Y.reshape(d, d, b), -1, 0))
    else:
        Y, acc, rej, drift = integrate(rhs, X, duration, tol, first_step, None)
    out = Y[0] if squeeze else Y
    if single:
        out = DenseOperator(out)
    return PropagationResult(out, acc, drift, rej)


def make_rhs(schedule, collapse, layout=None):
    if layout is None:
        if isinstance(schedule, DenseOperator):
            const = schedule
            schedule = lambda t: const
        return _DenseRHS(schedule, collapse)
    return _StructuredRHS(schedule, collapse, layout)


def liouvillian_superoperator(hamiltonian: Optional[np.ndarray], collapse: Sequence) -> np.ndarray:
    """Column-stacking superoperator of the Lindbladian (for small systems)."""
    mats = [c.mat if isinstance(c, DenseOperator) else np.asarray(c) for c in collapse]
    if hamiltonian is None:
        d = mats[0].shape[0]
        H = np.zeros((d, d), dtype=complex)
    else:
        H = hamiltonian.mat if isinstance(hamiltonian, DenseOperator) else np.asarray(hamiltonian)
        d = H.shape[0]
    eye = np.eye(d)
    # vec(A X B) = (B^T kron A) vec(X) with column stacking
    sup = -1j * (np.kron(eye, H) - np.kron(H.T, eye))
    for l in mats:
        ldl = l.conj().T @ l
        sup += np.kron(l.conj(), l) - 0.5 * (np.kron(eye, ldl) + np.kron(ldl.T, eye))
    return sup


# ----------------------------------------------------------------------------
# frequency-noise dephasing

@dataclass(frozen=True)
class DephasingSpectrum:
    """Two-sided frequency-noise spectrum of the storage mode.

    white: S(w) = A^2.  one_over_f: S(w) = 2 pi A^2 / |w| for |w| > ir_cutoff.
    """
    kind: str
    amplitude: float
    ir_cutoff: float = 0.0
    normalization: str = "custom"

    def __post_init__(self):
        if self.kind not in ("white", "one_over_f"):
            raise ValueError("kind must be 'white' or 'one_over_f'")
        if self.kind == "one_over_f" and self.ir_cutoff <= 0:
            raise ValueError("1/f spectrum needs a positive IR cutoff")

    def psd(self, omega):
        w = np.abs(np.asarray(omega, dtype=float))
        if self.kind == "white":
            return np.full_like(w, self.amplitude ** 2)
        with np.errstate(divide="ignore"):
            s = 2 * np.pi * self.amplitude ** 2 / w
        return np.where(w > self.ir_cutoff, s, 0.0)

    @classmethod
    def from_kappa_phi(cls, kind: str, kappa_phi: float, ir_cutoff: float = 0.0):
        """Fix A so the single-photon coherence (no echo) decays by 1/e at t = 1/kappa_phi.

        Equivalently the cat exponent at that time is 16 |alpha|^4.
        """
        t = 1.0 / kappa_phi
        if kind == "white":
            amp = math.sqrt(2.0 / t)
        else:
            arg = math.exp(1.5 - EULER_GAMMA) / (ir_cutoff * t)
            if arg <= 1:
                raise DomainError("IR cutoff too large for the 1/f normalization")
            amp = 1.0 / (t * math.sqrt(math.log(arg)))
        return cls(kind, amp, ir_cutoff, normalization="single-photon coherence 1/e at t=1/kappa_phi")


def filter_function(omega, t: float, echo: bool):
    """Filter F(w t): 2 sin^2(wt/2) free decay, 8 sin^4(wt/4) with a mid-point echo."""
    x = np.asarray(omega, dtype=float) * t
    if echo:
        return 8.0 * np.sin(x / 4.0) ** 4
    return 2.0 * np.sin(x / 2.0) ** 2


def analytic_dephasing(spectrum: DephasingSpectrum, echo: bool, alpha: complex, t: float) -> float:
    """Closed-form cat phase-error exponent Gamma(t)."""
    if t < 0:
        raise ValueError("t must be >= 0")
    pref = 16.0 * abs(alpha) ** 4
    A = spectrum.amplitude
    if t == 0 or A == 0:
        return 0.0
    if spectrum.kind == "white":
        return pref * A * A * t / 2.0
    if echo:
        return pref * (A * t) ** 2 * math.log(2.0)
    arg = math.exp(1.5 - EULER_GAMMA) / (spectrum.ir_cutoff * t)
    if arg <= 1.0:
        raise DomainError(f"log argument {arg:.3g} <= 1: IR cutoff too close to 1/t")
    return pref * (A * t) ** 2 * math.log(arg)


def numerical_dephasing(spectrum: DephasingSpectrum, echo: bool, alpha: complex, t: float,
                        n_points: int = 400_001, x_max: float = 4000.0) -> float:
    """Gamma(t) by direct quadrature of the filter-function integral over all frequencies."""
    from scipy.integrate import simpson
    pref = 16.0 * abs(alpha) ** 4
    if t == 0:
        return 0.0
    x_lo = spectrum.ir_cutoff * t if spectrum.kind == "one_over_f" else 0.0
    # log-spaced grid for 1/f, linear for white
    if spectrum.kind == "one_over_f":
        x = np.geomspace(max(x_lo, 1e-12), x_max, n_points)
    else:
        x = np.linspace(1e-9, x_max, n_points)
    w = x / t
    integrand = spectrum.psd(w) * filter_function(w, t, echo) / w ** 2
    val = 2.0 * simpson(integrand, x=w) / (2 * np.pi)
    # analytic tail beyond x_max, filter replaced by its mean value
    mean_f = 3.0 if echo else 1.0
    w_max = x_max / t
    if spectrum.kind == "white":
        val += 2.0 * spectrum.amplitude ** 2 * mean_f / w_max / (2 * np.pi)
    else:
        val += 2.0 * spectrum.amplitude ** 2 * mean_f / (2 * w_max ** 2)
    return pref * val


@dataclass
class DephasingResult:
    times: np.ndarray
    p_z: np.ndarray
    gamma: np.ndarray
    gamma_stderr: np.ndarray
    n_traj: int
    metadata: dict = field(default_factory=dict)


def _noise_realization(spectrum, n_samples, dt, rng):
    """Frequency-noise samples with two-sided PSD ``spectrum`` on a uniform grid."""
    if spectrum.kind == "white":
        return rng.standard_normal(n_samples) * (spectrum.amplitude / math.sqrt(dt))
    white = rng.standard_normal(n_samples)
    spec = np.fft.rfft(white)
    freqs = 2 * np.pi * np.fft.rfftfreq(n_samples, d=dt)
    shape = np.zeros_like(freqs)
    ok = freqs >= spectrum.ir_cutoff * (1 - 1e-9)
    shape[ok] = np.sqrt(spectrum.psd(np.maximum(freqs[ok], spectrum.ir_cutoff)) / dt)
    return np.fft.irfft(spec * shape, n=n_samples)


def ir_cutoff_for(window: float, n_windows: int = 10_000) -> float:
    """IR cutoff 2 pi / (n_windows * window) of a realization split into windows."""
    return 2 * np.pi / (n_windows * window)


def dephasing_trajectories(spectrum: DephasingSpectrum, protocol: dict, n_traj: int,
                           seed: int = 0) -> DephasingResult:
    """Monte Carlo estimate of the cat phase-error probability p_Z(t).

    ``protocol`` keys: ``alpha``, ``times`` (sample times within one window),
    ``echo`` (bool), optional ``window`` (default max(times)) and
    ``samples_per_window`` (default 256).  Each realization contributes the
    branch phase 4|alpha|^2 * integral of s(t') dw(t') with s = +-1 the echo
    sign; coherences are averaged and converted to p_Z = (1 - <cos>)/2.

    1/f noise is generated as one long realization spanning ``n_traj`` windows
    with IR cutoff 2 pi / (n_traj * window) unless the spectrum says otherwise.
    """
    if n_traj < 1:
        raise ValueError("n_traj must be >= 1")
    alpha = protocol["alpha"]
    times = np.atleast_1d(np.asarray(protocol["times"], dtype=float))
    echo = bool(protocol.get("echo", False))
    T = float(protocol.get("window", times.max()))
    spw = int(protocol.get("samples_per_window", 256))
    dt = T / spw
    rng = np.random.Generator(np.random.Philox(key=int(seed)))
    if spectrum.amplitude == 0:
        z = np.zeros_like(times)
        return DephasingResult(times, z, z.copy(), z.copy(), n_traj)
    total = n_traj * spw
    dw = _noise_realization(spectrum, total, dt, rng).reshape(n_traj, spw)
    # cumulative phase on the window grid; sample points at k*dt
    tgrid = np.arange(spw + 1) * dt
    csum = np.concatenate([np.zeros((n_traj, 1)), np.cumsum(dw, axis=1) * dt], axis=1)

    p_z = np.zeros_like(times)
    gam = np.zeros_like(times)
    gerr = np.zeros_like(times)
    scale = 4.0 * abs(alpha) ** 2
    for i, t in enumerate(times):
        if t == 0:
            continue
        if echo:
            phi = 2 * _interp_rows(csum, tgrid, t / 2) - _interp_rows(csum, tgrid, t)
        else:
            phi = _interp_rows(csum, tgrid, t)
        c = np.cos(scale * phi)
        mean_c = c.mean()
        sd = c.std(ddof=1) / math.sqrt(n_traj) if n_traj > 1 else 0.0
        p_z[i] = 0.5 * (1.0 - mean_c)
        gam[i] = -math.log(mean_c) if mean_c > 0 else np.inf
        gerr[i] = sd / mean_c if mean_c > 0 else np.inf
    meta = {"kind": spectrum.kind, "echo": echo, "amplitude": spectrum.amplitude,
            "ir_cutoff": spectrum.ir_cutoff, "normalization": spectrum.normalization,
            "samples_per_window": spw, "window": T, "seed": int(seed)}
    return DephasingResult(times, p_z, gam, gerr, n_traj, meta)


def _interp_rows(csum, tgrid, tau):
    j = np.searchsorted(tgrid, tau, side="right") - 1
    j = min(max(j, 0), len(tgrid) - 2)
    w = (tau - tgrid[j]) / (tgrid[j + 1] - tgrid[j])
    return csum[:, j] * (1 - w) + csum[:, j + 1] * w
