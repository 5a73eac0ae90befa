"""Gate simulations (CX, CRX, stabilized idle) and Pauli-channel extraction.

Encoded Pauli strings list the cat qubit first and the transmon second, e.g.
``"ZI"`` is a cat phase flip.  The cat codewords are |0_C>, |1_C> (close to
|alpha>, |-alpha>); the transmon code levels are (g, e) or (g, f).
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Dict, Optional

import numpy as np
import scipy.sparse as sp
from scipy.linalg import expm
from scipy.sparse.linalg import splu

from . import dynamics as dy
from . import hilbert as hs
from . import pulses as pl
from .errors import ConvergenceFailure, NonPhysicalChannel
from .hilbert import DenseOperator, HilbertLayout

PAULI_1Q = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}
CLIP_TOL = 1e-6


def pauli_labels(n_qubits: int):
    return ["".join(p) for p in itertools.product("IXYZ", repeat=n_qubits)]


def pauli_matrix(label: str) -> np.ndarray:
    out = np.array([[1.0 + 0j]])
    for ch in label:
        out = np.kron(out, PAULI_1Q[ch])
    return out


def _commutes(a: str, b: str) -> bool:
    anti = sum(1 for x, y in zip(a, b) if x != "I" and y != "I" and x != y)
    return anti % 2 == 0


@lru_cache(maxsize=4)
def _sign_matrix(n_qubits: int) -> np.ndarray:
    labels = pauli_labels(n_qubits)
    return np.array([[1.0 if _commutes(a, b) else -1.0 for b in labels] for a in labels])


def rx(theta: float) -> np.ndarray:
    return math.cos(theta / 2) * np.eye(2) - 1j * math.sin(theta / 2) * PAULI_1Q["X"]


# ----------------------------------------------------------------------------
# Pauli channels

@dataclass
class PauliChannel:
    n_qubits: int
    probs: Dict[str, float]
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        labels = pauli_labels(self.n_qubits)
        self.probs = {k: float(self.probs.get(k, 0.0)) for k in labels}
        bad = [k for k in self.probs if len(k) != self.n_qubits]
        if bad:
            raise ValueError(f"bad Pauli labels {bad}")

    def total(self) -> float:
        return sum(self.probs.values())

    def vector(self) -> np.ndarray:
        return np.array([self.probs[k] for k in pauli_labels(self.n_qubits)])

    def nontrivial(self):
        """Non-identity (label, probability) pairs with p > 0."""
        ident = "I" * self.n_qubits
        return [(k, p) for k, p in self.probs.items() if k != ident and p > 0]

    def apply(self, rho: np.ndarray) -> np.ndarray:
        return sum(p * pauli_matrix(k) @ rho @ pauli_matrix(k).conj().T
                   for k, p in self.probs.items() if p != 0)

    def to_json(self, gate: str = "", params: Optional[dict] = None) -> dict:
        meta = {"clipped_mass": 0.0, "cutoff": None, "tol": None}
        meta.update(self.metadata)
        return {"gate": gate or self.metadata.get("gate", ""), "params": params or self.metadata.get("params", {}),
                "pauli_probs": dict(self.probs), "metadata": _jsonable(meta)}

    @classmethod
    def from_json(cls, obj) -> "PauliChannel":
        if isinstance(obj, str):
            obj = json.loads(obj)
        probs = obj["pauli_probs"]
        n = len(next(iter(probs)))
        meta = dict(obj.get("metadata", {}))
        meta.setdefault("gate", obj.get("gate", ""))
        meta.setdefault("params", obj.get("params", {}))
        return cls(n, probs, meta)


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, complex):
        return [x.real, x.imag]
    return x


@dataclass
class GateMetrics:
    avg_gate_infidelity: float
    p_bit_cat: float
    p_Z_cat: float
    eta_cat: float

    def to_dict(self):
        return {"avg_gate_infidelity": self.avg_gate_infidelity, "p_bit_cat": self.p_bit_cat,
                "p_Z_cat": self.p_Z_cat, "eta_cat": self.eta_cat}


def gate_metrics(channel: PauliChannel) -> GateMetrics:
    """Fidelity and cat error metrics; the cat is the first Pauli letter."""
    d = 2 ** channel.n_qubits
    p_id = channel.probs["I" * channel.n_qubits]
    infid = d / (d + 1) * (1.0 - p_id)
    p_bit = sum(p for k, p in channel.probs.items() if k[0] in "XY")
    p_z = sum(p for k, p in channel.probs.items() if k[0] == "Z")
    eta = p_z / p_bit if p_bit > 0 else math.inf
    return GateMetrics(infid, p_bit, p_z, eta)


def ptm_diagonal(noisy_map: Callable, ideal_gate: np.ndarray, n_qubits: int) -> np.ndarray:
    """R_ii = (1/d) tr[P_i E(U^dag P_i U)] for the error map E = noisy o ideal^-1."""
    labels = pauli_labels(n_qubits)
    d = 2 ** n_qubits
    U = np.asarray(ideal_gate, dtype=complex)
    Ps = np.array([pauli_matrix(k) for k in labels])
    ins = np.einsum("ij,kjl,lm->kim", U.conj().T, Ps, U)
    outs = np.asarray(noisy_map(ins))
    return np.real(np.einsum("kij,kji->k", Ps, outs)) / d


def pauli_probs_from_ptm(R: np.ndarray, n_qubits: int) -> np.ndarray:
    """Inverse Walsh-Hadamard transform of the PTM diagonal."""
    S = _sign_matrix(n_qubits)
    return S @ R / (4 ** n_qubits)


def extract_pauli_channel(noisy_map: Callable, ideal_gate: np.ndarray, codewords: Optional[np.ndarray] = None,
                          n_qubits: Optional[int] = None) -> PauliChannel:
    """Twirled Pauli channel of ``noisy_map`` relative to ``ideal_gate``.

    ``noisy_map`` acts on a stack of operators.  Without ``codewords`` it maps
    code-space matrices to code-space matrices.  With ``codewords`` (a d x D
    isometry) inputs are embedded in the full space and outputs projected back.
    """
    U = np.asarray(ideal_gate, dtype=complex)
    D = U.shape[0]
    n = n_qubits or int(round(math.log2(D)))
    if codewords is not None:
        C = np.asarray(codewords, dtype=complex)
        inner = noisy_map
        noisy = lambda ms: np.einsum("ai,kab,bj->kij", C.conj(), inner(np.einsum("ia,kab,jb->kij", C, ms, C.conj())), C)
    else:
        noisy = noisy_map
    R = ptm_diagonal(noisy, U, n)
    p = pauli_probs_from_ptm(R, n)
    most_negative = float(p.min())
    if most_negative < -CLIP_TOL:
        raise NonPhysicalChannel(f"Pauli probability {most_negative:.3e} < -{CLIP_TOL}")
    clipped = float(-p[p < 0].sum())
    p = np.clip(p, 0.0, None)
    p = p / p.sum()
    labels = pauli_labels(n)
    return PauliChannel(n, dict(zip(labels, p)), {"clipped_mass": clipped, "ptm_diagonal": R.tolist()})


def channel_from_probs_map(channel: PauliChannel):
    """The Pauli channel as a linear map on stacks of matrices (test oracle)."""
    mats = [(pauli_matrix(k), p) for k, p in channel.probs.items() if p]
    return lambda ms: np.array([sum(p * P @ m @ P.conj().T for P, p in mats) for m in ms])


# ----------------------------------------------------------------------------
# recovery maps

@lru_cache(maxsize=16)
def _storage_functionals_cached(alpha: complex, cutoff: int):
    return _storage_functionals(alpha, cutoff)


def storage_functionals(alpha: complex, cutoff: int) -> np.ndarray:
    """Conserved quantities J[i, j] (parity basis +, -) of D[a^2 - alpha^2].

    The infinite-time map sends X to sum_ij tr(J_ij X) |C_i><C_j|.
    """
    return _storage_functionals_cached(complex(alpha), int(cutoff))


def _storage_functionals(alpha, F):
    n = np.arange(F)
    even, odd = n[n % 2 == 0], n[n % 2 == 1]
    a = hs.osc_annihilation(F)
    L = a @ a - alpha ** 2 * np.eye(F)
    LdL = L.conj().T @ L
    Lo, Le = L[np.ix_(odd, odd)], L[np.ix_(even, even)]
    Ao, Ae = LdL[np.ix_(odd, odd)], LdL[np.ix_(even, even)]
    No, Ne = len(odd), len(even)
    # adjoint Lindbladian on the odd-row / even-column block, row-major vec
    M = (sp.kron(sp.csr_matrix(Lo.conj().T), sp.csr_matrix(Le.T))
         - 0.5 * sp.kron(sp.csr_matrix(Ao), sp.identity(Ne))
         - 0.5 * sp.kron(sp.identity(No), sp.csr_matrix(Ae.T))).tocsc()
    rng = np.random.Generator(np.random.Philox(key=12345))
    x = rng.standard_normal(No * Ne) + 0j
    try:
        lu = splu(M)
    except RuntimeError:
        lu = splu(M + 1e-13 * sp.identity(No * Ne, format="csc"))
    for _ in range(3):
        x = lu.solve(x)
        x /= np.linalg.norm(x)
    resid = np.linalg.norm(M @ x)
    scale = sp.linalg.norm(M)
    if not np.isfinite(resid) or resid > 1e-9 * scale:
        raise ConvergenceFailure(f"no conserved coherence found (residual {resid:.2e})")
    Jpm_block = x.reshape(No, Ne)
    plus = hs.osc_cat(alpha, 1, F)
    minus = hs.osc_cat(alpha, -1, F)
    normval = minus[odd].conj() @ Jpm_block @ plus[even]
    Jpm_block = Jpm_block / normval
    J = np.zeros((2, 2, F, F), dtype=complex)
    J[0, 0] = np.diag((n % 2 == 0).astype(float))
    J[1, 1] = np.diag((n % 2 == 1).astype(float))
    J[0, 1][np.ix_(odd, even)] = Jpm_block
    J[1, 0] = J[0, 1].conj().T
    return J


_PM_TO_CODE = np.array([[1, 1], [1, -1]], dtype=complex) / math.sqrt(2)


def storage_recovery_coefficients(blocks: np.ndarray, alpha: complex, cutoff: int) -> np.ndarray:
    """Apply the storage recovery to oscillator blocks.

    ``blocks`` has shape (F, ..., F, ...) -- caller handles layout; here we
    accept (F, F, *rest) and return codeword-basis coefficients (2, 2, *rest).
    """
    J = storage_functionals(alpha, cutoff)
    c = np.einsum("ijmn,nm...->ij...", J, blocks)
    # parity basis -> codeword basis: M_code = B^dag c B with B = columns of |0>,|1> in (+,-)
    return np.einsum("ai,ij...,jb->ab...", _PM_TO_CODE.conj().T, c, _PM_TO_CODE)


def transmon_recovery_stack(Y: np.ndarray, target: str = "transmon_gf") -> np.ndarray:
    """Send |e> population to |f> (Kraus: P_g + P_f and |f><e|) on a (F,Q,F,Q,b) stack."""
    if target != "transmon_gf":
        return Y
    out = np.zeros_like(Y)
    for t in (0, 2):
        for u in (0, 2):
            out[:, t, :, u] = Y[:, t, :, u]
    out[:, 2, :, 2] += Y[:, 1, :, 1]
    return out


def code_matrices_from_stack(Y: np.ndarray, alpha: complex, levels, transmon_target=None) -> np.ndarray:
    """Recover a (F,Q,F,Q,b) stack and return code-space matrices (b, 4, 4)."""
    F = Y.shape[0]
    if transmon_target is not None:
        Y = transmon_recovery_stack(Y, transmon_target)
    sub = Y[:, levels][:, :, :, levels]  # (F, 2, F, 2, b)
    blocks = np.moveaxis(sub, 2, 1)  # (F, F, 2, 2, b)
    c = storage_recovery_coefficients(blocks, alpha, F)  # (2, 2, t, u, b) cat a,b
    # code index (cat, transmon): out[b, (a, t), (a2, u)]
    out = np.transpose(c, (4, 0, 2, 1, 3)).reshape(-1, 4, 4)
    return out


def recovery_map(state_or_op, target: str = "storage_cat", alpha: complex = None,
                 layout: Optional[HilbertLayout] = None) -> DenseOperator:
    """Ideal recovery projected to the code space, returned on the full space.

    storage_cat: infinite-time D[a^2 - alpha^2] map on the oscillator (applied
    per transmon block).  transmon_gf: |e> population moved to |f>.
    Accepts an oscillator-only operator when ``layout`` is None.
    """
    X = state_or_op.mat if isinstance(state_or_op, DenseOperator) else np.asarray(state_or_op, dtype=complex)
    if X.ndim == 1:
        X = np.outer(X, X.conj())
    if layout is None:
        F = X.shape[0]
        if target != "storage_cat":
            raise ValueError("transmon recovery needs a layout")
        c = storage_recovery_coefficients(X, alpha, F)
        Cw = hs.cat_codewords(alpha, F)
        return DenseOperator(Cw @ c @ Cw.conj().T)
    F, Q = layout.fock_cutoff, layout.qudit_dim
    Y = X.reshape(F, Q, F, Q)[..., None]
    if target == "transmon_gf":
        if Q != 3:
            raise ValueError("transmon_gf recovery needs a 3-level transmon")
        return DenseOperator(transmon_recovery_stack(Y)[..., 0].reshape(F * Q, F * Q))
    if target != "storage_cat":
        raise ValueError(f"unknown recovery target {target!r}")
    blocks = np.moveaxis(Y, 2, 1)  # (F, F, Q, Q, 1)
    c = storage_recovery_coefficients(blocks, alpha, F)[..., 0]  # (2, 2, Q, Q)
    Cw = hs.cat_codewords(alpha, F)
    full = np.einsum("na,abtu,mb->ntmu", Cw, c, Cw.conj())
    return DenseOperator(full.reshape(F * Q, F * Q))


# ----------------------------------------------------------------------------
# stack helpers (stacks are shaped (F, Q, F, Q, b))

def conj_osc(Y, U):
    Y1 = np.tensordot(U, Y, axes=(1, 0))
    Y2 = np.tensordot(Y1, U.conj(), axes=(2, 1))  # (F, Q, Q, b, F)
    return np.ascontiguousarray(np.moveaxis(Y2, -1, 2))


def conj_qudit(Y, V):
    Y1 = np.moveaxis(np.tensordot(V, Y, axes=(1, 1)), 0, 1)
    Y2 = np.tensordot(Y1, V.conj(), axes=(3, 1))  # (F, Q, F, b, Q)
    return np.ascontiguousarray(np.moveaxis(Y2, -1, 3))


def code_embedding(alpha: complex, layout: HilbertLayout, levels) -> np.ndarray:
    """Full-space isometry (d x 4) with columns |c> (x) |level>, cat index major."""
    Cw = hs.cat_codewords(alpha, layout.fock_cutoff)
    cols = []
    for c in range(2):
        for lv in levels:
            e = np.zeros(layout.qudit_dim)
            e[lv] = 1.0
            cols.append(np.kron(Cw[:, c], e))
    return np.array(cols).T


def _unit_inputs(C, layout):
    """Matrix units |c_a><c_b| (a <= b) as a stack (F, Q, F, Q, b)."""
    pairs = [(a, b) for a in range(C.shape[1]) for b in range(a, C.shape[1])]
    F, Q = layout.fock_cutoff, layout.qudit_dim
    stack = np.empty((F, Q, F, Q, len(pairs)), dtype=complex)
    for k, (a, b) in enumerate(pairs):
        stack[..., k] = np.outer(C[:, a], C[:, b].conj()).reshape(F, Q, F, Q)
    return stack, pairs


def _process_from_units(outs, pairs, D):
    """Linear map on code matrices from outputs for matrix units (a <= b)."""
    T = np.zeros((D, D, D, D), dtype=complex)
    for k, (a, b) in enumerate(pairs):
        T[a, b] = outs[k]
        if a != b:
            T[b, a] = outs[k].conj().T
    return lambda ms: np.einsum("kab,abij->kij", np.asarray(ms), T)


# ----------------------------------------------------------------------------
# gate specifications

@dataclass
class GateSpec:
    kind: str
    alpha: complex
    chi: float = 1.0
    envelope: Optional[pl.Envelope] = None
    durations: dict = field(default_factory=dict)
    kappa2_over_chi: float = 0.1

    def __post_init__(self):
        if self.kind not in ("CX_gf", "CX_ge", "CRX_full9", "CRX_simple5", "Idle"):
            raise ValueError(f"unknown gate kind {self.kind!r}")


def default_crx_envelope(alpha: complex, kind: str = "semiclassical_2comp", chi: float = 1.0,
                         deltas=None, variant: str = "full9", T_sel: Optional[float] = None) -> pl.Envelope:
    """Selective pulse used by the CRX sequence (angle pi/4 for full9, pi/2 for simple5)."""
    T = T_sel if T_sel is not None else math.pi / (5 * chi)
    theta = math.pi / 4 if variant == "full9" else math.pi / 2
    n2 = 4 * abs(alpha) ** 2
    if kind == "truncated_gaussian":
        return pl.truncated_gaussian(1, T, target_angle=theta)
    if kind in ("semiclassical_2comp", "approx_2comp"):
        d = deltas or (max(chi, (n2 - 2 * math.sqrt(n2)) * chi), (n2 + 2 * math.sqrt(n2)) * chi)
        base = pl.truncated_gaussian(2, T, target_angle=theta)
        return (pl.semiclassical_2comp if kind == "semiclassical_2comp" else pl.approx_2comp)(base, *d)
    if kind == "standard_drag":
        p = deltas or (-1.0 / (n2 * chi), 0.0, 0.0)
        return pl.standard_drag(pl.truncated_gaussian(1, T, target_angle=theta), *p)
    if kind == "exact_1comp":
        d = deltas or (n2 * chi,)
        return pl.exact_1comp(pl.truncated_gaussian(1, T, target_angle=theta), *d)
    if kind == "semiclassical_3comp":
        d = deltas or ((n2 - 2 * math.sqrt(n2)) * chi, n2 * chi, (n2 + 2 * math.sqrt(n2)) * chi)
        return pl.semiclassical_3comp(pl.truncated_gaussian(3, T, target_angle=theta), *d)
    raise ValueError(kind)


def crx_schedule(alpha: complex, envelope: pl.Envelope, variant: str = "full9", chi: float = 1.0):
    """The CRX step list as tuples understood by the simulators.

    ('disp', beta) | ('sel', sign) | ('unsel', theta) | ('idle', tau) |
    ('frame', storage_angle, transmon_rx_angle).
    """
    T_sel = envelope.duration
    phi = chi * T_sel
    r = np.exp(-1j * phi)  # storage rotation accumulated per selective pair
    total = math.pi / chi
    if variant == "full9":
        tau = (total - 4 * T_sel) / 5
        if tau < -1e-12:
            raise ValueError("selective pulses exceed the CRX duration")
        tau = max(tau, 0.0)
        return [("disp", alpha), ("sel", 1), ("idle", tau), ("unsel", math.pi), ("idle", tau),
                ("sel", 1), ("disp", -2 * alpha * r), ("idle", tau), ("sel", -1), ("idle", tau),
                ("unsel", -math.pi), ("idle", tau), ("sel", -1), ("disp", alpha * r * r),
                ("frame", 2 * phi, math.pi / 2)]
    if variant == "simple5":
        tau = max((total - 2 * T_sel) / 2, 0.0)
        return [("disp", alpha), ("sel", 1), ("idle", tau), ("unsel", math.pi), ("idle", tau),
                ("sel", 1), ("disp", -alpha * r), ("frame", phi, -math.pi)]
    raise ValueError(f"unknown CRX variant {variant!r}")


def crx_ideal_unitary() -> np.ndarray:
    """|0><0| (x) I + |1><1| (x) R_X(pi) on (cat, transmon): (S^dag (x) I) CX."""
    P0 = np.diag([1.0, 0.0]).astype(complex)
    P1 = np.diag([0.0, 1.0]).astype(complex)
    return np.kron(P0, np.eye(2)) + np.kron(P1, rx(math.pi))


def cx_ideal_unitary() -> np.ndarray:
    """Transmon-controlled cat X on (cat, transmon)."""
    return np.kron(np.eye(2), np.diag([1.0, 0.0])) + np.kron(PAULI_1Q["X"], np.diag([0.0, 1.0]))


# ----------------------------------------------------------------------------
# simulators

@dataclass
class GateResult:
    channel: PauliChannel
    metrics: GateMetrics
    info: dict = field(default_factory=dict)

    def __iter__(self):  # allows ``channel, metrics = simulate_cx(...)``
        yield self.channel
        yield self.metrics


def _drive_schedule(env: pl.Envelope, layout: HilbertLayout, static: DenseOperator, sign: int):
    F, Q = layout.fock_cutoff, layout.qudit_dim
    up = np.zeros((Q, Q), dtype=complex)
    up[1, 0] = 1.0
    e_proj = hs.qudit_projector(1, Q)
    raise_op = np.kron(np.eye(F), up)
    eop = np.kron(np.eye(F), e_proj)

    def comp(t):
        re, im, _, dl = env._components(np.array([t]), env.amplitude)
        return sign * re[0], sign * im[0], dl[0]

    memo = {}

    def c(t):
        if t not in memo:
            if len(memo) > 64:
                memo.clear()
            memo[t] = comp(t)
        return memo[t]

    terms = [(lambda t: 0.5 * (c(t)[0] + 1j * c(t)[1]), raise_op),
             (lambda t: 0.5 * (c(t)[0] - 1j * c(t)[1]), raise_op.T.copy()),
             (lambda t: -c(t)[2], eop)]
    return dy.Schedule(static, terms)


def simulate_crx(model: dy.NoiseModel, alpha: complex, envelope: Optional[pl.Envelope] = None,
                 variant: str = "full9", chi: float = 1.0, tol: float = 1e-10,
                 cutoff: Optional[int] = None) -> GateResult:
    """Lindblad simulation of the CRX sequence and its twirled Pauli channel."""
    if envelope is None:
        envelope = default_crx_envelope(alpha, chi=chi, variant=variant)
    F = cutoff or hs.fock_cutoff_for(4 * abs(alpha) ** 2)
    hs._check_cutoff(2 * alpha, F)
    layout = HilbertLayout(F, 2)
    levels = (0, 1)
    C = code_embedding(alpha, layout, levels)
    Y, pairs = _unit_inputs(C, layout)
    collapse = dy.collapse_operators(model, layout, chi=chi)
    disp_static = hs.dispersive_hamiltonian(chi, chi, layout)
    sel_rhs = {s: dy.make_rhs(_drive_schedule(envelope, layout, disp_static, s), collapse, layout)
               for s in (1, -1)}
    idle_rhs = dy.make_rhs(None, collapse, layout) if collapse else None
    steps = 0
    drift = 0.0
    for step in crx_schedule(alpha, envelope, variant, chi):
        kind = step[0]
        if kind == "disp":
            Y = conj_osc(Y, hs.osc_displacement(step[1], F))
        elif kind == "unsel":
            Y = conj_qudit(Y, rx(step[1]))
        elif kind == "sel":
            Y, acc, _, dr = dy.integrate(sel_rhs[step[1]], Y, envelope.duration, tol, layout=layout)
            steps += acc
            drift = max(drift, dr)
        elif kind == "idle":
            if idle_rhs is not None and step[1] > 0:
                Y, acc, _, dr = dy.integrate(idle_rhs, Y, step[1], tol, layout=layout)
                steps += acc
                drift = max(drift, dr)
        elif kind == "frame":
            Y = conj_osc(Y, hs.osc_rotation(step[1], F))
            Y = conj_qudit(Y, rx(step[2]))
    outs = code_matrices_from_stack(Y, alpha, list(levels))
    noisy = _process_from_units(outs, pairs, 4)
    ch = extract_pauli_channel(noisy, crx_ideal_unitary(), n_qubits=2)
    ch.metadata.update(gate=f"CRX_{variant}", cutoff=F, tol=tol, steps=steps, trace_drift=drift,
                       params={"alpha": [complex(alpha).real, complex(alpha).imag], "chi": chi,
                               "envelope": envelope.kind, "envelope_params": list(envelope.params),
                               "T_sel": envelope.duration, "noise": model.to_dict()},
                       frame_phase_tracked=2 * chi * envelope.duration if variant == "full9"
                       else chi * envelope.duration)
    return GateResult(ch, gate_metrics(ch), {"steps": steps})


def simulate_cx(model: dy.NoiseModel, alpha: complex, subspace: str = "gf", chi: float = 1.0,
                tol: float = 1e-10, cutoff: Optional[int] = None) -> GateResult:
    """Free dispersive evolution for pi/chi, recovery, twirled channel."""
    if subspace not in ("gf", "ge"):
        raise ValueError("subspace must be 'gf' or 'ge'")
    F = cutoff or hs.fock_cutoff_for(abs(alpha) ** 2)
    Q = 3 if subspace == "gf" else 2
    layout = HilbertLayout(F, Q)
    levels = (0, 2) if subspace == "gf" else (0, 1)
    C = code_embedding(alpha, layout, levels)
    Y, pairs = _unit_inputs(C, layout)
    collapse = dy.collapse_operators(model, layout, chi=chi)
    H = hs.dispersive_hamiltonian(chi, chi, layout)
    rhs = dy.make_rhs(H, collapse, layout)
    Y, acc, _, drift = dy.integrate(rhs, Y, math.pi / chi, tol, layout=layout)
    outs = code_matrices_from_stack(Y, alpha, list(levels),
                                    transmon_target="transmon_gf" if subspace == "gf" else None)
    noisy = _process_from_units(outs, pairs, 4)
    ch = extract_pauli_channel(noisy, cx_ideal_unitary(), n_qubits=2)
    ch.metadata.update(gate=f"CX_{subspace}", cutoff=F, tol=tol, steps=acc, trace_drift=drift,
                       params={"alpha": [complex(alpha).real, complex(alpha).imag], "chi": chi,
                               "noise": model.to_dict()})
    return GateResult(ch, gate_metrics(ch), {"steps": acc})


def storage_collapse(model: dy.NoiseModel, cutoff: int, kappa2_over_chi: float = 0.0,
                     alpha: complex = 0.0, chi: float = 1.0):
    """Oscillator-only jump operators (loss, dephasing, optional two-photon dissipation)."""
    a = hs.osc_annihilation(cutoff)
    n = hs.osc_number(cutoff)
    ops = []
    if model.kappa1_over_chi > 0:
        ops.append(math.sqrt(model.kappa1_over_chi * chi) * a)
    if model.kappa_phi_over_chi > 0:
        ops.append(math.sqrt(model.kappa_phi_over_chi * chi) * n)
    if kappa2_over_chi > 0:
        ops.append(math.sqrt(kappa2_over_chi * chi) * (a @ a - alpha ** 2 * np.eye(cutoff)))
    return ops


def simulate_idle(model: dy.NoiseModel, alpha: complex, kappa2_over_chi: float = 0.1,
                  duration: Optional[float] = None, chi: float = 1.0,
                  cutoff: Optional[int] = None) -> PauliChannel:
    """Stabilized storage idle (one-qubit channel), exact superoperator exponential."""
    duration = math.pi / chi if duration is None else duration
    F = cutoff or hs.fock_cutoff_for(abs(alpha) ** 2)
    Cw = hs.cat_codewords(alpha, F)
    ops = storage_collapse(model, F, kappa2_over_chi, alpha, chi)
    if ops:
        E = expm(dy.liouvillian_superoperator(None, ops) * duration)
    else:
        E = np.eye(F * F)

    def noisy(ms):
        out = []
        for m in ms:
            X = Cw @ m @ Cw.conj().T
            Xt = (E @ X.reshape(-1, order="F")).reshape(F, F, order="F")
            out.append(storage_recovery_coefficients(Xt, alpha, F))
        return np.array(out)

    ch = extract_pauli_channel(noisy, np.eye(2), n_qubits=1)
    ch.metadata.update(gate="Idle", cutoff=F, tol=0.0,
                       params={"alpha": [complex(alpha).real, complex(alpha).imag], "chi": chi,
                               "kappa2_over_chi": kappa2_over_chi, "duration": duration,
                               "noise": model.to_dict()})
    return ch


def simulate(spec: GateSpec, model: dy.NoiseModel, **kw):
    if spec.kind.startswith("CX"):
        return simulate_cx(model, spec.alpha, spec.kind[3:], spec.chi, **kw)
    if spec.kind.startswith("CRX"):
        return simulate_crx(model, spec.alpha, spec.envelope, spec.kind[4:], spec.chi, **kw)
    return simulate_idle(model, spec.alpha, spec.kappa2_over_chi,
                         spec.durations.get("total"), spec.chi, **kw)


# ----------------------------------------------------------------------------
# decoherence-free CRX

def crx_unitary_action(alpha: complex, envelope: pl.Envelope, variant: str = "full9",
                       chi: float = 1.0, cutoff: Optional[int] = None):
    """Apply the noiseless CRX sequence to the four code states.

    Returns (W, F) with W of shape (F, 2, 4): column j is the output state for
    code basis state j, stored as oscillator x transmon amplitudes.
    """
    F = cutoff or hs.fock_cutoff_for(4 * abs(alpha) ** 2)
    hs._check_cutoff(2 * alpha, F)
    Cw = hs.cat_codewords(alpha, F)
    W = np.zeros((F, 2, 4), dtype=complex)
    for c in range(2):
        for t in range(2):
            W[:, t, 2 * c + t] = Cw[:, c]
    blocks = pl.selective_block_propagators(envelope, chi, F)  # (F, 2, 2) for the + sign
    Zq = np.diag([1.0, -1.0])
    sel = {1: blocks, -1: np.einsum("ij,njk,kl->nil", Zq, blocks, Zq)}
    for step in crx_schedule(alpha, envelope, variant, chi):
        kind = step[0]
        if kind == "disp":
            W = np.einsum("nm,mtj->ntj", hs.osc_displacement(step[1], F), W)
        elif kind == "sel":
            W = np.einsum("nts,nsj->ntj", sel[step[1]], W)
        elif kind == "unsel":
            W = np.einsum("ts,nsj->ntj", rx(step[1]), W)
        elif kind == "frame":
            W = np.exp(1j * step[1] * np.arange(F))[:, None, None] * W
            W = np.einsum("ts,nsj->ntj", rx(step[2]), W)
    return W, F


def unitary_channel(alpha: complex, W: np.ndarray, F: int, ideal: np.ndarray) -> PauliChannel:
    """Recover the outputs of a pure-state map and extract its twirled channel."""
    J = storage_functionals(alpha, F)
    # T[a, b] = recovered code matrix of |w_a><w_b|
    # c_ij^{tu} = w_b,u^dag J_ij w_a,t
    c = np.einsum("mub,ijmn,nta->abijtu", W.conj(), J, W)
    c = np.einsum("xi,abijtu,jy->abxtyu", _PM_TO_CODE.conj().T, c, _PM_TO_CODE)
    T = c.reshape(4, 4, 4, 4)
    noisy = lambda ms: np.einsum("kab,abij->kij", np.asarray(ms), T)
    return extract_pauli_channel(noisy, ideal, n_qubits=2)


def coherent_error(alpha: complex, envelope: pl.Envelope, variant: str = "full9",
                   chi: float = 1.0) -> float:
    """Average gate infidelity of the decoherence-free CRX (twirled)."""
    W, F = crx_unitary_action(alpha, envelope, variant, chi)
    ch = unitary_channel(alpha, W, F, crx_ideal_unitary())
    return gate_metrics(ch).avg_gate_infidelity


def ideal_selective_crx_channel(alpha: complex, variant: str = "full9") -> PauliChannel:
    """CRX with instantaneous ideal number-selective rotations (no dispersive phase)."""
    F = hs.fock_cutoff_for(4 * abs(alpha) ** 2)
    Cw = hs.cat_codewords(alpha, F)
    W = np.zeros((F, 2, 4), dtype=complex)
    for c in range(2):
        for t in range(2):
            W[:, t, 2 * c + t] = Cw[:, c]
    theta = math.pi / 4 if variant == "full9" else math.pi / 2
    if variant == "full9":
        seq = [("disp", alpha), ("sel", theta), ("unsel", math.pi), ("sel", theta), ("disp", -2 * alpha),
               ("sel", -theta), ("unsel", -math.pi), ("sel", -theta), ("disp", alpha), ("rx", math.pi / 2)]
    else:
        seq = [("disp", alpha), ("sel", theta), ("unsel", math.pi), ("sel", theta), ("disp", -alpha),
               ("rx", -math.pi)]
    for kind, val in seq:
        if kind == "disp":
            W = np.einsum("nm,mtj->ntj", hs.osc_displacement(val, F), W)
        elif kind == "sel":
            W[0] = rx(val) @ W[0]
        else:
            W = np.einsum("ts,nsj->ntj", rx(val), W)
    return unitary_channel(alpha, W, F, crx_ideal_unitary())


def spurious_rotation(phi: float, n_grid: int = 2001) -> float:
    """Residual transmon rotation angle with branch tracking from phi = 0."""
    grid = np.linspace(0.0, float(phi), max(n_grid, 2))
    num = 2 * (np.sin(grid) - np.sin(2 * grid))
    den = 1 - 2 * np.cos(grid) + 2 * np.cos(2 * grid)
    ang = np.unwrap(np.arctan2(num, den))
    return float(ang[-1])
