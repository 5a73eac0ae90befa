"""Surface-code patches, syndrome-extraction circuits and their noise binding.

Qubit indices: data qubits first (0 .. n_data-1), ancillas after.  Pauli
channel strings on two-qubit gates list the cat (data) first and the transmon
(ancilla) second.

Circuit text format (one operation per line, ``#`` starts a comment)::

    R 0 1            reset to |0>          RX 2       reset to |+>
    H 3 / S 3 / S_DAG 3                    single-qubit Cliffords
    CX 4 0 5 1       control/target pairs
    M(0.005) 4 5     Z measurement, optional result-flip probability
    MX(0.005) 6      X measurement
    X_ERROR(p) 0     Z_ERROR(p) 0           single Pauli flips
    PAULI_CHANNEL_1(px,py,pz) 0 1
    PAULI_CHANNEL_2(p_IX,...,p_ZZ) 0 5 1 6  15 probabilities, first letter on
                                            the first target of each pair
    DETECTOR[A](x,y,t) 3 10                  absolute measurement indices
    OBSERVABLE_INCLUDE(0) 1 2 3
    TICK
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import InvalidDistance, MissingChannel
from .gates import PauliChannel, pauli_labels

PAULI2_ORDER = pauli_labels(2)[1:]
PAULI1_ORDER = ["X", "Y", "Z"]
_SWAP_XY = {"I": "I", "X": "Y", "Y": "X", "Z": "Z"}


# ----------------------------------------------------------------------------
# patches

@dataclass
class Stabilizer:
    ancilla: int
    kind: str  # 'X' / 'Z' for CSS, 'A' / 'B' sublattice classes for XZZX
    support: List[Tuple[int, str, int]]  # (data qubit, Pauli letter, time step 1..4)
    coord: Tuple[float, float] = (0.0, 0.0)

    def pauli(self) -> Dict[int, str]:
        return {q: p for q, p, _ in self.support}


@dataclass
class CodePatch:
    family: str
    dX: int
    dZ: int
    data_coords: List[Tuple[int, int]]
    ancilla_coords: List[Tuple[float, float]]
    stabilizers: List[Stabilizer]
    logical_x: Dict[int, str]
    logical_z: Dict[int, str]
    data_bases: Dict[str, Dict[int, str]] = field(default_factory=dict)

    @property
    def n_data(self) -> int:
        return len(self.data_coords)

    @property
    def n_qubits(self) -> int:
        return len(self.data_coords) + len(self.ancilla_coords)

    def symplectic(self, ops: Sequence[Dict[int, str]]) -> np.ndarray:
        """Rows [x | z] for Pauli dicts on the data qubits."""
        n = self.n_data
        out = np.zeros((len(ops), 2 * n), dtype=np.uint8)
        for r, op in enumerate(ops):
            for q, p in op.items():
                if p in "XY":
                    out[r, q] = 1
                if p in "ZY":
                    out[r, n + q] = 1
        return out

    def stabilizer_matrix(self) -> np.ndarray:
        return self.symplectic([s.pauli() for s in self.stabilizers])


def _check_distance(d, allow_one=False):
    if not isinstance(d, (int, np.integer)) or d < 1 or d % 2 == 0 or (d == 1 and not allow_one):
        raise InvalidDistance(f"distance {d!r} must be an odd integer >= {1 if allow_one else 3}")


def build_patch(family: str, dX: int, dZ: int) -> CodePatch:
    """Rotated CSS (2 dX dZ - 1 qubits) or unrotated XZZX ((2dX-1)(2dZ-1) qubits)."""
    if family == "CSS_rotated":
        _check_distance(dX, allow_one=False)
        _check_distance(dZ, allow_one=False)
        return _css_rotated(dX, dZ)
    if family == "XZZX_unrotated":
        _check_distance(dX, allow_one=True)
        _check_distance(dZ, allow_one=True)
        return _xzzx_unrotated(dX, dZ)
    raise ValueError(f"unknown family {family!r}")


def _css_rotated(dX, dZ):
    # data (i, j): i in rows [0, dX), j in columns [0, dZ); logical Z is a row
    # (weight dZ), logical X a column (weight dX).
    data = [(i, j) for i in range(dX) for j in range(dZ)]
    idx = {c: k for k, c in enumerate(data)}
    x_order = {(0, 0): 1, (0, 1): 2, (1, 0): 3, (1, 1): 4}  # NW NE SW SE
    z_order = {(0, 0): 1, (1, 0): 2, (0, 1): 3, (1, 1): 4}  # NW SW NE SE
    stabs, anc = [], []
    n_data = len(data)
    for i in range(-1, dX):
        for j in range(-1, dZ):
            kind = "X" if (i + j) % 2 == 0 else "Z"
            corners = [(i + di, j + dj) for di in (0, 1) for dj in (0, 1)]
            inside = [c for c in corners if c in idx]
            top_bottom = i in (-1, dX - 1)
            left_right = j in (-1, dZ - 1)
            if top_bottom and left_right:
                continue
            if top_bottom and kind != "X":
                continue
            if left_right and kind != "Z":
                continue
            if len(inside) < 2:
                continue
            order = x_order if kind == "X" else z_order
            a = n_data + len(anc)
            anc.append((i + 0.5, j + 0.5))
            support = sorted(((idx[c], kind, order[(c[0] - i, c[1] - j)]) for c in inside), key=lambda s: s[2])
            stabs.append(Stabilizer(a, kind, support, (i + 0.5, j + 0.5)))
    logical_z = {idx[(0, j)]: "Z" for j in range(dZ)}
    logical_x = {idx[(i, 0)]: "X" for i in range(dX)}
    bases = {"X": {q: "X" for q in range(n_data)}, "Z": {q: "Z" for q in range(n_data)}}
    return CodePatch("CSS_rotated", dX, dZ, data, anc, stabs, logical_x, logical_z, bases)


def _xzzx_unrotated(dX, dZ):
    # grid rows [0, 2dZ-1), columns [0, 2dX-1); data where r + c is even.
    R, C = 2 * dZ - 1, 2 * dX - 1
    data = [(r, c) for r in range(R) for c in range(C) if (r + c) % 2 == 0]
    idx = {c: k for k, c in enumerate(data)}
    n_data = len(data)
    stabs, anc = [], []
    # arrowed order: W (Z), N (X), S (X), E (Z)
    nbrs = [((0, -1), "Z", 1), ((-1, 0), "X", 2), ((1, 0), "X", 3), ((0, 1), "Z", 4)]
    for r in range(R):
        for c in range(C):
            if (r + c) % 2 == 0:
                continue
            support = [(idx[(r + dr, c + dc)], p, s) for (dr, dc), p, s in nbrs if (r + dr, c + dc) in idx]
            a = n_data + len(anc)
            anc.append((r, c))
            stabs.append(Stabilizer(a, "A" if r % 2 == 1 else "B", support, (r, c)))
    # pure-Z logical down column 0 (weight dZ), pure-X logical along row 0 (weight dX)
    logical_z = {idx[(r, 0)]: "Z" for r in range(0, R, 2)}
    logical_x = {idx[(0, c)]: "X" for c in range(0, C, 2)}
    even = {q for q, (r, c) in enumerate(data) if r % 2 == 0}
    bases = {"X": {q: ("X" if q in even else "Z") for q in range(n_data)},
             "Z": {q: ("Z" if q in even else "X") for q in range(n_data)}}
    return CodePatch("XZZX_unrotated", dX, dZ, data, anc, stabs, logical_x, logical_z, bases)


# ----------------------------------------------------------------------------
# symplectic helpers (GF(2))

def _gf2_rank(M: np.ndarray) -> int:
    A = (np.array(M, dtype=np.uint8) & 1).copy()
    rank = 0
    rows, cols = A.shape
    for c in range(cols):
        piv = np.nonzero(A[rank:, c])[0]
        if piv.size == 0:
            continue
        p = rank + piv[0]
        A[[rank, p]] = A[[p, rank]]
        others = np.nonzero(A[:, c])[0]
        others = others[others != rank]
        A[others] ^= A[rank]
        rank += 1
        if rank == rows:
            break
    return rank


def symplectic_product(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    n = a.shape[-1] // 2
    return (a[..., :n] @ b[..., n:].T + a[..., n:] @ b[..., :n].T) % 2


def patch_checks(patch: CodePatch) -> dict:
    """Commutation and independence facts used by the property tests."""
    S = patch.stabilizer_matrix().astype(int)
    L = patch.symplectic([patch.logical_x, patch.logical_z]).astype(int)
    return {
        "stabilizers_commute": not symplectic_product(S, S).any(),
        "logicals_commute_with_stabilizers": not symplectic_product(L, S).any(),
        "logicals_anticommute": int(symplectic_product(L[:1], L[1:])[0, 0]) == 1,
        "n_logical": patch.n_data - _gf2_rank(S),
    }


def min_logical_weight(patch: CodePatch, letters: str = "any", max_weight: Optional[int] = None) -> int:
    """Brute-force minimum weight of a nontrivial logical operator.

    ``letters`` restricts each site to 'X', 'Z', or any of X/Y/Z.
    """
    S = patch.stabilizer_matrix().astype(np.uint8)
    n = patch.n_data
    base_rank = _gf2_rank(S)
    choices = {"X": ["X"], "Z": ["Z"], "any": ["X", "Y", "Z"]}[letters]
    max_weight = max_weight or n
    Sint = S.astype(int)
    for w in range(1, max_weight + 1):
        for sites in itertools.combinations(range(n), w):
            for lets in itertools.product(choices, repeat=w):
                v = patch.symplectic([dict(zip(sites, lets))])
                if symplectic_product(v.astype(int), Sint).any():
                    continue
                if _gf2_rank(np.vstack([S, v])) > base_rank:
                    return w
    raise ValueError("no logical operator found")


# ----------------------------------------------------------------------------
# circuits

@dataclass
class Op:
    name: str
    targets: Tuple[int, ...] = ()
    args: Tuple[float, ...] = ()
    tag: str = ""


@dataclass
class StabilizerCircuit:
    ops: List[Op]
    n_qubits: int
    metadata: dict = field(default_factory=dict)

    @property
    def n_measurements(self) -> int:
        return sum(len(o.targets) for o in self.ops if o.name in ("M", "MX"))

    @property
    def detectors(self) -> List[Op]:
        return [o for o in self.ops if o.name == "DETECTOR"]

    @property
    def n_observables(self) -> int:
        obs = [int(o.args[0]) for o in self.ops if o.name == "OBSERVABLE_INCLUDE"]
        return max(obs) + 1 if obs else 0

    def to_text(self) -> str:
        lines = []
        for o in self.ops:
            head = o.name
            if o.tag:
                head += f"[{o.tag}]"
            if o.args:
                head += "(" + ",".join(repr(float(a)) for a in o.args) + ")"
            lines.append(" ".join([head] + [str(t) for t in o.targets]))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, n_qubits: Optional[int] = None) -> "StabilizerCircuit":
        ops = []
        nq = 0
        for raw in text.splitlines():
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            head, *rest = line.split()
            tag = ""
            args = ()
            if "(" in head:
                head, a = head.split("(", 1)
                args = tuple(float(x) for x in a.rstrip(")").split(",") if x)
            if "[" in head:
                head, tg = head.split("[", 1)
                tag = tg.rstrip("]")
            targets = tuple(int(t) for t in rest)
            op = Op(head, targets, args, tag)
            ops.append(op)
            if head not in ("DETECTOR", "OBSERVABLE_INCLUDE") and targets:
                nq = max(nq, max(targets) + 1)
        return cls(ops, n_qubits or nq)


@dataclass(frozen=True)
class SimplifiedNoise:
    p_Z: float
    eta: float
    readout_reset_error: float = 0.01

    def __post_init__(self):
        if not (0 <= self.p_Z <= 0.5) or not (0 <= self.readout_reset_error <= 0.5):
            raise ValueError("probabilities must lie in [0, 0.5]")
        if not (self.eta >= 1):
            raise ValueError("eta must be >= 1")


def simplified_channels(s: SimplifiedNoise) -> Dict[str, PauliChannel]:
    """Biased channels: Z-type strings share p_Z, all other errors share p_Z/eta."""
    other = 0.0 if math.isinf(s.eta) else s.p_Z / s.eta
    z2 = {"IZ", "ZI", "ZZ"}
    probs2 = {k: (s.p_Z / 3 if k in z2 else other / 12) for k in PAULI2_ORDER}
    probs2["II"] = 1.0 - sum(probs2.values())
    probs1 = {"Z": s.p_Z, "X": other / 2, "Y": other / 2}
    probs1["I"] = 1.0 - sum(probs1.values())
    meta = {"model": "simplified", "p_Z": s.p_Z, "eta": s.eta,
            "entanglement_infidelity": s.p_Z + other}
    ch2 = PauliChannel(2, probs2, dict(meta))
    return {"CX": ch2, "CRX": PauliChannel(2, dict(probs2), dict(meta)), "Idle": PauliChannel(1, probs1, dict(meta))}


def depolarizing_channels(p: float) -> Dict[str, PauliChannel]:
    """Uniform depolarizing channels with entanglement infidelity p."""
    probs2 = {k: p / 15 for k in PAULI2_ORDER}
    probs2["II"] = 1 - p
    probs1 = {k: p / 3 for k in PAULI1_ORDER}
    probs1["I"] = 1 - p
    ch2 = PauliChannel(2, probs2, {"model": "depolarizing", "p": p})
    return {"CX": ch2, "CRX": PauliChannel(2, dict(probs2), {"model": "depolarizing", "p": p}),
            "Idle": PauliChannel(1, probs1, {"model": "depolarizing", "p": p})}


def _resolve_noise(noise):
    """-> (channels dict or None, readout_reset_error)."""
    if noise is None:
        return None, 0.0
    if isinstance(noise, SimplifiedNoise):
        return simplified_channels(noise), noise.readout_reset_error
    if isinstance(noise, dict):
        rre = float(noise.get("readout_reset_error", 0.01))
        chans = {k: v for k, v in noise.items() if k in ("CX", "CRX", "Idle")}
        missing = [k for k in ("CX", "CRX", "Idle") if k not in chans]
        if missing:
            raise MissingChannel(f"missing channels: {missing}")
        for k, v in chans.items():
            if not isinstance(v, PauliChannel):
                chans[k] = PauliChannel.from_json(v)
        return chans, rre
    raise TypeError("noise must be None, SimplifiedNoise or a channel dict")


def _channel_args(ch: PauliChannel, swap_first: bool = False):
    if ch.n_qubits == 2:
        vals = []
        for k in PAULI2_ORDER:
            src = (_SWAP_XY[k[0]] + k[1]) if swap_first else k
            vals.append(ch.probs[src])
        return tuple(vals)
    return tuple(ch.probs[_SWAP_XY[k]] if swap_first else ch.probs[k] for k in PAULI1_ORDER)


class _Builder:
    def __init__(self, n_qubits):
        self.ops: List[Op] = []
        self.n_qubits = n_qubits
        self.n_meas = 0

    def add(self, name, targets=(), args=(), tag=""):
        self.ops.append(Op(name, tuple(int(t) for t in targets), tuple(args), tag))

    def measure(self, name, qubits, p):
        idx = list(range(self.n_meas, self.n_meas + len(qubits)))
        self.add(name, qubits, (p,) if p > 0 else ())
        self.n_meas += len(qubits)
        return idx


def syndrome_circuit(patch: CodePatch, rounds: Optional[int] = None, noise=None, basis: str = "X",
                     compile_phases: bool = True) -> StabilizerCircuit:
    """Memory experiment: data prepared in ``basis``, ``rounds`` syndrome rounds, data readout.

    basis 'X' protects the logical whose flips are caused by cat Z errors
    (logical-Z error rate); basis 'Z' measures logical-X errors.
    """
    if basis not in ("X", "Z"):
        raise ValueError("basis must be 'X' or 'Z'")
    rounds = patch.dZ if rounds is None else int(rounds)
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    chans, rre = _resolve_noise(noise)
    p_reset = p_meas = rre / 2
    nd = patch.n_data
    b = _Builder(patch.n_qubits)
    data_basis = patch.data_bases[basis]
    zq = [q for q in range(nd) if data_basis[q] == "Z"]
    xq = [q for q in range(nd) if data_basis[q] == "X"]
    if zq:
        b.add("R", zq)
    if xq:
        b.add("RX", xq)
    b.add("TICK")
    stabs = patch.stabilizers
    css = patch.family == "CSS_rotated"
    # stabilizers deterministic at preparation: letters match data bases
    det_first = [s for s in stabs if all(data_basis[q] == p for q, p, _ in s.support)]
    det_first_ids = {s.ancilla for s in det_first}
    prev = {}
    for r in range(rounds):
        for s in stabs:
            if css and s.kind == "X":
                b.add("RX", [s.ancilla])
                if p_reset > 0:
                    b.add("Z_ERROR", [s.ancilla], (p_reset,))
            else:
                b.add("R", [s.ancilla])
                if p_reset > 0:
                    b.add("X_ERROR", [s.ancilla], (p_reset,))
        b.add("TICK")
        for step in (1, 2, 3, 4):
            for s in stabs:
                for q, p, st in s.support:
                    if st != step:
                        continue
                    a = s.ancilla
                    if p == "X":
                        b.add("CX", [a, q], tag="CX")
                        if chans:
                            b.add("PAULI_CHANNEL_2", [q, a], _channel_args(chans["CX"]), tag="CX")
                    else:
                        b.add("CX", [q, a], tag="CRX")
                        b.add("S_DAG", [q], tag="CRX_PHASE")
                        if chans:
                            b.add("PAULI_CHANNEL_2", [q, a], _channel_args(chans["CRX"]), tag="CRX")
                if not css and step in (1, 3):
                    # transmon basis change between the CRX and CX parts
                    b.add("H", [s.ancilla], tag="U")
            b.add("TICK")
        ms = {}
        for s in stabs:
            name = "MX" if (css and s.kind == "X") else "M"
            ms[s.ancilla] = b.measure(name, [s.ancilla], p_meas)[0]
        if chans:
            b.add("PAULI_CHANNEL_1", list(range(nd)), _channel_args(chans["Idle"]), tag="Idle")
        b.add("TICK")
        for s in stabs:
            coords = (float(s.coord[0]), float(s.coord[1]), float(r))
            if r == 0:
                if s.ancilla in det_first_ids:
                    b.add("DETECTOR", [ms[s.ancilla]], coords, tag=s.kind)
            else:
                b.add("DETECTOR", [prev[s.ancilla], ms[s.ancilla]], coords, tag=s.kind)
        prev = ms
    # final data readout
    final = {}
    if zq:
        for q, m in zip(zq, b.measure("M", zq, 0.0)):
            final[q] = m
    if xq:
        for q, m in zip(xq, b.measure("MX", xq, 0.0)):
            final[q] = m
    for s in det_first:
        recs = [final[q] for q, _, _ in s.support] + [prev[s.ancilla]]
        b.add("DETECTOR", sorted(recs), (float(s.coord[0]), float(s.coord[1]), float(rounds)), tag=s.kind)
    logical = patch.logical_x if basis == "X" else patch.logical_z
    for q, p in logical.items():
        if data_basis[q] != p:
            raise ValueError("logical operator not measurable in the chosen data basis")
    b.add("OBSERVABLE_INCLUDE", sorted(final[q] for q in logical), (0.0,))
    circ = StabilizerCircuit(b.ops, patch.n_qubits,
                             {"family": patch.family, "dX": patch.dX, "dZ": patch.dZ, "rounds": rounds,
                              "basis": basis, "readout_reset_error": rre,
                              "noise": "none" if chans is None else chans["CX"].metadata.get("model", "full")})
    return compile_crx_phases(circ) if compile_phases else assign_crx_signs(circ)


# ----------------------------------------------------------------------------
# CRX phase bookkeeping

_BLOCKS_PHASE = {"H", "RX", "MX"}


def _phase_streams(ops):
    """Per data-qubit sequence of phase-op indices and whether a blocking op follows."""
    events = {}
    for i, o in enumerate(ops):
        if o.name == "S_DAG" and o.tag == "CRX_PHASE":
            events.setdefault(o.targets[0], []).append(("phase", i))
        elif o.name == "CX":
            for c, t in zip(o.targets[::2], o.targets[1::2]):
                events.setdefault(t, []).append(("block", i))
        elif o.name in _BLOCKS_PHASE:
            for q in o.targets:
                events.setdefault(q, []).append(("block", i))
    return events


def _pair_phases(ops):
    """Pairs of time-adjacent CRX phases per qubit, and the unpaired ones."""
    pairs, singles = [], []
    for q, evs in _phase_streams(ops).items():
        pending = None
        for kind, i in evs:
            if kind == "block":
                if pending is not None:
                    singles.append((q, pending))
                    pending = None
            elif pending is None:
                pending = i
            else:
                pairs.append((q, pending, i))
                pending = None
        if pending is not None:
            singles.append((q, pending))
    return pairs, singles


def assign_crx_signs(circ: StabilizerCircuit) -> StabilizerCircuit:
    """Explicit form: paired CRX phases become S_DAG then S; unpaired ones are
    followed by an explicit compensating S right after their channel."""
    ops = list(circ.ops)
    pairs, singles = _pair_phases(ops)
    for _, _, j in pairs:
        ops[j] = Op("S", ops[j].targets, (), "CRX_PHASE")
    inserts = {}
    for q, i in singles:
        k = i + 1
        while k < len(ops) and ops[k].name == "PAULI_CHANNEL_2" and ops[k].tag == "CRX" and q in ops[k].targets[::2]:
            k += 1
        inserts.setdefault(k, []).append(Op("S", (q,), (), "CRX_COMP"))
    out = []
    for k, o in enumerate(ops):
        out.extend(inserts.get(k, []))
        out.append(o)
    out.extend(inserts.get(len(ops), []))
    return StabilizerCircuit(out, circ.n_qubits, dict(circ.metadata, phases="explicit"))


def compile_crx_phases(circ: StabilizerCircuit) -> StabilizerCircuit:
    """Cancel time-adjacent S_DAG/S pairs symbolically.

    Moving a phase gate forward through a Pauli channel swaps X and Y on that
    qubit, so channels between a cancelled pair are rewritten accordingly.
    Unpaired phases keep an explicit S_DAG followed by a compensating S.
    """
    explicit = assign_crx_signs(circ)
    ops = list(explicit.ops)
    pairs, _ = _pair_phases([Op("S_DAG", o.targets, o.args, o.tag) if o.name == "S" and o.tag == "CRX_PHASE" else o
                             for o in ops])
    drop = set()
    swap_ranges = {}
    for q, i, j in pairs:
        drop.update((i, j))
        swap_ranges.setdefault(q, []).append((i, j))
    out = []
    for k, o in enumerate(ops):
        if k in drop:
            continue
        if o.name in ("PAULI_CHANNEL_1", "PAULI_CHANNEL_2"):
            out.extend(_swap_channel(o, k, swap_ranges))
        else:
            out.append(o)
    return StabilizerCircuit(out, circ.n_qubits, dict(circ.metadata, phases="compiled"))


def _in_range(q, k, swap_ranges):
    return any(i < k < j for i, j in swap_ranges.get(q, ()))


def _swap_channel(o: Op, k: int, swap_ranges):
    width = 2 if o.name == "PAULI_CHANNEL_2" else 1
    groups = [o.targets[i:i + width] for i in range(0, len(o.targets), width)]
    flags = [tuple(_in_range(q, k, swap_ranges) for q in g) for g in groups]
    if not any(any(f) for f in flags):
        return [o]
    labels = PAULI2_ORDER if width == 2 else PAULI1_ORDER
    base = dict(zip(labels, o.args))
    out = []
    for g, f in zip(groups, flags):
        if not any(f):
            out.append(Op(o.name, g, o.args, o.tag))
            continue
        new = []
        for lab in labels:
            src = "".join(_SWAP_XY[ch] if fl else ch for ch, fl in zip(lab, f))
            new.append(base[src])
        out.append(Op(o.name, g, tuple(new), o.tag))
    return out


def error_propagation(patch: CodePatch, ancilla: int, after_step: int, pauli: str = "X") -> Dict[int, str]:
    """Data Pauli produced by an ancilla error inserted after gate ``after_step``
    of one stabilizer measurement (noise-free Clifford propagation)."""
    stab = next(s for s in patch.stabilizers if s.ancilla == ancilla)
    x = pauli in "XY"
    z = pauli in "ZY"
    data = {}
    css = patch.family == "CSS_rotated"
    for step in (1, 2, 3, 4):
        if step > after_step:
            for q, p, st in stab.support:
                if st != step:
                    continue
                dx, dz = data.get(q, (False, False))
                if p == "X":  # CX ancilla -> data: ancilla X spreads to data X
                    dx ^= x
                else:  # CX data -> ancilla: ancilla Z spreads to data Z
                    dz ^= z
                data[q] = (dx, dz)
        if not css and step in (1, 3) and step >= after_step:
            x, z = z, x
    letters = {(False, False): "I", (True, False): "X", (False, True): "Z", (True, True): "Y"}
    return {q: letters[v] for q, v in data.items() if letters[v] != "I"}


def stabilizer_equivalent(patch: CodePatch, a: Dict[int, str], b: Dict[int, str]) -> bool:
    """True if Pauli a * b lies in the stabilizer group (up to phase)."""
    S = patch.stabilizer_matrix()
    va, vb = patch.symplectic([a])[0], patch.symplectic([b])[0]
    v = (va ^ vb)[None, :]
    if not v.any():
        return True
    return _gf2_rank(np.vstack([S, v])) == _gf2_rank(S)
