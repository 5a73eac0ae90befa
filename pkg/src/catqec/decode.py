"""Pauli-frame sampling, detector error models and matching decoders."""
from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, List, Optional, Sequence, Tuple

import networkx as nx
import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra
from scipy.stats import binomtest

from .code import PAULI1_ORDER, PAULI2_ORDER, Op, StabilizerCircuit
from .errors import OddDefectsWithoutBoundary, UndecomposableFault

log = logging.getLogger(__name__)

CHUNK_SHOTS = 4096
WEIGHT_SCALE = 2 ** 20
GREEDY_DEFECT_LIMIT = 2000
_NOISE = ("PAULI_CHANNEL_1", "PAULI_CHANNEL_2", "X_ERROR", "Z_ERROR", "Y_ERROR")
_PAULI_BITS = {"I": (0, 0), "X": (1, 0), "Y": (1, 1), "Z": (0, 1)}


def workers_from_env(default: int = 1) -> int:
    try:
        return max(1, int(os.environ.get("CATQEC_WORKERS", default)))
    except ValueError:
        return default


# ----------------------------------------------------------------------------
# compiled instruction stream

@dataclass
class _Instr:
    kind: str
    a: np.ndarray = None  # first targets
    b: np.ndarray = None  # second targets (pairs)
    probs: np.ndarray = None  # per-term probabilities
    terms: np.ndarray = None  # (n_terms, width, 2) x/z bits per target
    meas: np.ndarray = None  # measurement record indices
    flip: float = 0.0
    op_index: int = -1


def _noise_terms(op: Op):
    if op.name == "PAULI_CHANNEL_2":
        labels, width = PAULI2_ORDER, 2
    elif op.name == "PAULI_CHANNEL_1":
        labels, width = PAULI1_ORDER, 1
    else:
        labels, width = [op.name[0]], 1
    probs = np.array(op.args if op.name.startswith("PAULI") else op.args[:1], dtype=float)
    keep = probs > 0
    terms = np.array([[_PAULI_BITS[ch] for ch in lab] for lab in labels], dtype=np.uint8)
    return width, probs[keep], terms[keep], [l for l, k in zip(labels, keep) if k]


def compile_circuit(circuit: StabilizerCircuit) -> List[_Instr]:
    """Merge ops into vectorised instructions (record indices resolved)."""
    out: List[_Instr] = []
    n_meas = 0
    for k, op in enumerate(circuit.ops):
        t = np.array(op.targets, dtype=np.int64)
        if op.name in ("TICK", "DETECTOR", "OBSERVABLE_INCLUDE"):
            continue
        if op.name in ("R", "RX"):
            out.append(_Instr("reset", a=t, op_index=k))
        elif op.name == "H":
            out.append(_Instr("h", a=t, op_index=k))
        elif op.name in ("S", "S_DAG"):
            out.append(_Instr("s", a=t, op_index=k))
        elif op.name == "CX":
            out.append(_Instr("cx", a=t[0::2], b=t[1::2], op_index=k))
        elif op.name in ("M", "MX"):
            idx = np.arange(n_meas, n_meas + t.size)
            n_meas += t.size
            out.append(_Instr("m" if op.name == "M" else "mx", a=t, meas=idx,
                              flip=float(op.args[0]) if op.args else 0.0, op_index=k))
        elif op.name in _NOISE:
            width, probs, terms, _ = _noise_terms(op)
            if probs.size == 0:
                continue
            if width == 2:
                out.append(_Instr("noise2", a=t[0::2], b=t[1::2], probs=probs, terms=terms, op_index=k))
            else:
                out.append(_Instr("noise1", a=t, probs=probs, terms=terms, op_index=k))
        else:
            raise ValueError(f"unsupported operation {op.name}")
    return _merge(out)


def _merge(instrs):
    """Fuse consecutive same-kind instructions acting on disjoint qubits."""
    out = []
    for ins in instrs:
        if out and ins.kind in ("cx", "h", "s", "reset", "noise1", "noise2"):
            prev = out[-1]
            if prev.kind == ins.kind and _disjoint(prev, ins) and _same_noise(prev, ins):
                prev.a = np.concatenate([prev.a, ins.a])
                if ins.b is not None:
                    prev.b = np.concatenate([prev.b, ins.b])
                continue
        out.append(_Instr(ins.kind, ins.a, ins.b, ins.probs, ins.terms, ins.meas, ins.flip, ins.op_index))
    return out


def _disjoint(p, q):
    s1 = set(p.a.tolist()) | (set(p.b.tolist()) if p.b is not None else set())
    s2 = set(q.a.tolist()) | (set(q.b.tolist()) if q.b is not None else set())
    return not (s1 & s2)


def _same_noise(p, q):
    if p.kind not in ("noise1", "noise2"):
        return True
    return p.probs.shape == q.probs.shape and np.array_equal(p.probs, q.probs) and np.array_equal(p.terms, q.terms)


def _detector_lists(circuit):
    dets = [list(o.targets) for o in circuit.ops if o.name == "DETECTOR"]
    n_obs = circuit.n_observables
    obs = [[] for _ in range(n_obs)]
    for o in circuit.ops:
        if o.name == "OBSERVABLE_INCLUDE":
            obs[int(o.args[0])].extend(o.targets)
    return dets, obs


# ----------------------------------------------------------------------------
# frame simulation

def _bernoulli_positions(rng, N: int, p: float) -> np.ndarray:
    """Sorted indices in [0, N) of independent Bernoulli(p) successes."""
    if p <= 0 or N == 0:
        return np.empty(0, dtype=np.int64)
    if p >= 0.05:
        return np.flatnonzero(rng.random(N) < p)
    out = []
    pos = -1
    est = int(N * p + 6 * math.sqrt(N * p) + 16)
    while True:
        c = pos + np.cumsum(rng.geometric(p, size=est))
        out.append(c[c < N])
        if c[-1] >= N:
            break
        pos = int(c[-1])
    return np.concatenate(out).astype(np.int64)


def _xor_bits(arr, rows, shots):
    """arr[rows, shot word] ^= bit, with repeated entries XOR-accumulated."""
    if rows.size == 0:
        return
    words = shots >> 6
    bits = np.left_shift(np.uint64(1), (shots & 63).astype(np.uint64))
    np.bitwise_xor.at(arr, (rows, words), bits)


class FrameSimulator:
    """Bit-packed Pauli-frame propagation (64 shots per machine word)."""

    def __init__(self, circuit: StabilizerCircuit):
        self.circuit = circuit
        self.instrs = compile_circuit(circuit)
        self.n_qubits = circuit.n_qubits
        self.n_meas = circuit.n_measurements
        self.dets, self.obs = _detector_lists(circuit)

    def run(self, n_shots: int, rng=None, injector=None):
        """Return measurement-flip records (n_meas, words) as uint64.

        ``rng`` drives stochastic noise; ``injector(instr, X, Z, rec)`` may add
        deterministic faults (used to build detector error models).
        """
        W = (n_shots + 63) // 64
        X = np.zeros((self.n_qubits, W), dtype=np.uint64)
        Z = np.zeros_like(X)
        rec = np.zeros((self.n_meas, W), dtype=np.uint64)
        mask = np.full(W, np.uint64(0xFFFFFFFFFFFFFFFF))
        if n_shots % 64:
            mask[-1] = np.uint64((1 << (n_shots % 64)) - 1)
        for ins in self.instrs:
            k = ins.kind
            if k == "cx":
                X[ins.b] ^= X[ins.a]
                Z[ins.a] ^= Z[ins.b]
            elif k == "h":
                tmp = X[ins.a].copy()
                X[ins.a] = Z[ins.a]
                Z[ins.a] = tmp
            elif k == "s":
                Z[ins.a] ^= X[ins.a]
            elif k == "reset":
                X[ins.a] = 0
                Z[ins.a] = 0
            elif k in ("m", "mx"):
                rec[ins.meas] = X[ins.a] if k == "m" else Z[ins.a]
                if rng is not None and ins.flip > 0:
                    pos = _bernoulli_positions(rng, ins.a.size * n_shots, ins.flip)
                    _xor_bits(rec, ins.meas[pos // n_shots], pos % n_shots)
            elif rng is not None:
                self._sample_noise(ins, X, Z, n_shots, rng)
            if injector is not None:
                injector(ins, X, Z, rec)
        rec &= mask
        return rec

    @staticmethod
    def _sample_noise(ins, X, Z, n_shots, rng):
        ptot = float(ins.probs.sum())
        pos = _bernoulli_positions(rng, ins.a.size * n_shots, ptot)
        if pos.size == 0:
            return
        which = rng.choice(ins.probs.size, size=pos.size, p=ins.probs / ptot)
        inst, shot = pos // n_shots, pos % n_shots
        bits = ins.terms[which]  # (n, width, 2)
        cols = [ins.a] if ins.b is None else [ins.a, ins.b]
        for w, qs in enumerate(cols):
            q = qs[inst]
            xm = bits[:, w, 0].astype(bool)
            zm = bits[:, w, 1].astype(bool)
            _xor_bits(X, q[xm], shot[xm])
            _xor_bits(Z, q[zm], shot[zm])

    def outcomes(self, rec):
        """Detector and observable rows (packed) from measurement records."""
        W = rec.shape[1]
        D = np.zeros((len(self.dets), W), dtype=np.uint64)
        for i, d in enumerate(self.dets):
            for m in d:
                D[i] ^= rec[m]
        O = np.zeros((len(self.obs), W), dtype=np.uint64)
        for i, o in enumerate(self.obs):
            for m in o:
                O[i] ^= rec[m]
        return D, O


def _unpack(rows: np.ndarray, n: int) -> np.ndarray:
    """(n_rows, words) uint64 -> (n, n_rows) bool."""
    if rows.shape[0] == 0:
        return np.zeros((n, 0), dtype=bool)
    b = np.unpackbits(np.ascontiguousarray(rows).view(np.uint8), axis=1, bitorder="little")
    return b[:, :n].T.astype(bool)


@dataclass
class ShotBatch:
    n_shots: int
    detection_events: np.ndarray  # (n_shots, n_detectors) bool
    observable_flips: np.ndarray  # (n_shots, n_observables) bool
    seed: int

    def to_bytes(self) -> Tuple[dict, bytes]:
        """JSON header and packed bit-matrix payload."""
        header = {"n_shots": self.n_shots, "n_detectors": int(self.detection_events.shape[1]),
                  "n_observables": int(self.observable_flips.shape[1]), "seed": self.seed,
                  "layout": "row-major shots, detectors then observables, packbits little"}
        bits = np.concatenate([self.detection_events, self.observable_flips], axis=1)
        return header, np.packbits(bits, axis=1, bitorder="little").tobytes()


def _chunk_rng(seed: int, chunk: int):
    return np.random.Generator(np.random.Philox(key=(int(seed) << 64) | int(chunk)))


def _sample_chunk(args):
    circuit, seed, chunk, shots = args
    sim = _simulator(circuit)
    rec = sim.run(shots, _chunk_rng(seed, chunk))
    D, O = sim.outcomes(rec)
    return _unpack(D, shots), _unpack(O, shots)


_SIM_CACHE: Dict[int, FrameSimulator] = {}


def _simulator(circuit):
    key = id(circuit)
    sim = _SIM_CACHE.get(key)
    if sim is None or sim.circuit is not circuit:
        if len(_SIM_CACHE) > 8:
            _SIM_CACHE.clear()
        sim = FrameSimulator(circuit)
        _SIM_CACHE[key] = sim
    return sim


def sample(circuit: StabilizerCircuit, n_shots: int, seed: int, workers: Optional[int] = None) -> ShotBatch:
    """Monte Carlo detection events; bit-exact for a given (circuit, seed).

    Shots are generated in fixed chunks whose RNG is keyed on (seed, chunk),
    so the worker count never changes the result.
    """
    workers = workers or workers_from_env()
    jobs = []
    for c, start in enumerate(range(0, n_shots, CHUNK_SHOTS)):
        jobs.append((circuit, seed, c, min(CHUNK_SHOTS, n_shots - start)))
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(workers) as ex:
            parts = list(ex.map(_sample_chunk, jobs))
    else:
        parts = [_sample_chunk(j) for j in jobs]
    n_det, n_obs = len(circuit.detectors), circuit.n_observables
    D = np.concatenate([p[0] for p in parts]) if parts else np.zeros((0, n_det), bool)
    O = np.concatenate([p[1] for p in parts]) if parts else np.zeros((0, n_obs), bool)
    return ShotBatch(n_shots, D, O, seed)


# ----------------------------------------------------------------------------
# detector error model

def xor_prob(p: float, q: float) -> float:
    return p * (1 - q) + q * (1 - p)


@dataclass
class DetectorErrorModel:
    faults: List[Tuple[float, Tuple[int, ...], Tuple[int, ...]]]
    components: List[List[Tuple[Tuple[int, ...], Tuple[int, ...]]]]
    n_detectors: int
    n_observables: int
    detector_classes: List[str]
    metadata: dict = field(default_factory=dict)

    def to_text(self) -> str:
        lines = []
        for (p, d, o), comps in zip(self.faults, self.components):
            parts = []
            for cd, co in comps:
                parts.append(" ".join([f"D{i}" for i in cd] + [f"L{i}" for i in co]))
            lines.append(f"error({p!r}) " + " ^ ".join(parts))
        return "\n".join(lines) + "\n"

    def graphlike_edges(self):
        """Merged graph edges {(class, u, v): (p, obs_mask)}; v = -1 is the boundary."""
        edges: Dict[Tuple[str, int, int], Tuple[float, int, float]] = {}
        for (p, _, _), comps in zip(self.faults, self.components):
            for cd, co in comps:
                if not cd:
                    continue
                cls = self.detector_classes[cd[0]]
                u, v = (cd[0], -1) if len(cd) == 1 else (min(cd), max(cd))
                mask = 0
                for o in co:
                    mask ^= 1 << o
                key = (cls, u, v)
                if key in edges:
                    p0, m0, best = edges[key]
                    edges[key] = (xor_prob(p0, p), m0 if best >= p else mask, max(best, p))
                else:
                    edges[key] = (p, mask, p)
        return {k: (v[0], v[1]) for k, v in edges.items()}


def fault_list(circuit: StabilizerCircuit):
    """Every elementary fault: (instr position, instance, term index, probability)."""
    sim = _simulator(circuit)
    faults = []
    for pos, ins in enumerate(sim.instrs):
        if ins.kind in ("noise1", "noise2"):
            for inst in range(ins.a.size):
                for t, p in enumerate(ins.probs):
                    faults.append((pos, inst, t, float(p)))
        elif ins.kind in ("m", "mx") and ins.flip > 0:
            for inst in range(ins.a.size):
                faults.append((pos, inst, -1, ins.flip))
    return faults


def fault_signatures(circuit: StabilizerCircuit, faults=None):
    """Detector and observable bits (n_faults, n) for single injected faults."""
    sim = _simulator(circuit)
    faults = fault_list(circuit) if faults is None else faults
    by_pos: Dict[int, List[Tuple[int, int, int]]] = {}
    for col, (pos, inst, t, _) in enumerate(faults):
        by_pos.setdefault(pos, []).append((col, inst, t))
    order = {id(ins): k for k, ins in enumerate(sim.instrs)}

    def inject(ins, X, Z, rec):
        items = by_pos.get(order[id(ins)])
        if not items:
            return
        cols = np.array([c for c, _, _ in items], dtype=np.int64)
        inst = np.array([i for _, i, _ in items], dtype=np.int64)
        if ins.kind in ("m", "mx"):
            _xor_bits(rec, ins.meas[inst], cols)
            return
        terms = ins.terms[np.array([t for _, _, t in items])]
        targets = [ins.a] if ins.b is None else [ins.a, ins.b]
        for w, qs in enumerate(targets):
            q = qs[inst]
            xm, zm = terms[:, w, 0].astype(bool), terms[:, w, 1].astype(bool)
            _xor_bits(X, q[xm], cols[xm])
            _xor_bits(Z, q[zm], cols[zm])

    rec = sim.run(len(faults), None, inject)
    D, O = sim.outcomes(rec)
    return _unpack(D, len(faults)), _unpack(O, len(faults)), faults


def build_dem(circuit: StabilizerCircuit) -> DetectorErrorModel:
    """Merge single-fault signatures and split them into graph-like components."""
    dbits, obits, faults = fault_signatures(circuit)
    classes = [o.tag for o in circuit.ops if o.name == "DETECTOR"]
    merged: Dict[Tuple[Tuple[int, ...], Tuple[int, ...]], float] = {}
    for k, (_, _, _, p) in enumerate(faults):
        d = tuple(np.flatnonzero(dbits[k]).tolist())
        o = tuple(np.flatnonzero(obits[k]).tolist())
        if not d and not o:
            continue
        key = (d, o)
        merged[key] = xor_prob(merged[key], p) if key in merged else p
    atomic: Dict[Tuple[int, ...], Tuple[int, ...]] = {}
    for (d, o), p in sorted(merged.items(), key=lambda kv: -kv[1]):
        if 0 < len(d) <= 2 and len({classes[i] for i in d}) == 1 and d not in atomic:
            atomic[d] = o
    out_faults, comps = [], []
    for (d, o), p in merged.items():
        out_faults.append((p, d, o))
        comps.append(_decompose(d, o, classes, atomic))
    return DetectorErrorModel(out_faults, comps, len(classes), circuit.n_observables, classes,
                              {"n_elementary_faults": len(faults)})


def _decompose(d, o, classes, atomic):
    if not d:
        return [((), o)]
    parts: Dict[str, List[int]] = {}
    for i in d:
        parts.setdefault(classes[i], []).append(i)
    pieces: List[Tuple[int, ...]] = []
    for cls, ids in parts.items():
        ids = tuple(ids)
        if len(ids) <= 2:
            pieces.append(ids)
            continue
        split = _split_hyperedge(ids, atomic)
        if split is None:
            raise UndecomposableFault(f"no graph-like split for detectors {ids}")
        pieces.extend(split)
    if len(pieces) == 1:
        return [(pieces[0], o)]
    # observable annotation: reuse atomic annotations, residual on an unknown piece
    target = 0
    for x in o:
        target ^= 1 << x
    assigned = []
    unknown = []
    acc = 0
    for pc in pieces:
        if pc in atomic:
            m = sum(1 << x for x in atomic[pc])
            assigned.append(m)
            acc ^= m
        else:
            assigned.append(None)
            unknown.append(len(assigned) - 1)
    resid = acc ^ target
    if unknown:
        for j in unknown:
            assigned[j] = 0
        assigned[unknown[0]] = resid
    elif resid:
        raise UndecomposableFault(f"inconsistent observable split for detectors {d}")
    return [(pc, tuple(i for i in range(m.bit_length()) if m >> i & 1)) for pc, m in zip(pieces, assigned)]


def _split_hyperedge(ids, atomic):
    s = set(ids)
    for e in atomic:
        if set(e) <= s:
            rest = tuple(sorted(s - set(e)))
            if rest in atomic or len(rest) <= 2:
                if len(rest) <= 2 or rest in atomic:
                    return [e, rest] if rest else [e]
    for e1 in atomic:
        if not set(e1) <= s:
            continue
        for e2 in atomic:
            if set(e2) <= s - set(e1):
                rest = tuple(sorted(s - set(e1) - set(e2)))
                if 0 < len(rest) <= 2:
                    return [e1, e2, rest]
    return None


# ----------------------------------------------------------------------------
# matching

class MatchingGraph:
    """Detectors of one class plus a boundary node, weights log((1-p)/p)."""

    def __init__(self, dem: DetectorErrorModel, cls: str):
        self.cls = cls
        self.nodes = [i for i, c in enumerate(dem.detector_classes) if c == cls]
        self.local = {g: k for k, g in enumerate(self.nodes)}
        n = len(self.nodes)
        self.boundary = n
        rows, cols, w, masks = [], [], [], {}
        self.edges = {}
        for (c, u, v), (p, mask) in dem.graphlike_edges().items():
            if c != cls:
                continue
            p = min(p, 0.5)
            weight = math.log((1 - p) / p) if p < 0.5 else 0.0
            iw = max(int(round(weight * WEIGHT_SCALE)), 0)
            a = self.local[u]
            b = self.boundary if v == -1 else self.local[v]
            self.edges[(a, b)] = (p, iw, mask)
        N = n + 1
        for (a, b), (_, iw, mask) in self.edges.items():
            # zero-weight edges are stored with a tiny positive length for the sparse graph
            rows += [a, b]
            cols += [b, a]
            w += [max(iw, 1e-9), max(iw, 1e-9)]
            masks[(a, b)] = masks[(b, a)] = mask
        G = csr_matrix((w, (rows, cols)), shape=(N, N))
        dist, pred = dijkstra(G, directed=False, return_predecessors=True)
        self.dist = np.where(np.isfinite(dist), np.round(dist), np.inf)
        self.has_boundary = any(b == self.boundary for (_, b) in self.edges)
        self.obs = self._path_parities(pred, masks, N)
        self.n_observables = dem.n_observables

    @staticmethod
    def _path_parities(pred, masks, N):
        P = np.zeros((N, N), dtype=np.int64)
        for s in range(N):
            order = np.argsort(np.where(pred[s] < 0, -1, 0) + 0, kind="stable")
            done = np.zeros(N, dtype=bool)
            done[s] = True
            stack_order = []
            # resolve parents before children by walking up predecessor chains
            for v in range(N):
                chain = []
                x = v
                while not done[x] and pred[s, x] >= 0:
                    chain.append(x)
                    x = pred[s, x]
                for y in reversed(chain):
                    P[s, y] = P[s, pred[s, y]] ^ masks[(pred[s, y], y)]
                    done[y] = True
        return P

    def fired_local(self, events_row) -> List[int]:
        return [self.local[g] for g in self.nodes if events_row[g]]


def _mask_to_bits(mask, n_obs):
    return np.array([(mask >> i) & 1 for i in range(n_obs)], dtype=bool)


def match(graph: MatchingGraph, fired: Sequence[int]):
    """Minimum-weight perfect matching of defects (boundary copies allowed).

    Returns (total integer weight, observable mask, pairs).
    """
    k = len(fired)
    if k == 0:
        return 0, 0, []
    B = graph.boundary
    D = graph.dist
    if not graph.has_boundary and k % 2:
        raise OddDefectsWithoutBoundary(f"{k} defects and no boundary")
    if k > GREEDY_DEFECT_LIMIT:
        log.warning("greedy matching fallback for %d defects", k)
        return _greedy_match(graph, fired)
    G = nx.Graph()
    big = 0
    edges = []
    for i in range(k):
        for j in range(i + 1, k):
            d = D[fired[i], fired[j]]
            if np.isfinite(d):
                edges.append((i, j, int(d)))
        if graph.has_boundary and np.isfinite(D[fired[i], B]):
            edges.append((i, k + i, int(D[fired[i], B])))
            for j in range(i + 1, k):
                edges.append((k + i, k + j, 0))
    big = 1 + max((e[2] for e in edges), default=0)
    for a, b, w in edges:
        G.add_edge(a, b, weight=big - w)
    m = nx.max_weight_matching(G, maxcardinality=True)
    total, mask, pairs = 0, 0, []
    for a, b in m:
        a, b = min(a, b), max(a, b)
        if a >= k:
            continue
        if b >= k:
            total += int(D[fired[a], B])
            mask ^= int(graph.obs[fired[a], B])
            pairs.append((fired[a], B))
        else:
            total += int(D[fired[a], fired[b]])
            mask ^= int(graph.obs[fired[a], fired[b]])
            pairs.append((fired[a], fired[b]))
    covered = {x for p in pairs for x in p if x != B}
    if len(covered) != k:
        raise OddDefectsWithoutBoundary("matching left defects unmatched")
    return total, mask, pairs


def _greedy_match(graph, fired):
    B = graph.boundary
    left = list(fired)
    total, mask, pairs = 0, 0, []
    while left:
        a = left.pop(0)
        best, bj = graph.dist[a, B], None
        for j, b in enumerate(left):
            if graph.dist[a, b] < best:
                best, bj = graph.dist[a, b], j
        if bj is None:
            pairs.append((a, B))
            mask ^= int(graph.obs[a, B])
        else:
            b = left.pop(bj)
            pairs.append((a, b))
            mask ^= int(graph.obs[a, b])
        total += int(best)
    return total, mask, pairs


def brute_force_match(graph: MatchingGraph, fired: Sequence[int]):
    """Exhaustive minimum-weight pairing (each defect to another or the boundary)."""
    fired = tuple(fired)
    B = graph.boundary
    D = graph.dist

    @lru_cache(maxsize=None)
    def best(rem: Tuple[int, ...]):
        if not rem:
            return 0, 0
        a, rest = rem[0], rem[1:]
        opts = []
        if graph.has_boundary and np.isfinite(D[a, B]):
            w, m = best(rest)
            opts.append((w + int(D[a, B]), m ^ int(graph.obs[a, B])))
        for j, b in enumerate(rest):
            if np.isfinite(D[a, b]):
                w, m = best(rest[:j] + rest[j + 1:])
                opts.append((w + int(D[a, b]), m ^ int(graph.obs[a, b])))
        if not opts:
            return math.inf, 0
        return min(opts, key=lambda t: t[0])

    w, m = best(fired)
    if math.isinf(w):
        raise OddDefectsWithoutBoundary("no pairing exists")
    return w, m


class Decoder:
    """MWPM decoder over the DEM; one matching graph per detector class that
    carries observable annotations."""

    def __init__(self, dem: DetectorErrorModel, backend: str = "mwpm"):
        self.dem = dem
        self.backend = backend
        classes = sorted(set(dem.detector_classes))
        edges = dem.graphlike_edges()
        relevant = sorted({c for (c, _, _), (_, m) in edges.items() if m})
        self.graphs = [MatchingGraph(dem, c) for c in (relevant or classes[:1])] if classes else []
        self._pm = None
        if backend == "pymatching":
            self._pm = [self._pymatching(g) for g in self.graphs]

    @staticmethod
    def _pymatching(g: MatchingGraph):
        import pymatching

        m = pymatching.Matching()
        for (a, b), (p, iw, mask) in g.edges.items():
            fid = {i for i in range(max(mask.bit_length(), 1)) if mask >> i & 1}
            w = iw / WEIGHT_SCALE
            if b == g.boundary:
                m.add_boundary_edge(a, fault_ids=fid, weight=w, error_probability=p, merge_strategy="smallest-weight")
            else:
                m.add_edge(a, b, fault_ids=fid, weight=w, error_probability=p, merge_strategy="smallest-weight")
        return m

    def decode(self, events_row: np.ndarray) -> np.ndarray:
        mask = 0
        for gi, g in enumerate(self.graphs):
            fired = [g.local[x] for x in np.flatnonzero(events_row) if x in g.local]
            if self._pm is not None:
                syn = np.zeros(len(g.nodes), dtype=np.uint8)
                syn[fired] = 1
                pred = self._pm[gi].decode(syn)
                mask ^= sum(int(v) << i for i, v in enumerate(pred))
            else:
                mask ^= match(g, fired)[1]
        return _mask_to_bits(mask, self.dem.n_observables)

    def decode_batch(self, events: np.ndarray) -> np.ndarray:
        out = np.zeros((events.shape[0], self.dem.n_observables), dtype=bool)
        if events.shape[0] == 0:
            return out
        if self._pm is not None:
            return self._decode_batch_pm(events)
        uniq, inv = np.unique(events, axis=0, return_inverse=True)
        preds = np.array([self.decode(row) for row in uniq]).reshape(len(uniq), -1)
        return preds[np.asarray(inv).ravel()]


    def _decode_batch_pm(self, events):
        masks = np.zeros(events.shape[0], dtype=np.int64)
        for g, m in zip(self.graphs, self._pm):
            syn = np.ascontiguousarray(events[:, g.nodes], dtype=np.uint8)
            pred = np.asarray(m.decode_batch(syn), dtype=np.int64).reshape(events.shape[0], -1)
            for i in range(pred.shape[1]):
                masks ^= pred[:, i] << i
        return np.array([(masks >> i) & 1 for i in range(self.dem.n_observables)], dtype=bool).T


def decode_mwpm(dem: DetectorErrorModel, events: np.ndarray) -> np.ndarray:
    """Predicted observable flips for one shot (1-D) or a batch (2-D)."""
    dec = Decoder(dem)
    events = np.asarray(events, dtype=bool)
    return dec.decode(events) if events.ndim == 1 else dec.decode_batch(events)


def wilson_interval(k: int, n: int, confidence: float = 0.95):
    if n == 0:
        return 0.0, 1.0
    ci = binomtest(k, n).proportion_ci(confidence_level=confidence, method="wilson")
    return float(ci.low), float(ci.high)


def logical_error_rate(circuit: StabilizerCircuit, n_shots: int, seed: int, backend: str = "mwpm",
                       workers: Optional[int] = None, dem: Optional[DetectorErrorModel] = None) -> dict:
    """Fraction of shots where the decoder's prediction misses the observable flip."""
    batch = sample(circuit, n_shots, seed, workers)
    dem = dem or build_dem(circuit)
    pred = Decoder(dem, backend).decode_batch(batch.detection_events)
    fails = np.any(pred != batch.observable_flips, axis=1)
    k = int(fails.sum())
    lo, hi = wilson_interval(k, n_shots)
    return {"rate": k / n_shots if n_shots else 0.0, "ci_low": lo, "ci_high": hi, "n_errors": k,
            "n_shots": n_shots, "seed": seed, "backend": backend}


# ----------------------------------------------------------------------------
# noiseless tableau check of detector determinism

class AffineTableau:
    """Stabilizer tableau whose sign bits are affine functions of the random
    measurement outcomes (column 0 is the constant term)."""

    def __init__(self, n: int, n_vars: int):
        self.n = n
        self.x = np.zeros((2 * n + 1, n), dtype=bool)
        self.z = np.zeros((2 * n + 1, n), dtype=bool)
        self.r = np.zeros((2 * n + 1, n_vars + 1), dtype=bool)
        self.x[np.arange(n), np.arange(n)] = True
        self.z[n + np.arange(n), np.arange(n)] = True
        self.n_used = 0

    def h(self, a):
        self.r[:, 0] ^= self.x[:, a] & self.z[:, a]
        self.x[:, a], self.z[:, a] = self.z[:, a].copy(), self.x[:, a].copy()

    def s(self, a):
        self.r[:, 0] ^= self.x[:, a] & self.z[:, a]
        self.z[:, a] ^= self.x[:, a]

    def pauli_z(self, a):
        self.r[:, 0] ^= self.x[:, a]

    def cx(self, a, b):
        x, z = self.x, self.z
        self.r[:, 0] ^= x[:, a] & z[:, b] & ~(x[:, b] ^ z[:, a])
        x[:, b] ^= x[:, a]
        z[:, a] ^= z[:, b]

    @staticmethod
    def _g_sum(x1, z1, x2, z2):
        x1, z1, x2, z2 = (v.astype(np.int64) for v in (x1, z1, x2, z2))
        g = np.where((x1 == 1) & (z1 == 1), z2 - x2,
                     np.where(x1 == 1, z2 * (2 * x2 - 1), np.where(z1 == 1, x2 * (1 - 2 * z2), 0)))
        return g.sum(axis=-1)

    def _rowsum(self, h, i):
        """Row(s) h <- row i * row(s) h."""
        gs = self._g_sum(self.x[i], self.z[i], self.x[h], self.z[h])
        c = (np.mod(gs, 4) // 2).astype(bool)
        self.r[h] ^= self.r[i]
        self.r[h, 0] ^= c
        self.x[h] ^= self.x[i]
        self.z[h] ^= self.z[i]

    def measure_z(self, a) -> np.ndarray:
        n = self.n
        stab = np.flatnonzero(self.x[n:2 * n, a])
        if stab.size:
            p = n + stab[0]
            others = np.flatnonzero(self.x[:2 * n, a])
            others = others[others != p]
            if others.size:
                self._rowsum(others, p)
            self.x[p - n], self.z[p - n], self.r[p - n] = self.x[p], self.z[p], self.r[p]
            self.x[p] = False
            self.z[p] = False
            self.z[p, a] = True
            self.n_used += 1
            self.r[p] = False
            self.r[p, self.n_used] = True
            return self.r[p].copy()
        s = 2 * n
        self.x[s] = False
        self.z[s] = False
        self.r[s] = False
        for i in np.flatnonzero(self.x[:n, a]):
            self._rowsum(s, i + n)
        return self.r[s].copy()

    def reset_z(self, a):
        m = self.measure_z(a)
        # conditional X flips the sign of every row with Z support on a
        rows = self.z[:, a]
        self.r[np.ix_(rows, np.arange(self.r.shape[1]))] ^= m


def measurement_functions(circuit: StabilizerCircuit) -> np.ndarray:
    """Noiseless outcome of each measurement as an affine GF(2) form."""
    n_meas = circuit.n_measurements
    n_resets = sum(len(o.targets) for o in circuit.ops if o.name in ("R", "RX"))
    tab = AffineTableau(circuit.n_qubits, n_meas + n_resets)
    out = []
    for op in circuit.ops:
        t = op.targets
        if op.name == "H":
            for a in t:
                tab.h(a)
        elif op.name == "S":
            for a in t:
                tab.s(a)
        elif op.name == "S_DAG":
            for a in t:
                tab.s(a)
                tab.pauli_z(a)
        elif op.name == "CX":
            for a, b in zip(t[0::2], t[1::2]):
                tab.cx(a, b)
        elif op.name == "R":
            for a in t:
                tab.reset_z(a)
        elif op.name == "RX":
            for a in t:
                tab.reset_z(a)
                tab.h(a)
        elif op.name == "M":
            for a in t:
                out.append(tab.measure_z(a))
        elif op.name == "MX":
            for a in t:
                tab.h(a)
                out.append(tab.measure_z(a))
                tab.h(a)
    return np.array(out, dtype=bool).reshape(len(out), -1)


def check_determinism(circuit: StabilizerCircuit) -> dict:
    """Detectors/observables whose noiseless value is random or nonzero."""
    M = measurement_functions(circuit)
    dets, obs = _detector_lists(circuit)

    def value(idxs):
        v = np.zeros(M.shape[1], dtype=bool)
        for i in idxs:
            v ^= M[i]
        return v

    bad_d = [k for k, d in enumerate(dets) if value(d).any()]
    rand_o = [k for k, o in enumerate(obs) if value(o)[1:].any()]
    flipped_o = [k for k, o in enumerate(obs) if value(o)[0] and not value(o)[1:].any()]
    return {"nondeterministic_or_nonzero_detectors": bad_d, "random_observables": rand_o,
            "flipped_observables": flipped_o, "ok": not bad_d and not rand_o and not flipped_o}
