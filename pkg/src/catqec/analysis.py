"""Logical-error fits, thresholds, qubit overheads and achievable (p_Z, eta) maps."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .errors import AllZeroCounts, FitDiverged, InsufficientData, MissingChannel, NoCrossing, Unreachable
from .gates import PauliChannel

PHENOMENOLOGICAL_PZ_FACTOR = 1.5
MAX_DISTANCE = 99


@dataclass
class FitResult:
    ansatz: str
    params: Dict[str, float]
    covariance: np.ndarray
    domain: Dict[str, Tuple[float, float]]
    residual_rms: float
    n_points: int
    metadata: dict = field(default_factory=dict)

    def predict(self, *args) -> np.ndarray:
        p = self.params
        if self.ansatz == "unbiased":
            d, x = (np.asarray(a, dtype=float) for a in args)
            return p["A"] * d ** 2 * (p["B"] * x) ** (p["C"] * d)
        if self.ansatz == "biased_z":
            d, x = (np.asarray(a, dtype=float) for a in args)
            return p["A"] * d * (p["B"] * x) ** (p["C"] * d)
        if self.ansatz == "biased_x":
            dZ, pz, eta = (np.asarray(a, dtype=float) for a in args)
            with np.errstate(divide="ignore"):
                return dZ ** 2 * p["A"] * (pz / eta) ** p["B"]
        raise ValueError(self.ansatz)

    def to_dict(self) -> dict:
        return {"ansatz": self.ansatz, "params": self.params, "covariance": self.covariance.tolist(),
                "domain": self.domain, "residual_rms": self.residual_rms, "n_points": self.n_points,
                "metadata": self.metadata}

    @classmethod
    def from_dict(cls, d: dict) -> "FitResult":
        return cls(d["ansatz"], dict(d["params"]), np.array(d["covariance"]),
                   {k: tuple(v) for k, v in d["domain"].items()}, d["residual_rms"], d["n_points"],
                   d.get("metadata", {}))


def _columns(data, keys):
    """Accept a mapping of arrays or an iterable of row mappings."""
    if isinstance(data, Mapping):
        return [np.asarray(data[k], dtype=float) for k in keys]
    rows = list(data)
    return [np.array([r[k] for r in rows], dtype=float) for k in keys]


def _exp_family_fit(d, x, y, prefactor_power, ansatz, dname, xname):
    """Fit y = A d^k (B x)^(C d) through the linear form
    log y - k log d = log A + (C log B) d + C d log x."""
    keep = y > 0
    d, x, y = d[keep], x[keep], y[keep]
    if len(np.unique(d)) < 3:
        raise InsufficientData(f"need at least 3 distinct {dname} values with nonzero rates")
    if np.any(x <= 0):
        raise InsufficientData(f"{xname} must be positive")
    lhs = np.log(y) - prefactor_power * np.log(d)
    M = np.column_stack([np.ones_like(d), d, d * np.log(x)])
    coef, *_ = np.linalg.lstsq(M, lhs, rcond=None)
    logA, v, C = coef
    if not np.all(np.isfinite(coef)) or C <= 0:
        raise FitDiverged(f"non-physical fit coefficients {coef}")
    B = math.exp(v / C)
    res = lhs - M @ coef
    dof = max(len(y) - 3, 1)
    s2 = float(res @ res) / dof
    cov_lin = s2 * np.linalg.pinv(M.T @ M)
    # delta method to (A, B, C)
    J = np.array([[math.exp(logA), 0, 0], [0, B / C, -B * v / C ** 2], [0, 0, 1]])
    cov = J @ cov_lin @ J.T
    if not (np.isfinite(B) and np.all(np.isfinite(cov))):
        raise FitDiverged("fit diverged")
    return FitResult(ansatz, {"A": math.exp(logA), "B": B, "C": float(C)}, cov,
                     {dname: (float(d.min()), float(d.max())), xname: (float(x.min()), float(x.max()))},
                     float(np.sqrt(np.mean(res ** 2))), int(len(y)))


def fit_unbiased(data) -> FitResult:
    """p(L) = A d^2 (B p)^(C d), least squares in log space; keys d, p, pL."""
    d, p, y = _columns(data, ("d", "p", "pL"))
    return _exp_family_fit(d, p, y, 2, "unbiased", "d", "p")


def fit_biased_z(data) -> FitResult:
    """p(L)_Z = A dZ (B p_Z)^(C dZ) at fixed (dX, eta); keys dZ, p_Z, pL."""
    d, p, y = _columns(data, ("dZ", "p_Z", "pL"))
    return _exp_family_fit(d, p, y, 1, "biased_z", "dZ", "p_Z")


def fit_biased_x(data) -> FitResult:
    """p(L)_X / dZ^2 = A (p_Z/eta)^B at fixed dX; keys dZ, p_Z, eta, pL."""
    dZ, pz, eta, y = _columns(data, ("dZ", "p_Z", "eta", "pL"))
    keep = y > 0
    if keep.sum() < 2:
        raise AllZeroCounts("fewer than two nonzero logical-X rates")
    x = np.log(pz[keep] / eta[keep])
    lhs = np.log(y[keep] / dZ[keep] ** 2)
    if np.ptp(x) == 0:
        raise InsufficientData("p_Z/eta must vary")
    M = np.column_stack([np.ones_like(x), x])
    coef, *_ = np.linalg.lstsq(M, lhs, rcond=None)
    res = lhs - M @ coef
    s2 = float(res @ res) / max(len(x) - 2, 1)
    cov_lin = s2 * np.linalg.pinv(M.T @ M)
    J = np.diag([math.exp(coef[0]), 1.0])
    return FitResult("biased_x", {"A": math.exp(coef[0]), "B": float(coef[1])}, J @ cov_lin @ J.T,
                     {"p_Z/eta": (float(np.exp(x.min())), float(np.exp(x.max())))},
                     float(np.sqrt(np.mean(res ** 2))), int(keep.sum()),
                     {"dropped_zero_rows": int((~keep).sum())})


# ----------------------------------------------------------------------------
# overheads

@dataclass
class OverheadRow:
    target: float
    noise: dict
    dX: int
    dZ: int
    qubits: int
    p_L: float

    def to_dict(self):
        return {"target": self.target, **self.noise, "dX": self.dX, "dZ": self.dZ,
                "qubits": self.qubits, "p_L": self.p_L}


@dataclass
class OverheadTable:
    rows: List[OverheadRow] = field(default_factory=list)

    def to_csv_rows(self):
        return [r.to_dict() for r in self.rows]


def _odd_range(lo=3, hi=MAX_DISTANCE):
    return range(lo, hi + 1, 2)


def overhead(target: float, noise: dict, fits) -> OverheadRow:
    """Smallest 2 dX dZ - 1 whose fitted p(L)_X + p(L)_Z is at most ``target``.

    ``noise`` is {"p": p} (square codes, ``fits`` an unbiased FitResult) or
    {"p_Z": .., "eta": ..} with ``fits = {"z": {dX: FitResult}, "x": {dX: FitResult}}``.
    """
    best = None
    if "p" in noise:
        p = float(noise["p"])
        for d in _odd_range():
            pl = float(fits.predict(d, p))
            if pl <= target:
                best = OverheadRow(target, {"p": p}, d, d, 2 * d * d - 1, pl)
                break
    else:
        pz, eta = float(noise["p_Z"]), float(noise["eta"])
        for dX in sorted(fits["z"]):
            if dX not in fits["x"]:
                continue
            for dZ in _odd_range():
                pl = float(fits["z"][dX].predict(dZ, pz) + fits["x"][dX].predict(dZ, pz, eta))
                if pl <= target:
                    n = 2 * dX * dZ - 1
                    if best is None or n < best.qubits:
                        best = OverheadRow(target, {"p_Z": pz, "eta": eta}, dX, dZ, n, pl)
                    break
    if best is None:
        raise Unreachable(f"no code with distances <= {MAX_DISTANCE} reaches {target:g}")
    return best


# ----------------------------------------------------------------------------
# gate channels -> simplified model

def _cat_z_pair(ch: PauliChannel) -> float:
    return ch.probs["ZI"] + ch.probs["ZZ"]


def _cat_bit(ch: PauliChannel) -> float:
    return sum(p for k, p in ch.probs.items() if k[0] in "XY")


def mapped_parameters(cx: PauliChannel, crx: PauliChannel) -> Optional[Tuple[float, float]]:
    """(p_Z, eta) of the simplified biased model from extracted CX and CRX channels.

    p_Z carries the 3/2 phenomenological factor; eta divides it by the gate-averaged
    cat bit-flip probability.  Returns None when either quantity is zero.
    """
    pz = PHENOMENOLOGICAL_PZ_FACTOR * 0.5 * (_cat_z_pair(cx) + _cat_z_pair(crx))
    pbit = 0.5 * (_cat_bit(cx) + _cat_bit(crx))
    if pz <= 0 or pbit <= 0:
        return None
    return pz, pz / pbit


def achievable_map(q_grid: Iterable[float], alpha_grid: Iterable[float], variant: str,
                   channel_fn: Callable[[str, float, float], Mapping[str, PauliChannel]]) -> List[dict]:
    """Rows (q, alpha2, p_Z, eta) for every grid point with nonzero p_Z and bit-flip rate.

    ``channel_fn(variant, q, alpha2)`` returns at least the CX and CRX channels.
    """
    rows = []
    for q in q_grid:
        for a2 in alpha_grid:
            chans = channel_fn(variant, q, a2)
            missing = [k for k in ("CX", "CRX") if k not in chans]
            if missing:
                raise MissingChannel(f"missing channels {missing} at q={q}, alpha2={a2}")
            mp = mapped_parameters(chans["CX"], chans["CRX"])
            if mp is None:
                continue
            rows.append({"variant": variant, "q": float(q), "alpha2": float(a2), "p_Z": mp[0], "eta": mp[1],
                         "phenomenological_factor": PHENOMENOLOGICAL_PZ_FACTOR})
    return rows


def _log_crossings(x, y1, y2):
    """All x where log y1 and log y2 cross under piecewise-linear interpolation in log y."""
    diff = np.log(np.asarray(y1, float)) - np.log(np.asarray(y2, float))
    out = []
    for i in range(len(x) - 1):
        a, b = diff[i], diff[i + 1]
        if a == 0:
            out.append(float(x[i]))
        elif a * b < 0:
            out.append(float(x[i] + (x[i + 1] - x[i]) * a / (a - b)))
    if diff[-1] == 0:
        out.append(float(x[-1]))
    return out


def max_beneficial_bias(cx_curve, crx_curve, pz_curve=None) -> Tuple[float, float]:
    """Crossing |alpha|^2 of the CRX and CX bit-flip curves and the bias there.

    Curves are (alpha2, p_bit) pairs of arrays.  The bias is p_Z / p_bit at the
    crossing when ``pz_curve`` is given, otherwise 1 / p_bit.
    """
    ax, px = (np.asarray(v, float) for v in cx_curve)
    ar, pr = (np.asarray(v, float) for v in crx_curve)
    lo, hi = max(ax.min(), ar.min()), min(ax.max(), ar.max())
    if lo >= hi:
        raise NoCrossing("curves do not overlap in |alpha|^2")
    grid = np.unique(np.concatenate([ax, ar]))
    grid = grid[(grid >= lo) & (grid <= hi)]
    lx = np.interp(grid, ax, np.log(px))
    lr = np.interp(grid, ar, np.log(pr))
    xs = _log_crossings(grid, np.exp(lr), np.exp(lx))
    if not xs:
        raise NoCrossing("bit-flip curves do not cross")
    a_star = xs[0]
    pbit = float(np.exp(np.interp(a_star, ax, np.log(px))))
    if pz_curve is not None:
        az, pz = (np.asarray(v, float) for v in pz_curve)
        return a_star, float(np.exp(np.interp(a_star, az, np.log(pz)))) / pbit
    return a_star, 1.0 / pbit


def threshold_estimate(curves: Mapping[int, Tuple[Sequence[float], Sequence[float]]]) -> float:
    """Median of pairwise log-log crossings of successive-distance rate curves.

    ``curves[d] = (x values, p(L) values)``; all curves must share the x grid
    over which they are compared (interpolated onto the common overlap).
    """
    ds = sorted(curves)
    if len(ds) < 3:
        raise InsufficientData("need at least 3 distances")
    crossings = []
    for d1, d2 in zip(ds[:-1], ds[1:]):
        x1, y1 = (np.asarray(v, float) for v in curves[d1])
        x2, y2 = (np.asarray(v, float) for v in curves[d2])
        ok1, ok2 = y1 > 0, y2 > 0
        x1, y1, x2, y2 = x1[ok1], y1[ok1], x2[ok2], y2[ok2]
        lo, hi = max(x1.min(), x2.min()), min(x1.max(), x2.max())
        grid = np.unique(np.concatenate([x1, x2]))
        grid = grid[(grid >= lo) & (grid <= hi)]
        if grid.size < 2:
            continue
        l1 = np.interp(np.log(grid), np.log(x1), np.log(y1))
        l2 = np.interp(np.log(grid), np.log(x2), np.log(y2))
        for lx in _log_crossings(np.log(grid), np.exp(l1), np.exp(l2)):
            crossings.append(math.exp(lx))
    if not crossings:
        raise NoCrossing("no pair of successive-distance curves crosses")
    return float(np.median(crossings))


def subthreshold_slope(x, y) -> float:
    """Log-log slope of a logical-rate curve (positive rates only)."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    ok = y > 0
    if ok.sum() < 2:
        raise AllZeroCounts("need two nonzero rates")
    return float(np.polyfit(np.log(x[ok]), np.log(y[ok]), 1)[0])
