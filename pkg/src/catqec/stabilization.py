"""Pulsed two-photon stabilization: cumulative bit-flip growth under duty cycling."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from . import dynamics as dy
from . import hilbert as hs
from .errors import InsufficientData
from .gates import storage_recovery_coefficients

WELL_STABILIZED_PRODUCT = 25.0


@dataclass(frozen=True)
class PulsingConfig:
    """Duty-cycled D[a^2 - alpha^2] with single-photon loss.

    Times are in units of 1/kappa1 (kappa1 = 1 unless ``kappa1`` is set).
    The stabilization is on during the first ``duty * period`` of each round.
    """
    alpha: complex = 2.0
    kappa2_over_kappa1: float = 25.0
    duty: float = 1.0
    period: float = 0.0125
    n_rounds: int = 400
    kappa1: float = 1.0

    def __post_init__(self):
        if not (0.0 < self.duty <= 1.0):
            raise ValueError("duty must lie in (0, 1]")
        if self.n_rounds < 2:
            raise ValueError("n_rounds must be >= 2")
        if self.period <= 0 or self.kappa1 <= 0 or self.kappa2_over_kappa1 < 0:
            raise ValueError("period and rates must be positive")

    @property
    def confinement_product(self) -> float:
        return self.kappa2_over_kappa1 * abs(self.alpha) ** 2 * self.duty

    @classmethod
    def from_product(cls, alpha, kappa_ratio: float, duty: float, **kw) -> "PulsingConfig":
        """Build from kappa2 |alpha|^2 / kappa1 instead of kappa2 / kappa1."""
        return cls(alpha, kappa_ratio / abs(alpha) ** 2, duty, **kw)


def well_stabilized(config) -> bool:
    """(kappa2 |alpha|^2 / kappa1)(T_on / T) >= 25."""
    if isinstance(config, PulsingConfig):
        product = config.confinement_product
    else:
        kappa_ratio, duty = config
        product = kappa_ratio * duty
    return bool(product >= WELL_STABILIZED_PRODUCT - 1e-12)


def bitflip_curve(config: PulsingConfig, model: dy.NoiseModel = None, cutoff: int = None):
    """p_X at every round boundary: recovered population of |1_C> from |0_C>.

    Only single-photon loss is kept from ``model`` (rate kappa1 of the config
    when no model is given).  Returns (times, p_x).
    """
    alpha = config.alpha
    k1 = config.kappa1 if model is None else model.kappa1_over_chi
    F = cutoff or hs.fock_cutoff_for(abs(alpha) ** 2) + 10
    hs._check_cutoff(alpha, F)
    Cw = hs.cat_codewords(alpha, F)
    a = hs.osc_annihilation(F)
    loss = [math.sqrt(k1) * a] if k1 > 0 else []
    k2 = config.kappa2_over_kappa1 * k1
    on_ops = loss + ([math.sqrt(k2) * (a @ a - alpha ** 2 * np.eye(F))] if k2 > 0 else [])
    T_on = config.duty * config.period
    T_off = config.period - T_on
    E = np.eye(F * F, dtype=complex)
    if on_ops and T_on > 0:
        E = expm(dy.liouvillian_superoperator(None, on_ops) * T_on)
    if loss and T_off > 0:
        E = expm(dy.liouvillian_superoperator(None, loss) * T_off) @ E
    rho = np.outer(Cw[:, 0], Cw[:, 0].conj()).reshape(-1, order="F")
    states = np.empty((F, F, config.n_rounds), dtype=complex)
    for k in range(config.n_rounds):
        rho = E @ rho
        states[:, :, k] = rho.reshape(F, F, order="F")
    c = storage_recovery_coefficients(states, alpha, F)
    times = config.period * np.arange(1, config.n_rounds + 1)
    return times, np.real(c[1, 1])


def powerlaw_exponent(p_x, times=None) -> float:
    """Least-squares slope of log p_X against log t."""
    p = np.asarray(p_x, dtype=float)
    t = np.arange(1, p.size + 1, dtype=float) if times is None else np.asarray(times, dtype=float)
    if p.size < 5:
        raise InsufficientData("need at least 5 samples")
    if np.any(p <= 0) or np.any(t <= 0):
        raise InsufficientData("samples must be positive")
    return float(np.polyfit(np.log(t), np.log(p), 1)[0])


def exponent_grid(kappa_ratios=(5, 25, 125), duties=(0.1, 0.3, 1.0), alpha=2.0, **kw):
    """Rows (kappa_ratio, duty, product, exponent, well_stabilized) over a grid."""
    rows = []
    for kr in kappa_ratios:
        for duty in duties:
            cfg = PulsingConfig.from_product(alpha, kr, duty, **kw)
            t, p = bitflip_curve(cfg)
            rows.append({"kappa_ratio": kr, "duty": duty, "product": kr * duty,
                         "exponent": powerlaw_exponent(p, t), "well_stabilized": well_stabilized(cfg)})
    return rows
