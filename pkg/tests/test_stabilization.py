import math

import numpy as np
import pytest

from catqec import stabilization as st
from catqec.errors import InsufficientData


def test_well_stabilized_boundary():
    assert st.well_stabilized((125, 0.2))
    assert not st.well_stabilized((125, 0.0))
    assert not st.well_stabilized((24, 1.0))
    cfg = st.PulsingConfig.from_product(2.0, 25.0, 1.0)
    assert cfg.confinement_product == pytest.approx(25.0)
    assert st.well_stabilized(cfg)


def test_config_validation():
    with pytest.raises(ValueError):
        st.PulsingConfig(duty=0.0)
    with pytest.raises(ValueError):
        st.PulsingConfig(n_rounds=1)


def test_exponent_exact_power_laws():
    t = np.linspace(1, 10, 20)
    assert st.powerlaw_exponent(3 * t, t) == pytest.approx(1.0)
    assert st.powerlaw_exponent(0.1 * t ** 2, t) == pytest.approx(2.0)
    rng = np.random.default_rng(0)
    noisy = t ** 1.5 * np.exp(0.05 * rng.standard_normal(t.size))
    assert st.powerlaw_exponent(noisy, t) == pytest.approx(1.5, abs=0.1)
    with pytest.raises(InsufficientData):
        st.powerlaw_exponent([1, 2, 3], [1, 2, 3])
    with pytest.raises(InsufficientData):
        st.powerlaw_exponent([0, 1, 2, 3, 4])


def test_strong_continuous_stabilization_is_linear():
    t, p = st.bitflip_curve(st.PulsingConfig.from_product(2.0, 125, 1.0, n_rounds=60))
    assert st.powerlaw_exponent(p, t) == pytest.approx(1.0, abs=0.15)


def test_unstabilized_growth_is_superlinear():
    t, p = st.bitflip_curve(st.PulsingConfig(2.0, 0.0, 1.0, n_rounds=60))
    assert st.powerlaw_exponent(p, t) > 1.5


def test_linear_rate_scales_with_loss():
    cfg = st.PulsingConfig.from_product(2.0, 125, 1.0, n_rounds=40)
    t1, p1 = st.bitflip_curve(cfg)
    # same kappa2/kappa1 and physical time grid with kappa1 doubled
    cfg2 = st.PulsingConfig(cfg.alpha, cfg.kappa2_over_kappa1, 1.0, cfg.period, 40, kappa1=2.0)
    t2, p2 = st.bitflip_curve(cfg2)
    r1 = np.polyfit(t1[10:], p1[10:], 1)[0]
    r2 = np.polyfit(t2[10:], p2[10:], 1)[0]
    assert r2 / r1 == pytest.approx(2.0, rel=0.2)


def test_exponent_near_one_when_well_stabilized(stabilization_grid):
    for row in stabilization_grid:
        if row["well_stabilized"]:
            assert abs(row["exponent"] - 1.0) <= 0.15, row


def _level_crossing(xs, ys, level):
    for (x0, y0), (x1, y1) in zip(zip(xs, ys), zip(xs[1:], ys[1:])):
        if (y0 - level) * (y1 - level) <= 0 and y0 != y1:
            w = (y0 - level) / (y0 - y1)
            return math.exp(math.log(x0) + w * (math.log(x1) - math.log(x0)))
    return None


def test_exponent_contour_tracks_product_25(stabilization_grid):
    found = 0
    for kr in sorted({r["kappa_ratio"] for r in stabilization_grid}):
        rows = sorted((r for r in stabilization_grid if r["kappa_ratio"] == kr), key=lambda r: r["duty"])
        duty = _level_crossing([r["duty"] for r in rows], [r["exponent"] for r in rows], 1.2)
        if duty is None:
            continue
        found += 1
        assert 12.5 <= kr * duty <= 50.0
    assert found >= 1
