import math

import numpy as np
import pytest

from catqec import code as cd
from catqec import decode as dc


def _css(d, rounds, noise, basis="X"):
    return cd.syndrome_circuit(cd.build_patch("CSS_rotated", d, d), rounds, noise, basis)


TWO_MX = """
RX 0
MX 0
Z_ERROR(0.1) 0
Z_ERROR(0.1) 0
MX 0
DETECTOR[X](0,0,0) 0
DETECTOR[X](0,0,1) 0 1
OBSERVABLE_INCLUDE(0) 1
"""


# ---------------------------------------------------------------- DEM

def test_parallel_faults_merge_by_xor_probability():
    c = cd.StabilizerCircuit.from_text(TWO_MX)
    dem = dc.build_dem(c)
    assert len(dem.faults) == 1
    p, dets, obs = dem.faults[0]
    assert dets == (1,) and obs == (0,)
    assert p == pytest.approx(0.1 * 0.9 * 2)
    assert dc.xor_prob(0.1, 0.1) == pytest.approx(0.18)


def test_readout_flip_is_one_time_edge():
    text = """
RX 0
MX 0
MX(0.02) 0
MX 0
DETECTOR[X](0,0,0) 0
DETECTOR[X](0,0,1) 0 1
DETECTOR[X](0,0,2) 1 2
"""
    dem = dc.build_dem(cd.StabilizerCircuit.from_text(text))
    edges = dem.graphlike_edges()
    assert list(edges) == [("X", 1, 2)]
    assert edges[("X", 1, 2)][0] == pytest.approx(0.02)


def _noiseless_with(op, after_round=0, d=3):
    c = cd.syndrome_circuit(cd.build_patch("CSS_rotated", d, d), 3, None, "X")
    last = max(k for k, o in enumerate(c.ops) if o.name == "DETECTOR" and o.args[2] == after_round)
    c.ops.insert(last + 1, op)
    return c


def test_idle_z_on_data_qubit_is_one_space_edge():
    dem = dc.build_dem(_noiseless_with(cd.Op("Z_ERROR", (4,), (0.01,))))
    edges = dem.graphlike_edges()
    assert len(edges) == 1
    (cls, u, v), (p, _) = next(iter(edges.items()))
    assert cls == "X" and v != -1 and p == pytest.approx(0.01)


def test_y_data_error_splits_into_x_and_z_edges():
    c = _noiseless_with(cd.Op("Y_ERROR", (4,), (0.01,)))
    dem = dc.build_dem(c)
    assert len(dem.faults) == 1
    (p, dets, obs), comps = dem.faults[0], dem.components[0]
    assert p == pytest.approx(0.01)
    assert len(dets) == 4
    classes = sorted(dem.detector_classes[cd_[0]] for cd_, _ in comps)
    assert classes == ["X", "Z"]
    for cd_, _ in comps:
        assert len(cd_) == 2
        assert len({dem.detector_classes[i] for i in cd_}) == 1


def test_realistic_dem_is_graphlike():
    c = _css(3, 3, cd.depolarizing_channels(1e-3) | {"readout_reset_error": 1e-3}, "X")
    dem = dc.build_dem(c)
    for comps in dem.components:
        for d, _ in comps:
            assert 1 <= len(d) <= 2
            assert len({dem.detector_classes[i] for i in d}) == 1


def _sign(dem, subset):
    # E[(-1)^(xor of detectors in subset)] for independent faults
    out = 1.0
    for p, d, _ in dem.faults:
        if len(set(d) & subset) % 2:
            out *= 1 - 2 * p
    return out


def test_dem_predicts_detector_and_pair_frequencies():
    c = _css(3, 3, cd.SimplifiedNoise(1e-2, 1e3))
    dem = dc.build_dem(c)
    shots = 100_000
    ev = dc.sample(c, shots, 3).detection_events
    checks = [({u},) for u in range(dem.n_detectors)]
    checks += [({u, v}, u, v) for (_, u, v) in dem.graphlike_edges() if v != -1]
    for chk in checks:
        if len(chk) == 1:
            (u,) = chk[0]
            pred = (1 - _sign(dem, {u})) / 2
            freq = ev[:, u].mean()
        else:
            _, u, v = chk
            pred = (1 - _sign(dem, {u}) - _sign(dem, {v}) + _sign(dem, {u, v})) / 4
            freq = (ev[:, u] & ev[:, v]).mean()
        sigma = math.sqrt(pred * (1 - pred) / shots)
        assert abs(freq - pred) < 3 * sigma, (chk, freq, pred)


def test_dem_text_lists_every_fault():
    dem = dc.build_dem(_css(3, 2, cd.SimplifiedNoise(1e-3, 100)))
    lines = dem.to_text().strip().splitlines()
    assert len(lines) == len(dem.faults)
    assert all(l.startswith("error(") for l in lines)


# ---------------------------------------------------------------- matching

def test_no_defects_means_no_correction():
    dem = dc.build_dem(_css(3, 3, cd.SimplifiedNoise(1e-2, 10)))
    for backend in ("mwpm", "pymatching"):
        pred = dc.Decoder(dem, backend).decode(np.zeros(dem.n_detectors, bool))
        assert not pred.any()


@pytest.mark.parametrize("d", [3, 5])
def test_mwpm_equals_brute_force_matching(d):
    c = _css(d, 3, cd.SimplifiedNoise(1e-2, 10))
    dem = dc.build_dem(c)
    ev = dc.sample(c, 400, 11).detection_events
    dec = dc.Decoder(dem)
    n = 0
    for row in ev:
        if not row.any():
            continue
        for g in dec.graphs:
            fired = g.fired_local(row)
            w1, m1, _ = dc.match(g, fired)
            w2, m2 = dc.brute_force_match(g, fired)
            assert w1 == pytest.approx(w2, abs=1e-9)
            assert m1 == m2
        n += 1
        if n == 200:
            break
    assert n == 200


def test_pymatching_backend_agrees_with_mwpm():
    c = _css(3, 3, cd.SimplifiedNoise(5e-3, 100))
    dem = dc.build_dem(c)
    ev = dc.sample(c, 3000, 4).detection_events
    a = dc.Decoder(dem, "mwpm").decode_batch(ev)
    b = dc.Decoder(dem, "pymatching").decode_batch(ev)
    assert np.mean(np.any(a != b, axis=1)) < 0.01


# ---------------------------------------------------------------- sampling

def test_sampling_is_independent_of_worker_count():
    c = _css(3, 3, cd.SimplifiedNoise(1e-2, 100))
    a = dc.sample(c, 20_000, 9, workers=1)
    b = dc.sample(c, 20_000, 9, workers=2)
    assert np.array_equal(a.detection_events, b.detection_events)
    assert np.array_equal(a.observable_flips, b.observable_flips)
    assert a.to_bytes() == b.to_bytes()


def test_different_seeds_give_different_shots():
    c = _css(3, 3, cd.SimplifiedNoise(1e-2, 100))
    assert not np.array_equal(dc.sample(c, 5000, 1).detection_events, dc.sample(c, 5000, 2).detection_events)


# ---------------------------------------------------------------- logical rates

def _enumeration_bracket(c, dem):
    """Exact failure mass of all fault sets of size <= 3, and that mass plus
    the probability of more than three faults."""
    V = np.zeros((len(dem.faults), dem.n_detectors), bool)
    for k, (_, d, _) in enumerate(dem.faults):
        V[k, list(d)] = True
    Ob = np.array([0 in o for _, _, o in dem.faults])
    ps = np.array([f[0] for f in dem.faults])
    r = ps / (1 - ps)
    P0 = np.prod(1 - ps)
    dec = dc.Decoder(dem, "pymatching")
    n = len(ps)
    fail = np.sum(r * (dec.decode_batch(V)[:, 0] != Ob))
    mass = 1 + r.sum()
    ii, jj = np.triu_indices(n, 1)
    fail += np.sum(r[ii] * r[jj] * (dec.decode_batch(V[ii] ^ V[jj])[:, 0] != (Ob[ii] ^ Ob[jj])))
    mass += np.sum(r[ii] * r[jj])
    for a in range(n - 2):
        b, e = np.triu_indices(n - a - 1, 1)
        b += a + 1
        e += a + 1
        w = r[a] * r[b] * r[e]
        f = dec.decode_batch(V[a] ^ V[b] ^ V[e])[:, 0] != (Ob[a] ^ Ob[b] ^ Ob[e])
        fail += np.sum(w * f)
        mass += w.sum()
    low = P0 * fail
    return low, low + (1 - P0 * mass)


def test_d3_rate_lies_in_low_order_enumeration_bracket():
    c = _css(3, 3, cd.SimplifiedNoise(1e-2, 1e3, 0.01))
    dem = dc.build_dem(c)
    low, high = _enumeration_bracket(c, dem)
    assert 0 < low < high < 0.2
    res = dc.logical_error_rate(c, 200_000, 5, "pymatching", dem=dem)
    sigma = math.sqrt(res["rate"] * (1 - res["rate"]) / res["n_shots"])
    assert low - 3 * sigma <= res["rate"] <= high + 3 * sigma


def test_rate_increases_with_p_z():
    rates = [dc.logical_error_rate(_css(3, 3, cd.SimplifiedNoise(p, 1e3)), 20_000, 2, "pymatching")["rate"]
             for p in (1e-3, 3e-3, 1e-2)]
    assert rates[0] < rates[1] < rates[2]


def test_rate_saturates_near_one_half():
    res = dc.logical_error_rate(_css(3, 3, cd.SimplifiedNoise(0.2, 1e3)), 20_000, 2, "pymatching")
    assert abs(res["rate"] - 0.5) < 0.05


def test_larger_distance_helps_below_threshold():
    r3 = dc.logical_error_rate(_css(3, 3, cd.SimplifiedNoise(1e-3, 1e3)), 100_000, 6, "pymatching")
    r5 = dc.logical_error_rate(_css(5, 5, cd.SimplifiedNoise(1e-3, 1e3)), 100_000, 6, "pymatching")
    assert r5["rate"] < r3["rate"]


def test_noiseless_rate_is_zero():
    res = dc.logical_error_rate(_css(3, 3, None), 5000, 1)
    assert res["n_errors"] == 0 and res["rate"] == 0.0


def test_wilson_interval():
    lo, hi = dc.wilson_interval(10, 100)
    z = 1.959963984540054
    p, n = 0.1, 100
    centre = (p + z * z / (2 * n)) / (1 + z * z / n)
    half = z / (1 + z * z / n) * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n))
    assert lo == pytest.approx(centre - half, rel=1e-9)
    assert hi == pytest.approx(centre + half, rel=1e-9)
    assert dc.wilson_interval(0, 0) == (0.0, 1.0)
    lo0, hi0 = dc.wilson_interval(0, 1000)
    assert lo0 == 0.0 and 0 < hi0 < 0.01
