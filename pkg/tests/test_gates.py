import math

import numpy as np
import pytest

from catqec import dynamics as dy
from catqec import gates as gt
from catqec import hilbert as hs
from catqec.errors import NonPhysicalChannel


def random_channel(n, rng):
    labels = gt.pauli_labels(n)
    p = rng.random(len(labels)) ** 3
    p[0] += 5
    return gt.PauliChannel(n, dict(zip(labels, p / p.sum())))


def test_identity_map_gives_identity_channel():
    ch = gt.extract_pauli_channel(lambda ms: np.asarray(ms), np.eye(4), n_qubits=2)
    assert ch.probs["II"] == pytest.approx(1.0, abs=1e-14)


def test_depolarizing_extraction_brute_force():
    p = 0.1
    Ps = [gt.pauli_matrix(k) for k in "XYZ"]
    dep = lambda ms: np.array([(1 - p) * m + p / 3 * sum(P @ m @ P for P in Ps) for m in ms])
    ch = gt.extract_pauli_channel(dep, np.eye(2), n_qubits=1)
    for k in "XYZ":
        assert ch.probs[k] == pytest.approx(p / 3, abs=1e-10)


@pytest.mark.parametrize("n", [1, 2])
def test_channel_round_trip(n):
    rng = np.random.default_rng(n)
    ref = random_channel(n, rng)
    U = gt.crx_ideal_unitary() if n == 2 else gt.rx(0.3)
    # the oracle map is error-after-gate: E(U rho U^dag)
    err = gt.channel_from_probs_map(ref)
    noisy = lambda ms: err(np.array([U @ m @ U.conj().T for m in ms]))
    ch = gt.extract_pauli_channel(noisy, U, n_qubits=n)
    assert np.max(np.abs(ch.vector() - ref.vector())) < 1e-10
    assert ch.total() == pytest.approx(1.0, abs=1e-12)


def test_non_physical_map_rejected():
    with pytest.raises(NonPhysicalChannel):
        gt.extract_pauli_channel(lambda ms: np.array([m.T for m in ms]), np.eye(2), n_qubits=1)


def test_json_round_trip():
    ch = random_channel(2, np.random.default_rng(7))
    back = gt.PauliChannel.from_json(ch.to_json("CX", {"q": 1e-4}))
    assert back.probs == ch.probs
    assert back.metadata["gate"] == "CX"


def test_metrics_consistency():
    ch = random_channel(2, np.random.default_rng(8))
    m = gt.gate_metrics(ch)
    assert m.avg_gate_infidelity == pytest.approx(4 / 5 * (1 - ch.probs["II"]), abs=1e-12)
    assert m.eta_cat == pytest.approx(m.p_Z_cat / m.p_bit_cat)
    pb = sum(v for k, v in ch.probs.items() if k[0] in "XY")
    assert m.p_bit_cat == pytest.approx(pb)


# ---------------------------------------------------------------------------
# spurious rotation

def test_spurious_rotation():
    assert gt.spurious_rotation(0.0) == 0.0
    assert abs(gt.spurious_rotation(0.01)) == pytest.approx(0.02, rel=0.01)
    phis = np.linspace(0.001, math.pi / 5 - 1e-3, 200)
    assert max(abs(gt.spurious_rotation(p)) for p in phis) < math.pi / 2
    assert abs(gt.spurious_rotation(math.pi / 5 + 0.02)) > math.pi / 2


# ---------------------------------------------------------------------------
# recovery

def test_storage_recovery_fixes_code_space():
    a = 1.5
    F = hs.fock_cutoff_for(a * a)
    Cw = hs.cat_codewords(a, F)
    rng = np.random.default_rng(2)
    m = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
    X = Cw @ m @ Cw.conj().T
    out = gt.recovery_map(X, "storage_cat", alpha=a).mat
    assert np.max(np.abs(out - X)) < 1e-8


def test_storage_recovery_matches_long_time_dissipation():
    a = 1.2
    F = 24
    vac = np.zeros((F, F), complex)
    vac[0, 0] = 1
    rec = gt.recovery_map(vac, "storage_cat", alpha=a).mat
    assert np.trace(rec).real == pytest.approx(1.0, abs=1e-10)
    L = hs.osc_annihilation(F) @ hs.osc_annihilation(F) - a * a * np.eye(F)
    sup = dy.liouvillian_superoperator(None, [L])
    from scipy.linalg import expm
    long = (expm(sup * 60.0) @ vac.reshape(-1, order="F")).reshape(F, F, order="F")
    assert np.max(np.abs(long - rec)) < 1e-7
    Cw = hs.cat_codewords(a, F)
    P = Cw @ Cw.conj().T
    assert np.max(np.abs(P @ rec @ P - rec)) < 1e-10


def test_transmon_recovery_moves_e_to_f():
    L = hs.HilbertLayout(4, 3)
    psi = np.zeros(L.dim, complex)
    psi[L.index(1, 1)] = 1
    out = gt.recovery_map(psi, "transmon_gf", layout=L).mat
    assert out[L.index(1, 2), L.index(1, 2)] == pytest.approx(1.0)
    assert abs(np.trace(out) - 1) < 1e-14


# ---------------------------------------------------------------------------
# gate simulations (small |alpha| to stay quick)

def test_noiseless_cx_is_ideal():
    res = gt.simulate_cx(dy.NoiseModel.model1(0.0), math.sqrt(2.0))
    assert res.metrics.avg_gate_infidelity < 1e-9
    assert res.channel.total() == pytest.approx(1.0, abs=1e-9)


def test_cx_z_error_grows_with_q():
    a = math.sqrt(2.0)
    small = gt.simulate_cx(dy.NoiseModel.model1(1e-4), a).metrics.p_Z_cat
    big = gt.simulate_cx(dy.NoiseModel.model1(2e-4), a).metrics.p_Z_cat
    assert big / small == pytest.approx(2.0, rel=0.02)


@pytest.mark.parametrize("variant", ["full9", "simple5"])
def test_ideal_selective_crx_is_identity(variant):
    # residual vacuum weight of the displaced state falls like exp(-4|alpha|^2)
    errs = [1 - gt.ideal_selective_crx_channel(a, variant).probs["II"] for a in (1.0, 2.0, 3.0)]
    assert errs[0] > errs[1] > 0
    assert errs[1] < 1e-7
    assert errs[2] < 1e-12


def test_idle_channel_properties():
    assert gt.simulate_idle(dy.NoiseModel.model1(0.0), math.sqrt(6)).probs["I"] > 1 - 1e-10
    m = dy.NoiseModel.model1(1e-4)
    one = gt.simulate_idle(m, math.sqrt(6))
    two = gt.simulate_idle(m, math.sqrt(6), duration=2 * math.pi)
    assert two.probs["Z"] / one.probs["Z"] == pytest.approx(2.0, rel=0.01)
    assert one.probs["X"] + one.probs["Y"] < one.probs["Z"] / 100
    assert one.total() == pytest.approx(1.0, abs=1e-9)


def test_noiseless_crx_lindblad_matches_unitary_route():
    a = math.sqrt(2.0)
    env = gt.default_crx_envelope(a)
    lind = gt.simulate_crx(dy.NoiseModel.model1(0.0), a, env, tol=1e-11).metrics.avg_gate_infidelity
    unit = gt.coherent_error(a, env)
    assert lind == pytest.approx(unit, rel=1e-3, abs=1e-9)


def test_crx_schedule_duration():
    a = 2.0
    env = gt.default_crx_envelope(a)
    sched = gt.crx_schedule(a, env)
    total = 4 * env.duration + sum(s[1] for s in sched if s[0] == "idle")
    assert total == pytest.approx(math.pi)
    assert env.duration <= math.pi / 5 + 1e-12


def test_coherent_error_orderings():
    a = math.sqrt(6.0)
    short = gt.coherent_error(a, gt.default_crx_envelope(a, "truncated_gaussian", T_sel=math.pi / 10))
    long = gt.coherent_error(a, gt.default_crx_envelope(a, "truncated_gaussian", T_sel=math.pi / 4))
    assert long < short
    drag2 = gt.coherent_error(a, gt.default_crx_envelope(a, "semiclassical_2comp"))
    drag1 = gt.coherent_error(a, gt.default_crx_envelope(a, "standard_drag"))
    assert drag2 < drag1
