import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import mo_problem
from dmetsqd import detspace, sampler, sqd
from dmetsqd.detspace import SubspaceBasis
from dmetsqd.errors import ConvergenceError
from dmetsqd.sampler import SampleSet
from dmetsqd.sqd import OccupationDistribution, SqdOptions


def _popcount(x):
    return np.array([bin(int(v)).count("1") for v in x])


def test_post_select_all_valid():
    s = SampleSet(3, [0b011, 0b101, 0b011], [0b001, 0b010, 0b100])
    kept, init = sqd.post_select(s, 2, 1)
    assert kept == s
    np.testing.assert_allclose(init.up, [1.0, 2 / 3, 1 / 3])
    np.testing.assert_allclose(init.down, [1 / 3, 1 / 3, 1 / 3])
    assert not init.fallback


def test_post_select_constant_rhf_sample():
    s = SampleSet(4, [0b0011] * 100, [0b0011] * 100)
    _, init = sqd.post_select(s, 2, 2)
    np.testing.assert_array_equal(init.up, [1, 1, 0, 0])
    np.testing.assert_array_equal(init.down, [1, 1, 0, 0])


def test_post_select_fallback():
    s = SampleSet(4, [0b0111, 0b0001], [0b0011, 0b1111])
    kept, init = sqd.post_select(s, 2, 2)
    assert len(kept) == 0 and init.fallback
    np.testing.assert_array_equal(init.up, [1, 1, 0, 0])


def test_sqd_reports_fallback_diagnostic():
    _, h, eri = mo_problem("h4")
    s = SampleSet(4, [0b0111] * 20, [0b0011] * 20)
    res = sqd.sqd_ground_state(s, h, eri, 2, 2, SqdOptions(n_batches=1, batch_size=5, n_iterations=1))
    assert res.diagnostics["fallback_occupations"]


def test_occupation_bounds_enforced():
    with pytest.raises(ValueError):
        OccupationDistribution([0.5, 1.2], [0.0, 0.0])


def test_valid_shots_pass_through_unchanged():
    s = SampleSet(4, [0b0011, 0b0101, 0b1001], [0b0110, 0b1100, 0b0011])
    occ = OccupationDistribution(np.full(4, 0.5), np.full(4, 0.5))
    assert sqd.recover_configurations(s, occ, 2, 2, seed=1) == s


def test_single_surplus_bit_cleared():
    s = SampleSet(5, [0b10111], [0b00011])
    occ = OccupationDistribution(np.full(5, 0.4), np.full(5, 0.4))
    r = sqd.recover_configurations(s, occ, 3, 2, seed=0)
    a = int(r.alpha[0])
    assert bin(a).count("1") == 3 and a & ~0b10111 == 0
    assert r.beta[0] == 0b00011


def test_flip_weights_prefer_high_occupation_in_deficit():
    occ = np.array([0.2, 1.0, 0.3, 0.05])
    bits = np.array([1, 0, 0, 0], dtype=bool)
    w = sqd.flip_weights(bits, occ, surplus=False, eps=1e-3)
    assert w[0] == 0 and np.argmax(w) == 1
    np.testing.assert_allclose(w[1:], (occ[1:] + 1e-3) / (occ[1:] + 1e-3).sum())
    w = sqd.flip_weights(np.array([1, 1, 1, 0], dtype=bool), occ, surplus=True)
    assert w[3] == 0 and np.argmin(w[:3]) == 1 and w.sum() == pytest.approx(1.0)


def test_recovery_draw_frequencies_follow_weights():
    """With one bit to set, the chosen orbital follows the normalized weights."""
    n = 4
    occ = np.array([0.0, 0.6, 0.3, 0.1])
    shots = 40_000
    s = SampleSet(n, np.full(shots, 0b0001), np.full(shots, 0b0011))
    r = sqd.recover_configurations(s, OccupationDistribution(occ, occ), 2, 2, seed=5)
    added = r.alpha ^ 0b0001
    freq = np.array([np.mean(added == (1 << p)) for p in range(n)])
    expected = sqd.flip_weights(np.array([1, 0, 0, 0], dtype=bool), occ, surplus=False)
    assert np.abs(freq - expected).max() < 0.01


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 10), st.data())
def test_recovery_restores_sector(n, data):
    na = data.draw(st.integers(0, n))
    nb = data.draw(st.integers(0, n))
    seed = data.draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    s = SampleSet(n, rng.integers(0, 1 << n, 200), rng.integers(0, 1 << n, 200))
    occ = OccupationDistribution(rng.random(n), rng.random(n))
    r = sqd.recover_configurations(s, occ, na, nb, seed=seed)
    assert (_popcount(r.alpha) == na).all() and (_popcount(r.beta) == nb).all()
    assert r == sqd.recover_configurations(s, occ, na, nb, seed=seed)
    # only surplus bits are cleared and only deficit bits are set
    ca, cb = s.popcounts()
    keep = ca >= na
    assert ((r.alpha[keep] & ~s.alpha[keep]) == 0).all()
    assert ((s.alpha[~keep] & ~r.alpha[~keep]) == 0).all()


def test_batches_spin_closed_and_deterministic():
    rng = np.random.default_rng(0)
    full = detspace.enumerate_full_space(6, 3, 3)
    pick = rng.choice(len(full), 300)
    rec = SampleSet(6, full.alpha[pick], full.beta[pick])
    opts = SqdOptions(n_batches=2, batch_size=40, seed=11)
    b1 = sqd.make_batches(rec, opts, 3, 3)
    b2 = sqd.make_batches(rec, opts, 3, 3)
    assert len(b1) == 2 and all(x == y for x, y in zip(b1, b2))
    for b in b1:
        assert b.is_spin_closed()
        assert len(b) >= 40
    assert any(len(b) > 40 for b in b1)


def test_symmetric_input_gains_nothing_from_closure():
    a = np.array([0b011, 0b101])
    b = np.array([0b101, 0b011])
    rec = SampleSet(3, a, b)
    (basis,) = sqd.make_batches(rec, SqdOptions(n_batches=1, batch_size=10), 2, 2)
    assert len(basis) == 2


def test_batch_size_capped_by_unique_configurations():
    rec = SampleSet(3, [0b011] * 50, [0b011] * 50)
    (basis,) = sqd.make_batches(rec, SqdOptions(n_batches=1, batch_size=10), 2, 2)
    assert len(basis) == 1


def test_exhaustive_limit_equals_fci():
    _, h, eri = mo_problem("h4")
    full = detspace.enumerate_full_space(4, 2, 2)
    e_fci = detspace.davidson_ground_state(full, h, eri)[0]
    s = SampleSet(4, full.alpha, full.beta)
    res = sqd.sqd_ground_state(s, h, eri, 2, 2, SqdOptions(n_batches=1, batch_size=len(full), n_iterations=1))
    assert res.energy == pytest.approx(e_fci, abs=1e-8)
    assert res.history[0]["d"] == 36


def test_nested_bases_never_raise_energy():
    _, h, eri = mo_problem("h4")
    full = detspace.enumerate_full_space(4, 2, 2)
    order = np.random.default_rng(2).permutation(len(full))
    last = np.inf
    for k in range(1, len(full) + 1, 5):
        b = SubspaceBasis(full.alpha[order[:k]], full.beta[order[:k]], 4)
        e = detspace.davidson_ground_state(b, h, eri)[0]
        assert e <= last + 1e-12
        last = e


def test_noisy_run_properties():
    _, h, eri = mo_problem("h6")
    e_fci, c = detspace.fci_ground_state(h, eri, 3, 3)
    shots = sampler.apply_readout_noise(sampler.sample_from_state(c, 3000, 1), 0.05, 1)
    opts = SqdOptions(n_batches=3, batch_size=25, n_iterations=3, seed=4)
    res = sqd.sqd_ground_state(shots, h, eri, 3, 3, opts)
    assert all(r["e_batch"] >= e_fci - 1e-10 for r in res.history)
    assert all(r["d_prime"] <= r["d"] for r in res.history)
    assert res.energy == min(r["e_batch"] for r in res.history)
    assert [r["e_min"] for r in res.history] == list(np.minimum.accumulate([r["e_batch"] for r in res.history]))
    assert res.occupations.up.sum() == pytest.approx(3, abs=1e-8)
    assert res.occupations.down.sum() == pytest.approx(3, abs=1e-8)
    assert (res.occupations.up >= 0).all() and (res.occupations.up <= 1).all()
    again = sqd.sqd_ground_state(shots, h, eri, 3, 3, opts)
    assert again.energy == res.energy and again.history == res.history
    energy, best, occ, history = res
    assert energy == res.energy and best is res.best


def test_failed_batches_skipped_then_fatal(monkeypatch):
    _, h, eri = mo_problem("h4")
    full = detspace.enumerate_full_space(4, 2, 2)
    s = SampleSet(4, full.alpha, full.beta)
    real = sqd.davidson_ground_state
    calls = {"n": 0}

    def flaky(basis, *args):
        calls["n"] += 1
        if calls["n"] == 1:
            raise ConvergenceError("synthetic", residual=1.0, iterate=None)
        return real(basis, *args)

    monkeypatch.setattr(sqd, "davidson_ground_state", flaky)
    res = sqd.sqd_ground_state(s, h, eri, 2, 2, SqdOptions(n_batches=2, batch_size=10, n_iterations=1))
    assert res.diagnostics["skipped_batches"] == [(1, 0)]

    def broken(*args):
        raise ConvergenceError("synthetic", residual=1.0, iterate=None)

    monkeypatch.setattr(sqd, "davidson_ground_state", broken)
    with pytest.raises(ConvergenceError):
        sqd.sqd_ground_state(s, h, eri, 2, 2, SqdOptions(n_batches=2, batch_size=10, n_iterations=1))


def test_options_validated():
    with pytest.raises(ValueError):
        SqdOptions(n_batches=0)
    with pytest.raises(ValueError):
        SqdOptions(n_iterations=0)


def test_history_csv():
    rows = [{"iteration": 1, "batch": 0, "d": 10, "d_prime": 9, "e_batch": -1.5, "e_min": -1.5}]
    text = sqd.history_to_csv(rows, energy_offset=0.25)
    assert text == "iteration,batch,d,d_prime,E_batch,E_min\n1,0,10,9,-1.2500000000,-1.2500000000\n"
