import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nmer.noise import (CONDITIONS, ConditionPattern, NoiseType, apply_gaussian, apply_impulse,
                        build_schedule, corrupt_condition, derive_rng, make_impulse_noise)

from conftest import random_records
from oracles import alpha_bar_direct


@pytest.fixture(scope="module")
def sched():
    return build_schedule(0.01, 0.5, 100, "scaled_linear")


def test_schedule_endpoints_and_first_steps(sched):
    assert sched.betas[0] == pytest.approx(0.01, abs=1e-12)
    assert sched.betas[-1] == pytest.approx(0.5, abs=1e-12)
    assert sched.alpha_bars[0] == 1.0
    assert sched.alpha_bars[1] == pytest.approx(0.99, abs=1e-12)
    # beta_2 = (0.1 + (sqrt(0.5) - 0.1) / 99)^2
    assert sched.betas[1] == pytest.approx(0.011264, abs=1e-6)
    assert abs(sched.alpha_bars[2] - alpha_bar_direct(0.01, 0.5, 100, 2)) < 1e-12
    assert sched.alpha_bars[2] == pytest.approx(0.978849, abs=1e-6)


def test_alpha_bar_matches_direct_product(sched):
    err = max(abs(sched.alpha_bars[t] - alpha_bar_direct(0.01, 0.5, 100, t)) for t in range(101))
    assert err < 1e-12


def test_linear_schedule():
    s = build_schedule(0.01, 0.5, 5, "linear")
    np.testing.assert_allclose(s.betas, [0.01, 0.1325, 0.255, 0.3775, 0.5])


def test_single_step_schedule():
    s = build_schedule(0.01, 0.5, 1)
    assert s.betas.tolist() == [0.01]
    assert s.alpha_bars.tolist() == [1.0, 0.99]


@pytest.mark.parametrize("args", [(0.5, 0.01, 10), (0.1, 0.1, 10), (0.0, 0.5, 10), (0.1, 1.0, 10),
                                  (0.01, 0.5, 0)])
def test_schedule_rejects_bad_bounds(args):
    with pytest.raises(ValueError):
        build_schedule(*args)


def test_schedule_rejects_unknown_kind():
    with pytest.raises(ValueError):
        build_schedule(0.01, 0.5, 10, "cosine")


@settings(max_examples=60, deadline=None)
@given(
    lo=st.floats(1e-4, 0.4),
    gap=st.floats(1e-3, 0.5),
    T=st.integers(1, 300),
    kind=st.sampled_from(["scaled_linear", "linear"]),
)
def test_schedule_invariants(lo, gap, T, kind):
    hi = min(lo + gap, 0.99)
    s = build_schedule(lo, hi, T, kind)
    assert len(s.betas) == T and len(s.alpha_bars) == T + 1
    assert np.all(s.betas >= lo) and np.all(s.betas <= hi)
    assert s.alpha_bars[0] == 1.0
    assert np.all(np.diff(s.alpha_bars) < 0)
    assert np.all((s.alpha_bars > 0) & (s.alpha_bars <= 1))
    direct = np.array([np.prod(1 - s.betas[:t]) for t in range(T + 1)])
    assert np.max(np.abs(direct - s.alpha_bars)) < 1e-12
    snr = s.alpha_bars[1:] / (1 - s.alpha_bars[1:])
    assert np.all(np.diff(snr) < 0)


def test_gaussian_identity_at_t0(sched):
    E0 = np.random.default_rng(0).standard_normal((7, 5)).astype(np.float32)
    out = apply_gaussian(E0, 0, sched, np.random.default_rng(1))
    assert out.dtype == E0.dtype and out.tobytes() == E0.tobytes()


@pytest.mark.parametrize("t", [1, 20, 60, 100])
def test_gaussian_on_zeros_has_noise_variance(sched, t):
    out = apply_gaussian(np.zeros(100_000), t, sched, np.random.default_rng(t))
    target = 1 - sched.alpha_bars[t]
    assert abs(out.var() - target) <= 0.01 * target


@pytest.mark.parametrize("t", [20, 40, 60, 80, 100])
def test_gaussian_preserves_unit_variance(sched, t):
    rng = np.random.default_rng(100 + t)
    out = apply_gaussian(rng.standard_normal(100_000), t, sched, rng)
    assert abs(out.var() - 1.0) <= 0.01


def test_gaussian_is_deterministic_given_seed(sched):
    E0 = np.ones((3, 4))
    a = apply_gaussian(E0, 50, sched, np.random.default_rng(9))
    b = apply_gaussian(E0, 50, sched, np.random.default_rng(9))
    assert np.array_equal(a, b)


@pytest.mark.parametrize("t", [-1, 101])
def test_gaussian_rejects_out_of_range_t(sched, t):
    with pytest.raises(ValueError):
        apply_gaussian(np.zeros(3), t, sched, np.random.default_rng(0))


def test_gaussian_rejects_nonfinite(sched):
    with pytest.raises(ValueError):
        apply_gaussian(np.array([0.0, np.nan]), 5, sched, np.random.default_rng(0))


def test_impulse_all_zero_when_p_is_one():
    eps = make_impulse_noise((50, 20), 1.0, np.random.default_rng(0))
    assert not eps.any()


def test_impulse_zero_fraction():
    eps = make_impulse_noise((100_000,), 0.3, np.random.default_rng(0))
    assert abs(np.mean(eps == 0) - 0.3) <= 0.01
    assert set(np.unique(eps)) == {-1.0, 0.0, 1.0}


def test_impulse_balanced_signs_at_p0():
    eps = make_impulse_noise((100_000,), 0.0, np.random.default_rng(0))
    assert abs(eps.mean()) <= 0.01
    assert not np.any(eps == 0)


@pytest.mark.parametrize("p", [-0.1, 1.5])
def test_impulse_rejects_bad_p(p):
    with pytest.raises(ValueError):
        make_impulse_noise((3,), p, np.random.default_rng(0))


@settings(max_examples=30, deadline=None)
@given(p=st.floats(0, 1), seed=st.integers(0, 2**31))
def test_impulse_support(p, seed):
    eps = make_impulse_noise((200,), p, np.random.default_rng(seed))
    assert set(np.unique(eps)) <= {-1.0, 0.0, 1.0}


def test_apply_impulse_cases(sched):
    E0 = np.random.default_rng(0).standard_normal((10, 3))
    assert np.array_equal(apply_impulse(E0, 0, 0.3, sched, np.random.default_rng(0)), E0)
    out = apply_impulse(E0, 37, 1.0, sched, np.random.default_rng(0))
    np.testing.assert_array_equal(out, np.sqrt(sched.alpha_bars[37]) * E0)
    zeros = apply_impulse(np.zeros(100_000), 100, 0.3, sched, np.random.default_rng(3))
    assert abs(np.mean(zeros == 0) - 0.3) <= 0.01


def test_six_conditions():
    names = [c.name for c in CONDITIONS]
    assert names == ["{a}", "{v}", "{l}", "{a,v}", "{a,l}", "{v,l}"]
    assert all(c.noisy for c in CONDITIONS)


@pytest.mark.parametrize("bad", [set(), {"a", "v", "l"}, {"x"}])
def test_condition_rejects_invalid(bad):
    with pytest.raises(ValueError):
        ConditionPattern(frozenset(bad))


@pytest.mark.parametrize("text", ["al", "a,l", "{a,l}", "{a, l}"])
def test_condition_parse(text):
    assert ConditionPattern.parse(text) == ConditionPattern(frozenset("al"))


def test_corrupt_condition_keeps_clean_modalities_bit_identical(sched):
    rec = random_records(1)[0]
    cond = ConditionPattern.parse("a,l")
    out = corrupt_condition(rec, cond, NoiseType("gaussian"), 50, sched, np.random.default_rng(0))
    assert out.feat_a.tobytes() == rec.feat_a.tobytes()
    assert out.feat_l.tobytes() == rec.feat_l.tobytes()
    assert not np.array_equal(out.feat_v, rec.feat_v)
    assert out.label == rec.label and out.id == rec.id


@pytest.mark.parametrize("cond", CONDITIONS, ids=str)
@pytest.mark.parametrize("kind", ["gaussian", "impulse"])
def test_corrupt_identity_at_t0(sched, cond, kind):
    rec = random_records(1)[0]
    out = corrupt_condition(rec, cond, NoiseType(kind), 0, sched, np.random.default_rng(0))
    for m in "avl":
        assert out.feat(m).tobytes() == rec.feat(m).tobytes()


def test_corrupt_replay(sched):
    rec = random_records(1)[0]
    cond = CONDITIONS[0]
    a = corrupt_condition(rec, cond, NoiseType("impulse"), 30, sched, derive_rng(5, "x", rec.id))
    b = corrupt_condition(rec, cond, NoiseType("impulse"), 30, sched, derive_rng(5, "x", rec.id))
    for m in "avl":
        assert np.array_equal(a.feat(m), b.feat(m))


def test_corrupt_rejects_bad_types(sched):
    rec = random_records(1)[0]
    with pytest.raises(TypeError):
        corrupt_condition(rec, "a", NoiseType(), 3, sched, np.random.default_rng(0))
    with pytest.raises(ValueError):
        NoiseType("speckle")


def test_derive_rng_streams_differ_by_key():
    a = derive_rng(0, "train", 1, "id0").random(4)
    b = derive_rng(0, "train", 1, "id1").random(4)
    c = derive_rng(0, "train", 1, "id0").random(4)
    assert not np.array_equal(a, b)
    assert np.array_equal(a, c)
