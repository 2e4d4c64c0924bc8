import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats as sps

from fedsandbox.data import ColumnSpec, shard, table_from_records
from fedsandbox.errors import ConfigurationError, DegenerateDataError, DomainError
from fedsandbox.fed_stats import (
    Moments,
    PartialStat,
    StatsConfig,
    aggregate_partials_securely,
    local_partials,
    merge,
    plaintext_t,
    run_scenario,
    run_scenario1,
    run_scenario2,
    run_scenario3,
    welch_t,
)
from fedsandbox.federation import Scenario
from fedsandbox.harness import band, log_grid
from fedsandbox.mechanisms import PrivacyParams

from oracles import welch_bruteforce

COLS = [ColumnSpec("x", "numeric", (0.0, 10.0)), ColumnSpec("y", "categorical", categories=("0", "1"))]
GRID9 = log_grid(0.01, 100, 9)


def p(eps):
    return PrivacyParams(eps, 1e-5)


def test_partial_stat_arithmetic():
    t = table_from_records(COLS, [[1, 0], [2, 0], [3, 0], [5, 1]], "y")
    a, b = local_partials(t, "x")
    assert (a.n, a.sum, a.sumsq) == (3, 6.0, 14.0)
    assert (b.n, b.sum, b.sumsq) == (1, 5.0, 25.0)


def test_empty_shard_partials():
    t = table_from_records(COLS, np.empty((0, 2)), "y")
    assert local_partials(t, "x") == (PartialStat(0, 0.0, 0.0), PartialStat(0, 0.0, 0.0))


def test_partials_additive_on_heart(heart):
    t, _ = heart
    parts = [local_partials(s, "thalach") for s in shard(t, 4, 0)]
    for cls in (0, 1):
        assert merge(p_[cls] for p_ in parts) == local_partials(t, "thalach")[cls]


@settings(max_examples=50, deadline=None)
@given(k=st.integers(1, 30), seed=st.integers(0, 2**16))
def test_partials_additive_property(k, seed):
    rng = np.random.default_rng(seed)
    t = table_from_records(COLS, np.c_[rng.integers(0, 11, 60), rng.integers(0, 2, 60)], "y")
    parts = [local_partials(s, "x") for s in shard(t, k, seed)]
    assert tuple(merge(p_[c] for p_ in parts) for c in (0, 1)) == local_partials(t, "x")


def test_welch_identical_groups():
    g = Moments(10, 3.0, 2.0)
    assert welch_t(g, g).t == 0.0


def test_welch_closed_form():
    r = welch_t(Moments(2, 1.0, 1.0), Moments(2, 0.0, 1.0))
    assert r.t == pytest.approx(1.0, rel=1e-15)
    assert r.df == pytest.approx(2.0, rel=1e-15)


def test_welch_heart_bruteforce(heart):
    t, _ = heart
    x, y = t.column("thalach"), t.labels
    t_ref, df_ref = welch_bruteforce(x[y == 0], x[y == 1])
    r = plaintext_t(t, "thalach")
    assert r.t == pytest.approx(t_ref, abs=1e-9)
    assert r.df == pytest.approx(df_ref, rel=1e-9)


@given(ma=st.floats(-100, 100), mb=st.floats(-100, 100), va=st.floats(0.01, 100), vb=st.floats(0.01, 100),
       na=st.integers(2, 500), nb=st.integers(2, 500))
def test_welch_sign_swap(ma, mb, va, vb, na, nb):
    a, b = Moments(na, ma, va), Moments(nb, mb, vb)
    assert welch_t(a, b).t == -welch_t(b, a).t
    assert welch_t(a, b).df > 0


def test_welch_degenerate_and_small():
    with pytest.raises(DegenerateDataError):
        welch_t(Moments(5, 1.0, 0.0), Moments(5, 2.0, 0.0))
    with pytest.raises(DomainError):
        welch_t(Moments(1, 1.0, 1.0), Moments(5, 2.0, 1.0))


def test_infinite_eps_equals_plaintext(heart):
    t, _ = heart
    r = run_scenario1(t, "thalach", PrivacyParams(math.inf, 1e-5), np.random.default_rng(0))
    assert r.t == plaintext_t(t, "thalach").t


@pytest.mark.xfail(strict=True, reason="log-variance sensitivity at the default floor leaves ~1% noise at eps=1e6; see ledger")
def test_scenario1_huge_eps_close_to_plaintext(heart):
    t, _ = heart
    r = run_scenario1(t, "thalach", p(1e6), np.random.default_rng(0), trials=200)
    assert np.max(np.abs(r.t - plaintext_t(t, "thalach").t)) <= 1e-3


def test_scenario1_small_eps_band_wide(heart):
    t, _ = heart
    truth = plaintext_t(t, "thalach").t
    r = run_scenario1(t, "thalach", p(0.01), np.random.default_rng(1), trials=10_000)
    lo, hi = band(r.t)
    assert hi - lo > abs(truth)


def test_scenario1_variances_positive(heart):
    t, _ = heart
    r = run_scenario1(t, "thalach", p(0.01), np.random.default_rng(2), trials=10_000)
    assert np.all(r.var_a > 0) and np.all(r.var_b > 0)


def test_scenario2_k1_matches_scenario1_construction(heart):
    t, _ = heart
    cfg = StatsConfig(v_floor_frac=0.05)  # large floor keeps releases out of the denormal range
    for eps in (0.1, 1.0, 10.0):
        r1 = run_scenario1(t, "thalach", p(eps), np.random.default_rng(3), 500, cfg)
        r2 = run_scenario2(shard(t, 1, 0), "thalach", p(eps), np.random.default_rng(3), 500, cfg)
        np.testing.assert_allclose(r2.t, r1.t, rtol=1e-9)


@pytest.mark.xfail(strict=True, reason="noisy node means inflate the pooled variance, so larger K shrinks t toward 0 "
                                      "instead of widening the band; see ledger")
def test_scenario2_band_widens_with_k(heart):
    t, _ = heart
    widths = []
    for k in (2, 8, 32):
        r = run_scenario2(shard(t, k, 0), "thalach", p(10.0), np.random.default_rng(4), 2000)
        lo, hi = band(r.t)
        widths.append(hi - lo)
    assert widths[0] < widths[1] < widths[2]


def test_scenario2_lower_edge_falls_with_k(heart):
    t, _ = heart
    edges = []
    for k in (2, 8, 32):
        r = run_scenario2(shard(t, k, 0), "thalach", p(100.0), np.random.default_rng(4), 2000)
        edges.append(band(r.t)[0])
    assert edges[0] > edges[1] > edges[2]


@pytest.mark.xfail(strict=True, reason="per-node log-variance noise at eps=1e6 still moves t by O(1); see ledger")
def test_scenario2_huge_eps_close_to_plaintext(heart):
    t, _ = heart
    r = run_scenario2(shard(t, 8, 0), "thalach", p(1e6), np.random.default_rng(5), 200)
    assert np.max(np.abs(r.t - plaintext_t(t, "thalach").t)) <= 1e-2


def test_scenario2_small_nodes_omit_variance():
    rng = np.random.default_rng(6)
    t = table_from_records(COLS, np.c_[rng.uniform(0, 10, 40), np.r_[np.zeros(37), np.ones(3)]], "y")
    r = run_scenario2(shard(t, 4, 0), "x", p(1.0), np.random.default_rng(0), 10)
    assert r.events["variance_omitted"] >= 1


def test_scenario3_bands_match_scenario1(heart):
    t, _ = heart
    for eps in GRID9:
        r1 = run_scenario1(t, "thalach", p(eps), np.random.default_rng(7), 2000)
        r3 = run_scenario3(shard(t, 64, 0), "thalach", p(eps), None, np.random.default_rng(7), 2000)
        b1, b3 = np.array(band(r1.t)), np.array(band(r3.t))
        assert np.all(np.abs(b1 - b3) <= 1e-3)


def test_scenario3_quantization_only(heart):
    t, _ = heart
    exact = plaintext_t(t, "thalach")
    r = run_scenario3(shard(t, 64, 0), "thalach", PrivacyParams(math.inf, 1e-5), None, np.random.default_rng(0))
    assert abs(r.mean_a - exact.mean_a) <= 64 * 2**-16
    assert abs(r.mean_b - exact.mean_b) <= 64 * 2**-16
    assert r.t == pytest.approx(exact.t, abs=1e-6)


def test_secure_partials_equal_exact(heart):
    t, _ = heart
    a, b = aggregate_partials_securely(shard(t, 16, 0), "thalach")
    ea, eb = local_partials(t, "thalach")
    assert a.n == ea.n and b.n == eb.n
    assert abs(a.sum - ea.sum) <= 16 * 2**-16 and abs(b.sumsq - eb.sumsq) <= 16 * 2**-16


def test_scenario3_constant_column_degenerate():
    rng = np.random.default_rng(8)
    t = table_from_records(COLS, np.c_[np.zeros(200), rng.integers(0, 2, 200)], "y")
    with pytest.raises(DegenerateDataError):
        run_scenario3(shard(t, 64, 0), "x", p(1.0), None, np.random.default_rng(0), 10)


def test_scenario3_ks_against_scenario1(heart):
    t, _ = heart
    for eps in (0.1, 3.0, 100.0):
        r1 = run_scenario1(t, "thalach", p(eps), np.random.default_rng(10), 2000)
        r3 = run_scenario3(shard(t, 4, 0), "thalach", p(eps), None, np.random.default_rng(11), 2000)
        assert sps.ks_2samp(r1.t, r3.t).pvalue > 0.01


def test_direct_laplace_variant(heart):
    t, _ = heart
    cfg = StatsConfig(direct_laplace=True, tstat_range=5.0)
    r = run_scenario1(t, "thalach", p(2.0), np.random.default_rng(12), 20000, cfg)
    # plaintext t (7.5) is clipped to 5; noise is Laplace with scale 2T/eps = 5
    assert np.median(r.t) == pytest.approx(5.0, abs=0.15)
    assert np.mean(np.abs(r.t - 5.0)) == pytest.approx(5.0, rel=0.03)
    with pytest.raises(ConfigurationError):
        run_scenario(Scenario.LOCAL, t, shard(t, 4, 0), "thalach", p(1.0), np.random.default_rng(0), 10, cfg)
