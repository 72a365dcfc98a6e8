from datetime import date

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

import oracles
from festgroups import evaluation as ev
from festgroups.attendance import GENRES, BinaryAttendance, Concert
from festgroups.irm import HeldOutMask, IRMConfig, IRMState, observed_matrix


def test_nmi_identical():
    z = [0, 0, 1, 1, 2]
    assert ev.nmi(z, z) == pytest.approx(1.0)
    assert ev.nmi([0, 0, 0], [0, 0, 0]) == 1.0


def test_nmi_relabel_invariant():
    assert ev.nmi([0, 0, 1, 2, 2], [5, 5, 9, 1, 1]) == pytest.approx(1.0)


def test_nmi_independent_is_near_zero():
    values = []
    for seed in range(50):
        rng = np.random.default_rng(seed)
        a = np.repeat([0, 1], 5000)
        values.append(ev.nmi(a, rng.integers(2, size=10_000)))
    assert max(values) < 0.01


def test_nmi_rejects_length_mismatch():
    with pytest.raises(ValueError):
        ev.nmi([0, 1], [0, 1, 1])


@given(st.integers(2, 40).flatmap(lambda n: st.tuples(
    st.lists(st.integers(0, 4), min_size=n, max_size=n),
    st.lists(st.integers(0, 4), min_size=n, max_size=n))))
def test_nmi_symmetric_bounded_matches_brute(pair):
    a, b = pair
    v = ev.nmi(a, b)
    assert v == pytest.approx(ev.nmi(b, a), abs=1e-12)
    assert 0.0 <= v <= 1.0
    assert v == pytest.approx(min(max(oracles.nmi_brute(a, b), 0.0), 1.0), abs=1e-9)


def test_auc_perfect_and_ties():
    assert ev.auc_from_scores([0.9] * 4, [0.1] * 5) == 1.0
    assert ev.auc_from_scores([0.3] * 4, [0.3] * 5) == 0.5


@given(st.lists(st.integers(0, 6), min_size=1, max_size=15),
       st.lists(st.integers(0, 6), min_size=1, max_size=15))
def test_auc_matches_brute_and_monotone_invariant(pos, neg):
    expect = oracles.auc_brute(pos, neg)
    assert ev.auc_from_scores(pos, neg) == pytest.approx(expect, abs=1e-12)
    f = lambda x: np.exp(0.7 * np.asarray(x, float)) - 3   # noqa: E731
    assert ev.auc_from_scores(f(pos), f(neg)) == pytest.approx(expect, abs=1e-12)


def test_held_out_auc_uses_block_scores():
    A = np.array([[1, 1, 0, 0], [1, 1, 0, 0], [0, 0, 1, 1], [0, 0, 1, 1]], bool)
    mask = HeldOutMask([(0, 0), (0, 2)], [True, False])
    state = IRMState(observed_matrix(A, mask), [0, 0, 1, 1], [0, 0, 1, 1],
                     IRMConfig(alpha_row=1.0, alpha_col=1.0), mask)
    pos, neg = ev.held_out_scores(state)
    assert pos.tolist() == pytest.approx([4 / 5]) and neg.tolist() == pytest.approx([1 / 5])
    assert ev.auc(state) == 1.0


def test_robustness_identical_seeds_give_unit_nmi():
    rng = np.random.default_rng(0)
    A = rng.random((20, 12)) < 0.3
    ss = np.random.SeedSequence(5)
    report = ev.robustness_suite(A, IRMConfig(sweeps=15), runs=2, seeds=[ss, ss])
    assert report.pairwise_nmi_rows[0] == 1.0 and report.pairwise_nmi_cols[0] == 1.0
    assert report.run_aucs[0] == report.run_aucs[1]


def test_robustness_reproducible_and_shaped():
    A = np.random.default_rng(1).random((20, 12)) < 0.3
    a = ev.robustness_suite(A, IRMConfig(sweeps=10), runs=3, seed=4)
    b = ev.robustness_suite(A, IRMConfig(sweeps=10), runs=3, seed=4, jobs=3)
    assert a.to_json() == b.to_json()
    assert len(a.traces) == 3 and len(a.traces[0]) == 11
    for m, _ in (a.pairwise_nmi_rows, a.pairwise_nmi_cols, a.auc):
        assert 0 <= m <= 1


def test_chi_squared_all_electronic_cluster():
    chi2, df, p, low = ev.goodness_of_fit([10, 0, 0, 0, 0, 0], [1] * 6)
    assert chi2 == pytest.approx(50.0, abs=1e-9)
    assert df == 5 and p < 0.001 and low
    assert p == pytest.approx(stats.chi2.sf(50, 5))


def test_chi_squared_zero_deviation():
    chi2, df, p, _ = ev.goodness_of_fit([2, 4, 6], [10, 20, 30])
    assert chi2 == 0.0 and p == 1.0


def test_chi_squared_drops_empty_categories():
    chi2, df, _, _ = ev.goodness_of_fit([3, 0, 3], [5, 0, 5])
    assert chi2 == 0.0 and df == 1


@given(st.lists(st.integers(1, 30), min_size=2, max_size=6), st.integers(1, 5))
def test_chi_squared_zero_iff_proportional(overall, scale):
    chi2, *_ = ev.goodness_of_fit([scale * k for k in overall], overall)
    assert chi2 == pytest.approx(0.0, abs=1e-9)
    shifted = [scale * k for k in overall]
    shifted[0] += 1
    chi2, *_ = ev.goodness_of_fit(shifted, overall)
    assert chi2 > 0


def schedule_of(genres):
    return [Concert(k, f"b{k}", "Orange", 1_309_500_000 + 8000 * k, date(2011, 7, 1),
                    g, "Denmark", 100, "big") for k, g in enumerate(genres)]


def test_enrichment_report_counts_and_flags():
    genres = ["electronic"] * 10 + [g for g in GENRES for _ in range(10) if g != "electronic"]
    sched = schedule_of(genres)
    z = np.array([0] * 10 + [1] * 50)
    report = ev.chi_squared_enrichment(z, sched, features=["genre"], top_k=2)
    largest, second = report.tests
    assert largest.size == 50 and second.size == 10
    assert second.significant and second.observed == [10, 0, 0, 0, 0, 0]
    # large cluster: expected 50/6 each, chi2 = 50/6 + 5 * (10 - 50/6)**2 / (50/6) = 10
    assert largest.chi2 == pytest.approx(10.0) and not largest.significant
    assert report.significant_counts()["genre"] == 1
    for t in report.tests:
        assert sum(t.observed) == t.size and len(t.observed) == len(t.overall)


def test_enrichment_skips_singletons():
    sched = schedule_of(["electronic", "rock/pop", "other"])
    report = ev.chi_squared_enrichment([0, 0, 1], sched, features=["genre"])
    assert len(report.tests) == 1 and report.skipped


def test_size_order():
    z = [0] * 3 + [1] * 7 + [2] * 5
    assert ev.size_order(z) == [1, 2, 0]


def test_cluster_report_shapes():
    genres = [GENRES[k % 6] for k in range(12)]
    sched = schedule_of(genres)
    A = BinaryAttendance.from_dense(np.random.default_rng(2).random((9, 12)) < 0.4,
                                    concerts=list(range(12)))
    state = IRMState(observed_matrix(A), [0, 0, 0, 1, 1, 2, 2, 2, 2], [k % 3 for k in range(12)],
                     IRMConfig())
    rep = ev.cluster_report(state, sched, A)
    assert np.array(rep["eta_hat"]).shape == (state.L1, state.L2)
    assert [c["size"] for c in rep["row_clusters"]] == [4, 3, 2]
    assert sum(c["size"] for c in rep["col_clusters"]) == 12
