from datetime import date

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import sparse

from festgroups import attendance as att
from festgroups.attendance import BinaryAttendance, Concert, CountMatrix
from festgroups.ingest import ScanEvent, Scanner, ScannerMap
from festgroups.synth import (PlantedBipartiteSpec, attendance_events, gen_bipartite,
                              gen_schedule, scanner_map_for)

T0 = 1_309_500_000


def concert(cid, stage="Orange", start=T0, playcount=1000, size="big", genre="rock/pop"):
    return Concert(cid, f"band{cid}", stage, start, date(2011, 7, 1), genre, "Denmark",
                   playcount, size)


SMAP = ScannerMap({1: Scanner("Orange", "a"), 2: Scanner("Arena", "b")})


def counts_for(times, schedule=None):
    schedule = schedule or [concert(0)]
    evs = [ScanEvent(t, 1, "dev") for t in times]
    return att.build_count_matrix(evs, schedule, SMAP)


def test_window_lower_bound_inclusive():
    assert counts_for([T0 - 600]).counts.toarray().tolist() == [[1]]
    assert counts_for([T0 - 601]).counts.shape == (0, 1)


def test_window_upper_bound_inclusive():
    assert counts_for([T0 + 6300]).counts.toarray().tolist() == [[1]]
    assert counts_for([T0 + 6301]).counts.shape == (0, 1)


def test_count_hand_example():
    c = counts_for([T0, T0 + 10, T0 + 6000, T0 + 9000])
    assert c.counts.toarray().tolist() == [[3]]


def test_events_at_other_stage_or_unknown_scanner_ignored():
    evs = [ScanEvent(T0, 2, "x"), ScanEvent(T0, 99, "y"), ScanEvent(T0, 1, "z")]
    c = att.build_count_matrix(evs, [concert(0)], SMAP)
    assert c.participants == ["z"]


def test_schedule_overlap_rejected():
    with pytest.raises(ValueError):
        att.validate_schedule([concert(0), concert(1, start=T0 + 6900)])
    att.validate_schedule([concert(0), concert(1, start=T0 + 6901)])


def test_concert_validation():
    with pytest.raises(ValueError):
        concert(0, genre="polka")
    with pytest.raises(ValueError):
        concert(0, playcount=-1)


def test_schedule_round_trip(tmp_path):
    sched = gen_schedule(20, 3, 2, seed=1)
    att.write_schedule(sched, tmp_path / "s.json")
    assert att.load_schedule(tmp_path / "s.json") == sched


def cm(values):
    values = np.asarray(values)
    return CountMatrix([f"p{i}" for i in range(values.shape[0])],
                       list(range(values.shape[1])), sparse.csr_matrix(values))


def test_binarize_threshold_two():
    A = att.binarize(cm([[0, 1, 2, 3]]), 2)
    assert A.dense().tolist() == [[False, False, True, True]]


def test_binarize_threshold_one_is_support():
    values = np.array([[0, 1, 5], [2, 0, 0]])
    assert np.array_equal(att.binarize(cm(values), 1).dense(), values > 0)


@given(st.lists(st.lists(st.integers(0, 6), min_size=4, max_size=4), min_size=1, max_size=6),
       st.integers(1, 6))
def test_binarize_monotone(values, threshold):
    lo = att.binarize(cm(values), threshold).dense()
    hi = att.binarize(cm(values), threshold + 1).dense()
    assert not (hi & ~lo).any()


def test_binarize_recall_matches_poisson_tail():
    """Attendances observed with Poisson(4) scans survive threshold 2 with P(X >= 2)."""
    from scipy import stats
    spec = PlantedBipartiteSpec(I=300, J=40, eta_in=0.8, eta_out=0.05, seed=4)
    A, _, _ = gen_bipartite(spec)
    sched = gen_schedule(40, 6, 8, seed=4)
    smap = scanner_map_for(sorted({c.stage for c in sched}))
    evs = attendance_events(A, sched, smap, 4.0, seed=5)
    B = att.binarize(att.build_count_matrix(evs, sched, smap), 2)
    truth = {(p, c) for p, c in zip(*A.links.nonzero())}
    row = {p: i for i, p in enumerate(A.participants)}
    found = {(row[B.participants[i]], j) for i, j in zip(*B.links.nonzero())}
    assert found <= truth
    recall = len(found) / len(truth)
    expect = stats.poisson.sf(1, 4.0)
    sd = np.sqrt(expect * (1 - expect) / len(truth))
    assert abs(recall - expect) < 4 * sd


def stage_schedule(n_s=10, n_other=10):
    sched = [concert(k, "Orange", T0 + k * 8000) for k in range(n_s)]
    sched += [concert(n_s + k, "Arena", T0 + k * 8000) for k in range(n_other)]
    return sched


def row_with(sched, at_s, elsewhere):
    row = np.zeros(len(sched), dtype=bool)
    row[:at_s] = True
    row[10:10 + elsewhere] = True
    return row


def test_outlier_rule_a_two_concerts():
    sched = stage_schedule()
    A = BinaryAttendance.from_dense([row_with(sched, 1, 1), row_with(sched, 2, 1)],
                                    concerts=[c.concert_id for c in sched])
    out = att.remove_outliers(A, sched)
    assert out.participants == ["p1"]
    assert out.removed == {"stationary": 0, "few_concerts": 1}


def test_outlier_rule_b_boundaries():
    sched = stage_schedule()
    rows = [row_with(sched, 8, 3),   # 8 >= 7 and 8 >= 6: removed
            row_with(sched, 8, 5),   # 8 < 10: kept
            row_with(sched, 7, 3),   # exactly 70% and 7 >= 6: removed
            row_with(sched, 6, 3),   # 6 < 7: kept
            row_with(sched, 8, 4)]   # exactly 2x: removed (inclusive)
    A = BinaryAttendance.from_dense(rows, concerts=[c.concert_id for c in sched])
    out = att.remove_outliers(A, sched)
    assert out.participants == ["p1", "p3"]
    assert out.removed == {"stationary": 3, "few_concerts": 0}


@given(st.integers(0, 10**6))
def test_outlier_removal_reaches_fixpoint(seed):
    rng = np.random.default_rng(seed)
    sched = stage_schedule()
    A = BinaryAttendance.from_dense(rng.random((30, 20)) < rng.uniform(0.05, 0.5),
                                    concerts=[c.concert_id for c in sched])
    once = att.remove_outliers(A, sched)
    twice = att.remove_outliers(once, sched)
    assert twice.participants == once.participants
    assert twice.removed == {"stationary": 0, "few_concerts": 0}


def test_popularity_correlation_exact_line():
    sched = [concert(k, start=T0 + 8000 * k, playcount=int(np.exp(k + 1)) + 1)
             for k in range(5)]
    logs = np.log([c.playcount for c in sched])
    # attendance counts proportional to log playcount, scaled to integers
    counts = np.round(10 * (logs - logs.min()) / np.ptp(logs)).astype(int) + 1
    dense = np.zeros((counts.max(), 5), dtype=bool)
    for j, k in enumerate(counts):
        dense[:k, j] = True
    A = BinaryAttendance.from_dense(dense, concerts=list(range(5)))
    rho = att.popularity_correlation(sched, A)["big"]
    expect = np.corrcoef(logs, counts)[0, 1]
    assert rho.rho == pytest.approx(expect) and rho.n == 5
    line = [concert(k, start=T0 + 8000 * k, playcount=10 ** (k + 1)) for k in range(5)]
    dense = np.zeros((5, 5), dtype=bool)
    for j in range(5):
        dense[:j + 1, j] = True
    A = BinaryAttendance.from_dense(dense, concerts=list(range(5)))
    assert att.popularity_correlation(line, A)["big"].rho == pytest.approx(1.0)


def test_popularity_correlation_small_group_rejected():
    sched = [concert(0), concert(1, start=T0 + 8000)]
    A = BinaryAttendance.from_dense(np.ones((3, 2), bool), concerts=[0, 1])
    with pytest.raises(ValueError):
        att.popularity_correlation(sched, A)


def test_attendance_round_trip(tmp_path):
    A = BinaryAttendance.from_dense([[1, 0, 1], [0, 1, 1]], participants=["x", "y"],
                                    concerts=[4, 5, 6], threshold_used=2)
    att.write_attendance(A, tmp_path / "att", extra={"seed": 3})
    header = (tmp_path / "att.csv").read_text().splitlines()[0]
    assert header == "participant_index,concert_index,value"
    B = att.read_attendance(tmp_path / "att")
    assert B.participants == ["x", "y"] and B.concerts == [4, 5, 6]
    assert np.array_equal(A.dense(), B.dense()) and B.threshold_used == 2
