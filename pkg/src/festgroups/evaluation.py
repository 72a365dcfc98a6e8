"""Partition agreement, held-out prediction, robustness runs and enrichment tests."""
from __future__ import annotations

import itertools
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

from .attendance import Concert
from .irm import IRMConfig, IRMState, Partition, hold_out, predict_eta, run_inference

logger = logging.getLogger(__name__)

FEATURES = ("date", "genre", "origin", "stage")


def _labels(z) -> np.ndarray:
    return np.asarray(z.assignments if isinstance(z, Partition) else z)


def nmi(z_a, z_b) -> float:
    """Normalized mutual information 2 I(a; b) / (H(a) + H(b)).

    Two single-cluster partitions count as identical (1.0).
    """
    a = _labels(z_a)
    b = _labels(z_b)
    if a.shape != b.shape:
        raise ValueError(f"partitions have different lengths ({a.size} vs {b.size})")
    if a.size == 0:
        raise ValueError("empty partitions")
    _, a = np.unique(a, return_inverse=True)
    _, b = np.unique(b, return_inverse=True)
    joint = np.zeros((a.max() + 1, b.max() + 1))
    np.add.at(joint, (a, b), 1.0)
    joint /= a.size
    pa = joint.sum(axis=1)
    pb = joint.sum(axis=0)
    ha = -np.sum(pa * np.log(pa))
    hb = -np.sum(pb * np.log(pb))
    if ha + hb == 0:
        return 1.0
    nz = joint > 0
    mi = np.sum(joint[nz] * np.log(joint[nz] / np.outer(pa, pb)[nz]))
    return float(np.clip(2 * mi / (ha + hb), 0.0, 1.0))


def auc_from_scores(pos_scores, neg_scores) -> float:
    """P(pos > neg) + 0.5 P(tie), exactly, via mid-ranks."""
    pos = np.asarray(pos_scores, dtype=float)
    neg = np.asarray(neg_scores, dtype=float)
    if pos.size == 0 or neg.size == 0:
        raise ValueError("need at least one positive and one negative score")
    ranks = stats.rankdata(np.concatenate([pos, neg]))
    u = ranks[:pos.size].sum() - pos.size * (pos.size + 1) / 2
    return float(u / (pos.size * neg.size))


def held_out_scores(state: IRMState) -> tuple[np.ndarray, np.ndarray]:
    mask = state.mask
    if len(mask) == 0:
        raise ValueError("state has no held-out cells")
    eta = predict_eta(state).eta_hat
    scores = eta[state.z1[mask.cells[:, 0]], state.z2[mask.cells[:, 1]]]
    return scores[mask.truth], scores[~mask.truth]


def auc(state: IRMState) -> float:
    """AUC of the block link probabilities on the state's held-out cells."""
    return auc_from_scores(*held_out_scores(state))


# ---------------------------------------------------------------------------
# robustness

@dataclass
class RobustnessReport:
    pairwise_nmi_rows: tuple[float, float]
    pairwise_nmi_cols: tuple[float, float]
    auc: tuple[float, float]
    traces: list[list[float]]
    runs: int
    run_aucs: list[float] = field(default_factory=list)
    run_clusters: list[tuple[int, int]] = field(default_factory=list)
    run_log_posteriors: list[float] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "runs": self.runs,
            "pairwise_nmi_rows": {"mean": self.pairwise_nmi_rows[0], "sd": self.pairwise_nmi_rows[1]},
            "pairwise_nmi_cols": {"mean": self.pairwise_nmi_cols[0], "sd": self.pairwise_nmi_cols[1]},
            "auc": {"mean": self.auc[0], "sd": self.auc[1]},
            "run_aucs": self.run_aucs,
            "run_clusters": [list(c) for c in self.run_clusters],
            "run_log_posteriors": self.run_log_posteriors,
            "traces": self.traces,
        }


def _mean_sd(values) -> tuple[float, float]:
    v = np.asarray(values, dtype=float)
    return float(v.mean()), float(v.std(ddof=1)) if v.size > 1 else 0.0


def robustness_suite(A, config: IRMConfig, runs: int = 110, fraction: float = 0.025,
                     seed: int | None = None, jobs: int = 1,
                     seeds: Sequence | None = None) -> RobustnessReport:
    """Repeat hold-out + inference ``runs`` times and summarise stability.

    Every run draws its own mask and chain from a seed spawned off ``seed``
    (default ``config.seed``); pass ``seeds`` to set the per-run seeds directly.
    """
    if runs < 2:
        raise ValueError("runs must be >= 2")
    if seeds is None:
        seeds = np.random.SeedSequence(config.seed if seed is None else seed).spawn(runs)
    elif len(seeds) != runs:
        raise ValueError("len(seeds) must equal runs")

    def one(ss):
        rng = np.random.default_rng(ss)
        _, mask = hold_out(A, fraction, rng)
        result = run_inference(A, config, mask, rng)
        return result.best, result.trace

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(one, seeds))
    else:
        results = [one(ss) for ss in seeds]

    states = [s for s, _ in results]
    aucs = [auc(s) for s in states]
    pairs = list(itertools.combinations(range(runs), 2))
    rows = [nmi(states[a].z1, states[b].z1) for a, b in pairs]
    cols = [nmi(states[a].z2, states[b].z2) for a, b in pairs]
    return RobustnessReport(
        pairwise_nmi_rows=_mean_sd(rows),
        pairwise_nmi_cols=_mean_sd(cols),
        auc=_mean_sd(aucs),
        traces=[t.tolist() for _, t in results],
        runs=runs,
        run_aucs=aucs,
        run_clusters=[(s.L1, s.L2) for s in states],
        run_log_posteriors=[s.log_posterior for s in states],
    )


# ---------------------------------------------------------------------------
# enrichment

@dataclass
class EnrichmentTest:
    cluster: int
    size: int
    feature: str
    categories: list[str]
    observed: list[int]
    overall: list[int]
    chi2: float
    df: int
    p_value: float
    significant: bool
    low_expected: bool

    def to_json(self) -> dict:
        return dict(vars(self))


@dataclass
class EnrichmentReport:
    tests: list[EnrichmentTest]
    alpha_sig: float
    skipped: list[str] = field(default_factory=list)

    def significant_counts(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for t in self.tests:
            out[t.feature] = out.get(t.feature, 0) + int(t.significant)
        return out

    def to_json(self) -> dict:
        return {"alpha_sig": self.alpha_sig,
                "significant_counts": self.significant_counts(),
                "skipped": self.skipped,
                "tests": [t.to_json() for t in self.tests]}


def goodness_of_fit(observed, overall) -> tuple[float, int, float, bool]:
    """Chi-squared of cluster counts against size-scaled overall proportions.

    Returns (statistic, df, p-value, any expected count below 5).
    Categories with zero expected count are dropped.
    """
    observed = np.asarray(observed, dtype=float)
    overall = np.asarray(overall, dtype=float)
    keep = overall > 0
    observed, overall = observed[keep], overall[keep]
    expected = observed.sum() * overall / overall.sum()
    chi2 = float(np.sum((observed - expected) ** 2 / expected))
    df = int(keep.sum()) - 1
    p = float(stats.chi2.sf(chi2, df)) if df > 0 else 1.0
    return chi2, df, p, bool((expected < 5).any())


def size_order(z) -> list[int]:
    """Cluster labels sorted by size (descending), ties by label."""
    sizes = np.bincount(_labels(z))
    return sorted(range(len(sizes)), key=lambda c: (-sizes[c], c))


def chi_squared_enrichment(cols, schedule: Sequence[Concert],
                           features: Sequence[str] = FEATURES, alpha_sig: float = 0.05,
                           top_k: int = 10) -> EnrichmentReport:
    """Test each of the ``top_k`` largest concert clusters against the overall
    distribution of every metadata feature.  ``schedule[j]`` must be the
    concert of column ``j``.
    """
    z = _labels(cols)
    if len(schedule) != z.size:
        raise ValueError("schedule and partition differ in length")
    report = EnrichmentReport([], alpha_sig)
    values = {f: [c.feature(f) for c in schedule] for f in features}
    categories = {f: sorted(set(v)) for f, v in values.items()}
    for rank, c in enumerate(size_order(z)[:top_k]):
        members = np.flatnonzero(z == c)
        if members.size < 2:
            report.skipped.append(f"cluster {rank} has {members.size} concert(s)")
            continue
        for f in features:
            cats = categories[f]
            overall = [values[f].count(k) for k in cats]
            member_vals = [values[f][j] for j in members]
            observed = [member_vals.count(k) for k in cats]
            chi2, df, p, low = goodness_of_fit(observed, overall)
            if low:
                logger.info("cluster %d / %s: expected counts below 5, chi-squared is approximate",
                            rank, f)
            report.tests.append(EnrichmentTest(rank, int(members.size), f, cats, observed,
                                               overall, chi2, df, p, p < alpha_sig, low))
    return report


def cluster_report(state: IRMState, schedule: Sequence[Concert], A,
                   features: Sequence[str] = FEATURES, alpha_sig: float = 0.05,
                   top_k: int = 10) -> dict:
    """Clusters of both modes sorted by size with eta, members and histograms.

    ``schedule`` is aligned to ``A.concerts`` by concert id.
    """
    by_id = {c.concert_id: c for c in schedule}
    concerts = [by_id[cid] for cid in A.concerts]
    row_order = size_order(state.z1)
    col_order = size_order(state.z2)
    eta = predict_eta(state).eta_hat[np.ix_(row_order, col_order)]
    enrichment = chi_squared_enrichment(state.z2, concerts, features, alpha_sig, top_k)
    flags: dict[int, dict[str, bool]] = {}
    for t in enrichment.tests:
        flags.setdefault(t.cluster, {})[t.feature] = t.significant

    col_clusters = []
    for rank, c in enumerate(col_order):
        members = np.flatnonzero(state.z2 == c)
        hist = {}
        for f in features:
            h: dict[str, int] = {}
            for j in members:
                key = concerts[j].feature(f)
                h[key] = h.get(key, 0) + 1
            hist[f] = dict(sorted(h.items()))
        col_clusters.append({"rank": rank, "size": int(members.size),
                             "concerts": [int(A.concerts[j]) for j in members],
                             "bands": [concerts[j].band for j in members],
                             "histograms": hist, "significant": flags.get(rank, {})})
    row_clusters = [{"rank": rank, "size": int((state.z1 == c).sum()),
                     "participants": [A.participants[i] for i in np.flatnonzero(state.z1 == c)]}
                    for rank, c in enumerate(row_order)]
    return {"num_row_clusters": state.L1, "num_col_clusters": state.L2,
            "log_posterior": state.log_posterior, "eta_hat": eta.tolist(),
            "row_clusters": row_clusters, "col_clusters": col_clusters,
            "enrichment": enrichment.to_json()}
