"""Micro-groups from spatio-temporal co-occurrence, with a rewiring null model.

A spatio-temporal bin is one (scanner, time-bin) pair.  Devices become nodes
of a directed graph whose edge A -> B carries the share of A's bins that B
also occupies.
"""
from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np
from numba import njit
from scipy import sparse

from .ingest import ScanEvent

BIN_WIDTH = 600
SWAPS_PER_INCIDENCE = 10


@dataclass
class OccurrenceMatrix:
    devices: list[str]
    bins: list[tuple[int, int]]          # (scanner_id, time_bin_index)
    incidence: sparse.csr_matrix         # devices x bins, boolean
    bin_width: int
    t0: int

    @property
    def bin_scanners(self) -> np.ndarray:
        return np.array([s for s, _ in self.bins], dtype=np.int64)

    @property
    def bin_times(self) -> np.ndarray:
        return np.array([t for _, t in self.bins], dtype=np.int64)

    def subset(self, rows) -> "OccurrenceMatrix":
        rows = np.asarray(rows, dtype=np.int64)
        return OccurrenceMatrix([self.devices[i] for i in rows], list(self.bins),
                                self.incidence[rows].tocsr(), self.bin_width, self.t0)


@dataclass
class MicroGroupGraph:
    nodes: list[str]
    src: np.ndarray
    dst: np.ndarray
    weight: np.ndarray
    co_count: np.ndarray
    locations: np.ndarray

    @property
    def num_edges(self) -> int:
        return int(self.src.size)

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    def edges(self):
        for k in range(self.num_edges):
            yield (self.nodes[self.src[k]], self.nodes[self.dst[k]], float(self.weight[k]),
                   int(self.co_count[k]), int(self.locations[k]))

    def edge_set(self) -> set[tuple[str, str]]:
        return {(self.nodes[a], self.nodes[b]) for a, b in zip(self.src, self.dst)}


@dataclass
class NullModelStats:
    trials: int
    surviving_nodes: tuple[float, float]
    surviving_edges: tuple[float, float]
    node_counts: list[int] = field(default_factory=list)
    edge_counts: list[int] = field(default_factory=list)

    def to_json(self) -> dict:
        return {"trials": self.trials,
                "surviving_nodes": {"mean": self.surviving_nodes[0], "sd": self.surviving_nodes[1]},
                "surviving_edges": {"mean": self.surviving_edges[0], "sd": self.surviving_edges[1]},
                "node_counts": self.node_counts, "edge_counts": self.edge_counts}


@dataclass(frozen=True)
class Thresholds:
    min_weight: float = 0.5
    min_locations: int = 3
    min_co: int = 3


def default_t0(events: Iterable[ScanEvent]) -> int:
    return min(e.timestamp for e in events) // 3600 * 3600


def bin_events(events: Iterable[ScanEvent], bin_width: int = BIN_WIDTH,
               t0: int | None = None) -> OccurrenceMatrix:
    """Collapse events to one incidence per (device, scanner, time bin)."""
    if bin_width <= 0:
        raise ValueError("bin_width must be positive")
    events = list(events)
    if t0 is None:
        t0 = default_t0(events) if events else 0
    cells = {(e.device_id, e.scanner_id, (e.timestamp - t0) // bin_width) for e in events}
    devices = sorted({d for d, _, _ in cells})
    bins = sorted({(s, t) for _, s, t in cells})
    row_of = {d: i for i, d in enumerate(devices)}
    col_of = {b: j for j, b in enumerate(bins)}
    rows = [row_of[d] for d, _, _ in cells]
    cols = [col_of[(s, t)] for _, s, t in cells]
    inc = sparse.csr_matrix((np.ones(len(cells), dtype=bool), (rows, cols)),
                            shape=(len(devices), len(bins)))
    inc.sort_indices()
    return OccurrenceMatrix(devices, bins, inc, bin_width, int(t0))


def _distinct_per_row(inc: sparse.csr_matrix, keys: np.ndarray) -> np.ndarray:
    """Number of distinct ``keys[col]`` values among each row's columns."""
    coo = inc.tocoo()
    pairs = np.unique(np.column_stack([coo.row, keys[coo.col]]), axis=0)
    return np.bincount(pairs[:, 0], minlength=inc.shape[0]) if len(pairs) else \
        np.zeros(inc.shape[0], dtype=np.int64)


def filter_devices(occ: OccurrenceMatrix, min_temporal: int = 10,
                   min_spatial: int = 3) -> OccurrenceMatrix:
    """Keep devices seen in >= min_temporal time bins and >= min_spatial scanners."""
    if min_temporal < 1 or min_spatial < 1:
        raise ValueError("thresholds must be >= 1")
    temporal = _distinct_per_row(occ.incidence, occ.bin_times)
    spatial = _distinct_per_row(occ.incidence, occ.bin_scanners)
    keep = np.flatnonzero((temporal >= min_temporal) & (spatial >= min_spatial))
    return occ.subset(keep)


def merge_duplicates(occ: OccurrenceMatrix) -> tuple[OccurrenceMatrix, list[list[str]]]:
    """Merge devices with identical incidence rows into one node.

    The merged node keeps the first device id; groups of size >= 2 are returned.
    """
    inc = occ.incidence.tocsr()
    inc.sort_indices()
    seen: dict[bytes, int] = {}
    groups: dict[int, list[int]] = {}
    for i in range(inc.shape[0]):
        key = inc.indices[inc.indptr[i]:inc.indptr[i + 1]].tobytes()
        first = seen.setdefault(key, i)
        groups.setdefault(first, []).append(i)
    keep = sorted(groups)
    merged = [[occ.devices[i] for i in groups[k]] for k in keep if len(groups[k]) > 1]
    return occ.subset(keep), merged


def co_occurrence_graph(occ: OccurrenceMatrix) -> MicroGroupGraph:
    """Directed co-occurrence graph; pairs are enumerated through shared bins only."""
    inc = occ.incidence.astype(np.int32).tocsr()
    occurrences = np.asarray(inc.sum(axis=1)).ravel()
    if (occurrences == 0).any():
        raise ValueError("devices without occurrences; filter them first")
    co = (inc @ inc.T).tocoo()
    off = co.row != co.col
    src, dst, cnt = co.row[off], co.col[off], co.data[off]

    scanners = occ.bin_scanners
    locations = sparse.csr_matrix(inc.shape[:1] * 2, dtype=np.int32)
    for s in np.unique(scanners):
        sub = inc[:, scanners == s]
        locations = locations + ((sub @ sub.T) > 0).astype(np.int32)
    locations = locations.tocsr()
    loc = np.asarray(locations[src, dst]).ravel()
    order = np.lexsort((dst, src))
    src, dst, cnt, loc = src[order], dst[order], cnt[order], loc[order]
    return MicroGroupGraph(list(occ.devices), src.astype(np.int64), dst.astype(np.int64),
                           cnt / occurrences[src], cnt.astype(np.int64), loc.astype(np.int64))


def threshold_edges(graph: MicroGroupGraph, min_weight: float = 0.5, min_locations: int = 3,
                    min_co: int = 3) -> MicroGroupGraph:
    """Keep edges meeting all three thresholds (inclusive); drop isolated nodes."""
    keep = ((graph.weight >= min_weight) & (graph.locations >= min_locations)
            & (graph.co_count >= min_co))
    src, dst = graph.src[keep], graph.dst[keep]
    used = np.unique(np.concatenate([src, dst]))
    remap = np.full(len(graph.nodes), -1, dtype=np.int64)
    remap[used] = np.arange(used.size)
    return MicroGroupGraph([graph.nodes[i] for i in used], remap[src], remap[dst],
                           graph.weight[keep], graph.co_count[keep], graph.locations[keep])


def micro_pipeline(occ: OccurrenceMatrix, thresholds: Thresholds = Thresholds()
                   ) -> MicroGroupGraph:
    return threshold_edges(co_occurrence_graph(occ), thresholds.min_weight,
                           thresholds.min_locations, thresholds.min_co)


def star_nodes(graph: MicroGroupGraph, min_in: int = 5) -> list[str]:
    """Nodes with many inbound and no outbound edges (e.g. staff at a booth)."""
    n = graph.num_nodes
    indeg = np.bincount(graph.dst, minlength=n)
    outdeg = np.bincount(graph.src, minlength=n)
    return [graph.nodes[i] for i in np.flatnonzero((indeg >= min_in) & (outdeg == 0))]


def connected_groups(graph: MicroGroupGraph) -> list[list[str]]:
    """Weakly connected components of the thresholded graph."""
    from scipy.sparse.csgraph import connected_components
    n = graph.num_nodes
    adj = sparse.csr_matrix((np.ones(graph.num_edges), (graph.src, graph.dst)), shape=(n, n))
    k, labels = connected_components(adj, directed=True, connection="weak")
    groups = [[graph.nodes[i] for i in np.flatnonzero(labels == c)] for c in range(k)]
    return sorted(groups, key=lambda g: (-len(g), g))


# ---------------------------------------------------------------------------
# rewiring null model

@njit(cache=True, nogil=True)
def _double_edge_swaps(rows, cols, bits, n_swaps, max_tries, seed):
    """Degree-preserving swaps on a bipartite edge list.

    (a, x), (b, y) -> (a, y), (b, x) whenever neither new edge exists.
    ``bits`` is a packed device x bin membership table kept in sync.
    Returns the number of successful swaps.
    """
    np.random.seed(seed)
    m = rows.shape[0]
    done = 0
    tries = 0
    while done < n_swaps and tries < max_tries:
        tries += 1
        e = np.random.randint(m)
        f = np.random.randint(m)
        a, x = rows[e], cols[e]
        b, y = rows[f], cols[f]
        if a == b or x == y:
            continue
        if (bits[a, y >> 6] >> np.uint64(y & 63)) & np.uint64(1):
            continue
        if (bits[b, x >> 6] >> np.uint64(x & 63)) & np.uint64(1):
            continue
        bits[a, x >> 6] &= ~(np.uint64(1) << np.uint64(x & 63))
        bits[b, y >> 6] &= ~(np.uint64(1) << np.uint64(y & 63))
        bits[a, y >> 6] |= np.uint64(1) << np.uint64(y & 63)
        bits[b, x >> 6] |= np.uint64(1) << np.uint64(x & 63)
        cols[e] = y
        cols[f] = x
        done += 1
    return done


def rewire(occ: OccurrenceMatrix, rng: np.random.Generator,
           swaps_per_incidence: float = SWAPS_PER_INCIDENCE) -> OccurrenceMatrix:
    """Randomize the incidence keeping every device and bin degree fixed."""
    coo = occ.incidence.tocoo()
    rows = coo.row.astype(np.int64)
    cols = coo.col.astype(np.int64)
    n_dev, n_bins = occ.incidence.shape
    bits = np.zeros((n_dev, (n_bins + 63) // 64), dtype=np.uint64)
    np.bitwise_or.at(bits, (rows, cols >> 6),
                     np.left_shift(np.uint64(1), (cols & 63).astype(np.uint64)))
    n_swaps = int(swaps_per_incidence * rows.size)
    _double_edge_swaps(rows, cols, bits, n_swaps, 100 * max(n_swaps, 1),
                       int(rng.integers(2**62)))
    inc = sparse.csr_matrix((np.ones(rows.size, dtype=bool), (rows, cols)),
                            shape=occ.incidence.shape)
    inc.sort_indices()
    return OccurrenceMatrix(list(occ.devices), list(occ.bins), inc, occ.bin_width, occ.t0)


def degrees(occ: OccurrenceMatrix) -> tuple[np.ndarray, np.ndarray]:
    inc = occ.incidence
    return (np.asarray(inc.sum(axis=1)).ravel(), np.asarray(inc.sum(axis=0)).ravel())


def rewiring_baseline(occ: OccurrenceMatrix, trials: int = 35,
                      thresholds: Thresholds = Thresholds(),
                      rng: np.random.Generator | None = None, jobs: int = 1,
                      swaps_per_incidence: float = SWAPS_PER_INCIDENCE) -> NullModelStats:
    """Surviving node/edge counts of the pipeline on degree-preserving rewirings."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = rng if rng is not None else np.random.default_rng()
    seeds = [int(s) for s in rng.integers(2**62, size=trials)]
    dev_deg, bin_deg = degrees(occ)

    def one(ss):
        shuffled = rewire(occ, np.random.default_rng(ss), swaps_per_incidence)
        d, b = degrees(shuffled)
        if not (np.array_equal(d, dev_deg) and np.array_equal(b, bin_deg)):
            raise AssertionError("rewiring changed a degree")
        g = micro_pipeline(shuffled, thresholds)
        return g.num_nodes, g.num_edges

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            counts = list(pool.map(one, seeds))
    else:
        counts = [one(ss) for ss in seeds]
    nodes = [c[0] for c in counts]
    edges = [c[1] for c in counts]

    def mean_sd(v):
        v = np.asarray(v, dtype=float)
        return float(v.mean()), float(v.std(ddof=1)) if v.size > 1 else 0.0

    return NullModelStats(trials, mean_sd(nodes), mean_sd(edges), nodes, edges)


# ---------------------------------------------------------------------------
# output

def write_edge_list(graph: MicroGroupGraph, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["from", "to", "weight", "co_count", "locations"])
        for a, b, wt, co, loc in graph.edges():
            w.writerow([a, b, repr(wt), co, loc])


def write_dot(graph: MicroGroupGraph, path: str | Path, name: str = "microgroups") -> None:
    with open(path, "w") as fh:
        fh.write(f"digraph {name} {{\n")
        for n in graph.nodes:
            fh.write(f'  "{n}";\n')
        for a, b, wt, co, loc in graph.edges():
            fh.write(f'  "{a}" -> "{b}" [weight={wt!r}, co_count={co}, locations={loc}];\n')
        fh.write("}\n")


def write_null_stats(stats: NullModelStats, path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump(stats.to_json(), fh, indent=1)
