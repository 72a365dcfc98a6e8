"""From scan events and a concert schedule to the binary attendance matrix."""
from __future__ import annotations

import bisect
import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from datetime import date
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import sparse, stats

from .ingest import ScanEvent, ScannerMap

logger = logging.getLogger(__name__)

GENRES = ("electronic", "rock/pop", "folk/world", "hip-hop/rap", "metal/punk/hardcore", "other")
ORIGINS = ("Denmark", "Other Nordic", "USA", "Western Europe", "Other")
STAGE_SIZES = ("small", "medium", "big")

WINDOW_BEFORE = 600    # 10 min before the start
WINDOW_AFTER = 6300    # 1 h 45 min after the start
DEFAULT_THRESHOLD = 2
MIN_CONCERTS = 3
STAGE_SHARE = 0.70
STAGE_RATIO = 2.0


@dataclass(frozen=True)
class Concert:
    concert_id: int
    band: str
    stage: str
    start_time: int
    date: date
    genre: str
    origin: str
    playcount: int
    stage_size: str

    def __post_init__(self):
        if self.playcount < 0:
            raise ValueError(f"concert {self.concert_id}: negative playcount")
        if self.genre not in GENRES:
            raise ValueError(f"concert {self.concert_id}: unknown genre {self.genre!r}")
        if self.origin not in ORIGINS:
            raise ValueError(f"concert {self.concert_id}: unknown origin {self.origin!r}")
        if self.stage_size not in STAGE_SIZES:
            raise ValueError(f"concert {self.concert_id}: unknown stage size {self.stage_size!r}")

    def feature(self, name: str) -> str:
        if name == "date":
            return self.date.isoformat()
        return str(getattr(self, name))

    def to_json(self) -> dict:
        d = asdict(self)
        d["date"] = self.date.isoformat()
        return d


def validate_schedule(schedule: Sequence[Concert], before: int = WINDOW_BEFORE,
                      after: int = WINDOW_AFTER, stages: set[str] | None = None) -> None:
    ids = [c.concert_id for c in schedule]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate concert ids in schedule")
    by_stage: dict[str, list[Concert]] = {}
    for c in schedule:
        if stages is not None and c.stage not in stages:
            raise ValueError(f"concert {c.concert_id} is on unknown stage {c.stage!r}")
        by_stage.setdefault(c.stage, []).append(c)
    for stage, concerts in by_stage.items():
        concerts = sorted(concerts, key=lambda c: c.start_time)
        for a, b in zip(concerts, concerts[1:]):
            if a.start_time + after >= b.start_time - before:
                raise ValueError(f"overlapping attendance windows on stage {stage!r}: "
                                 f"concerts {a.concert_id} and {b.concert_id}")


def load_schedule(path: str | Path, stage_sizes: dict[str, str] | None = None,
                  before: int = WINDOW_BEFORE, after: int = WINDOW_AFTER) -> list[Concert]:
    """Read a schedule JSON array; ``stage_sizes`` fills in missing stage sizes."""
    with open(path) as fh:
        items = json.load(fh)
    schedule = []
    for item in items:
        item = dict(item)
        if "stage_size" not in item:
            if not stage_sizes or item["stage"] not in stage_sizes:
                raise ValueError(f"no stage size for stage {item['stage']!r}")
            item["stage_size"] = stage_sizes[item["stage"]]
        schedule.append(Concert(
            concert_id=int(item["concert_id"]), band=str(item["band"]),
            stage=str(item["stage"]), start_time=int(item["start_time"]),
            date=date.fromisoformat(item["date"]), genre=item["genre"],
            origin=item["origin"], playcount=int(item["playcount"]),
            stage_size=item["stage_size"]))
    validate_schedule(schedule, before, after)
    return schedule


def write_schedule(schedule: Iterable[Concert], path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump([c.to_json() for c in schedule], fh, indent=1)


# ---------------------------------------------------------------------------
# matrices

@dataclass
class CountMatrix:
    participants: list[str]
    concerts: list[int]
    counts: sparse.csr_matrix


@dataclass
class BinaryAttendance:
    participants: list[str]
    concerts: list[int]
    links: sparse.csr_matrix
    threshold_used: int
    removed: dict[str, int] = field(default_factory=dict)

    @property
    def shape(self) -> tuple[int, int]:
        return self.links.shape

    def dense(self) -> np.ndarray:
        return self.links.toarray().astype(bool)

    @classmethod
    def from_dense(cls, A, participants=None, concerts=None, threshold_used=1):
        A = np.asarray(A, dtype=bool)
        I, J = A.shape
        return cls(participants=list(participants) if participants is not None
                   else [f"p{i}" for i in range(I)],
                   concerts=list(concerts) if concerts is not None else list(range(J)),
                   links=sparse.csr_matrix(A), threshold_used=threshold_used)


def build_count_matrix(events: Iterable[ScanEvent], schedule: Sequence[Concert],
                       scanner_map: ScannerMap, before: int = WINDOW_BEFORE,
                       after: int = WINDOW_AFTER) -> CountMatrix:
    """Count scans per (device, concert) inside each concert's window.

    An event counts toward concert c iff it was taken at c's stage and
    ``c.start - before <= t <= c.start + after``.  Only devices with at least
    one counted event get a row.
    """
    validate_schedule(schedule, before, after)
    windows: dict[str, tuple[list[int], list[int]]] = {}
    col_of = {c.concert_id: j for j, c in enumerate(schedule)}
    for c in sorted(schedule, key=lambda c: c.start_time):
        starts, cols = windows.setdefault(c.stage, ([], []))
        starts.append(c.start_time - before)
        cols.append(col_of[c.concert_id])
    starts_of = {c.concert_id: c.start_time for c in schedule}

    cells: dict[tuple[str, int], int] = {}
    unknown = 0
    for e in events:
        stage = scanner_map.stage_of(e.scanner_id)
        if stage is None:
            unknown += 1
            continue
        if stage not in windows:
            continue
        starts, cols = windows[stage]
        k = bisect.bisect_right(starts, e.timestamp) - 1
        if k < 0:
            continue
        j = cols[k]
        if e.timestamp > starts_of[schedule[j].concert_id] + after:
            continue
        cells[e.device_id, j] = cells.get((e.device_id, j), 0) + 1
    if unknown:
        logger.warning("skipped %d events from scanners missing in the scanner map", unknown)

    participants = sorted({d for d, _ in cells})
    row_of = {d: i for i, d in enumerate(participants)}
    rows = np.fromiter((row_of[d] for d, _ in cells), dtype=np.int64, count=len(cells))
    cols = np.fromiter((j for _, j in cells), dtype=np.int64, count=len(cells))
    vals = np.fromiter(cells.values(), dtype=np.int64, count=len(cells))
    counts = sparse.csr_matrix((vals, (rows, cols)), shape=(len(participants), len(schedule)))
    return CountMatrix(participants, [c.concert_id for c in schedule], counts)


def binarize(counts: CountMatrix, threshold: int = DEFAULT_THRESHOLD) -> BinaryAttendance:
    if threshold < 1:
        raise ValueError("threshold must be >= 1")
    links = (counts.counts >= threshold).astype(bool).tocsr()
    links.eliminate_zeros()
    return BinaryAttendance(list(counts.participants), list(counts.concerts), links, threshold)


def _stage_columns(A: BinaryAttendance, schedule: Sequence[Concert]) -> dict[str, np.ndarray]:
    by_id = {c.concert_id: c for c in schedule}
    out: dict[str, list[int]] = {}
    for j, cid in enumerate(A.concerts):
        out.setdefault(by_id[cid].stage, []).append(j)
    return {s: np.array(cols) for s, cols in out.items()}


def stationary_rows(A: BinaryAttendance, schedule: Sequence[Concert]) -> np.ndarray:
    """Rows that sit at one stage: >= 70% of its concerts and >= 2x all others."""
    M = A.links.tocsc()
    total = np.asarray(A.links.sum(axis=1)).ravel()
    flagged = np.zeros(A.shape[0], dtype=bool)
    for stage, cols in _stage_columns(A, schedule).items():
        at_stage = np.asarray(M[:, cols].sum(axis=1)).ravel()
        elsewhere = total - at_stage
        # share test in integer percent so boundary counts are exact
        flagged |= ((100 * at_stage >= round(100 * STAGE_SHARE) * len(cols))
                    & (at_stage >= STAGE_RATIO * elsewhere))
    return flagged


def remove_outliers(A: BinaryAttendance, schedule: Sequence[Concert],
                    min_concerts: int = MIN_CONCERTS) -> BinaryAttendance:
    """Drop stationary devices, then participants with too few concerts.

    The returned matrix records how many rows each rule removed in ``removed``.
    Rules only look at a row's own entries, so one pass reaches the fixpoint.
    """
    stationary = stationary_rows(A, schedule)
    total = np.asarray(A.links.sum(axis=1)).ravel()
    too_few = (total < min_concerts) & ~stationary
    keep = ~(stationary | too_few)
    idx = np.flatnonzero(keep)
    return BinaryAttendance(
        participants=[A.participants[i] for i in idx],
        concerts=list(A.concerts),
        links=A.links[idx].tocsr(),
        threshold_used=A.threshold_used,
        removed={"stationary": int(stationary.sum()), "few_concerts": int(too_few.sum())},
    )


@dataclass
class Correlation:
    rho: float
    p_value: float
    n: int

    @property
    def defined(self) -> bool:
        return not math.isnan(self.rho)


def popularity_correlation(schedule: Sequence[Concert], A: BinaryAttendance,
                           group_by: str = "stage_size") -> dict[str, Correlation]:
    """Pearson correlation of log playcount and concert attendance per group.

    Concerts with zero playcount are left out (log undefined).  A group with
    zero variance in either variable gets ``rho = p = nan``.
    """
    by_id = {c.concert_id: c for c in schedule}
    col_sums = np.asarray(A.links.sum(axis=0)).ravel()
    groups: dict[str, tuple[list[float], list[float]]] = {}
    for j, cid in enumerate(A.concerts):
        c = by_id[cid]
        if c.playcount <= 0:
            continue
        x, y = groups.setdefault(getattr(c, group_by), ([], []))
        x.append(math.log(c.playcount))
        y.append(float(col_sums[j]))
    out = {}
    for key in sorted(groups):
        x, y = groups[key]
        if len(x) < 3:
            raise ValueError(f"group {key!r} has fewer than 3 concerts with playcount > 0")
        if np.ptp(x) == 0 or np.ptp(y) == 0:
            out[key] = Correlation(float("nan"), float("nan"), len(x))
            continue
        res = stats.pearsonr(x, y)
        out[key] = Correlation(float(res.statistic), float(res.pvalue), len(x))
    return out


# ---------------------------------------------------------------------------
# serialization

def write_attendance(A: BinaryAttendance, prefix: str | Path, extra: dict | None = None) -> None:
    """Write ``<prefix>.csv`` sparse triplets and ``<prefix>.json`` labels."""
    prefix = Path(prefix)
    coo = A.links.tocoo()
    order = np.lexsort((coo.col, coo.row))
    with open(prefix.with_suffix(".csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["participant_index", "concert_index", "value"])
        for k in order:
            w.writerow([int(coo.row[k]), int(coo.col[k]), 1])
    meta = {"participants": A.participants, "concerts": A.concerts,
            "threshold": A.threshold_used, "removed": A.removed}
    if extra:
        meta.update(extra)
    with open(prefix.with_suffix(".json"), "w") as fh:
        json.dump(meta, fh, indent=1)


def read_attendance(prefix: str | Path) -> BinaryAttendance:
    prefix = Path(prefix)
    with open(prefix.with_suffix(".json")) as fh:
        meta = json.load(fh)
    rows, cols = [], []
    with open(prefix.with_suffix(".csv"), newline="") as fh:
        for row in csv.DictReader(fh):
            rows.append(int(row["participant_index"]))
            cols.append(int(row["concert_index"]))
    shape = (len(meta["participants"]), len(meta["concerts"]))
    links = sparse.csr_matrix((np.ones(len(rows), dtype=bool), (rows, cols)), shape=shape)
    return BinaryAttendance(meta["participants"], meta["concerts"], links,
                            meta["threshold"], meta.get("removed", {}))
