"""Planted-structure generators for desk-scale testing of every pipeline stage."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta, timezone
from typing import Sequence

import numpy as np

from .attendance import (GENRES, ORIGINS, WINDOW_AFTER, WINDOW_BEFORE, BinaryAttendance,
                         Concert, validate_schedule)
from .ingest import RawScanRecord, ScanEvent, Scanner, ScannerMap

FESTIVAL_START = datetime(2011, 6, 26, tzinfo=timezone.utc)
SLOT_SECONDS = 7200
FIRST_SLOT_HOUR = 12
STAY_PROBABILITY = 0.7


# ---------------------------------------------------------------------------
# bipartite attendance

@dataclass
class PlantedBipartiteSpec:
    I: int = 200
    J: int = 40
    L1: int = 4
    L2: int = 5
    eta_in: float = 0.8
    eta_out: float = 0.05
    row_proportions: Sequence[float] | None = None
    col_proportions: Sequence[float] | None = None
    seed: int = 0

    def __post_init__(self):
        if self.eta_in == self.eta_out:
            raise ValueError("eta_in and eta_out must differ")
        for p in (self.eta_in, self.eta_out):
            if not 0 <= p <= 1:
                raise ValueError("rates must lie in [0, 1]")
        planted_pairing(self.L1, self.L2)
        for props, L in ((self.row_proportions, self.L1), (self.col_proportions, self.L2)):
            if props is not None and (len(props) != L or abs(sum(props) - 1) > 1e-9):
                raise ValueError("proportions must have one entry per cluster and sum to 1")


def planted_pairing(L1: int, L2: int) -> np.ndarray:
    """Boolean L1 x L2 map of the "in" blocks.

    The first min(L1, L2) clusters pair along the diagonal.  Each surplus
    cluster of the larger mode pairs with its own subset of clusters of the
    smaller mode (pairs first, in lexicographic order), so every cluster has
    a distinct block profile; for 4 x 5 the fifth column cluster pairs with
    row clusters 0 and 1.
    """
    k = min(L1, L2)
    subsets = [c for size in range(2, k + 1) for c in itertools.combinations(range(k), size)]
    if max(L1, L2) - k > len(subsets):
        raise ValueError(f"cannot give {max(L1, L2)} clusters distinct profiles over {k}")
    on = np.zeros((L1, L2), dtype=bool)
    on[np.arange(k), np.arange(k)] = True
    for extra, subset in zip(range(k, max(L1, L2)), subsets):
        if L1 >= L2:
            on[extra, list(subset)] = True
        else:
            on[list(subset), extra] = True
    return on


def _sizes(n, L, props):
    props = np.full(L, 1.0 / L) if props is None else np.asarray(props, dtype=float)
    sizes = np.floor(props * n).astype(int)
    sizes[: n - sizes.sum()] += 1
    return sizes


def gen_bipartite(spec: PlantedBipartiteSpec
                  ) -> tuple[BinaryAttendance, np.ndarray, np.ndarray]:
    rng = np.random.default_rng(spec.seed)
    rows = np.repeat(np.arange(spec.L1), _sizes(spec.I, spec.L1, spec.row_proportions))
    cols = np.repeat(np.arange(spec.L2), _sizes(spec.J, spec.L2, spec.col_proportions))
    eta = np.where(planted_pairing(spec.L1, spec.L2), spec.eta_in, spec.eta_out)
    A = rng.random((spec.I, spec.J)) < eta[np.ix_(rows, cols)]
    return BinaryAttendance.from_dense(A, [f"p{i:05d}" for i in range(spec.I)]), rows, cols


# ---------------------------------------------------------------------------
# schedules

DEFAULT_GENRE_MIX = (0.25, 0.30, 0.15, 0.10, 0.10, 0.10)
DEFAULT_ORIGIN_MIX = (0.20, 0.15, 0.25, 0.30, 0.10)


def default_stages(n: int) -> list[str]:
    return [f"stage{k}" for k in range(n)]


def default_stage_sizes(stages: Sequence[str]) -> dict[str, str]:
    """First third of the stages big, next third medium, rest small."""
    n = len(stages)
    out = {}
    for k, s in enumerate(stages):
        out[s] = "big" if k < max(1, n // 3) else "medium" if k < max(2, 2 * n // 3) else "small"
    return out


def gen_schedule(num_concerts: int, stages: Sequence[str] | int = 6, days: int = 8,
                 seed: int = 0, genre_mix: Sequence[float] = DEFAULT_GENRE_MIX,
                 origin_mix: Sequence[float] = DEFAULT_ORIGIN_MIX,
                 stage_sizes: dict[str, str] | None = None,
                 start: datetime = FESTIVAL_START) -> list[Concert]:
    """Concerts spread round-robin over (day, stage) slots two hours apart.

    Windows on a stage never overlap; at most 12 concerts per stage and day.
    Playcounts are log-normal.
    """
    rng = np.random.default_rng(seed)
    if isinstance(stages, int):
        stages = default_stages(stages)
    stages = list(stages)
    stage_sizes = stage_sizes or default_stage_sizes(stages)
    cells = [(d, s) for d in range(days) for s in range(len(stages))]
    if num_concerts > 12 * len(cells):
        raise ValueError("too many concerts for the available slots")
    used = {c: 0 for c in cells}
    schedule = []
    for cid in range(num_concerts):
        d, s = cells[cid % len(cells)]
        slot = used[d, s]
        used[d, s] += 1
        t0 = start + timedelta(days=d, hours=FIRST_SLOT_HOUR)
        start_time = int(t0.timestamp()) + slot * SLOT_SECONDS
        schedule.append(Concert(
            concert_id=cid, band=f"band{cid:03d}", stage=stages[s], start_time=start_time,
            date=(start + timedelta(days=d)).date(),
            genre=GENRES[rng.choice(len(GENRES), p=genre_mix)],
            origin=ORIGINS[rng.choice(len(ORIGINS), p=origin_mix)],
            playcount=int(rng.lognormal(mean=11.0, sigma=1.5)),
            stage_size=stage_sizes[stages[s]]))
    validate_schedule(schedule)
    return schedule


def scanner_map_for(stages: Sequence[str], scanners_per_stage: int = 1) -> ScannerMap:
    entries = {}
    sid = 1
    for s in stages:
        for k in range(scanners_per_stage):
            entries[sid] = Scanner(s, f"{s}-{k}")
            sid += 1
    return ScannerMap(entries)


def attendance_events(A: BinaryAttendance, schedule: Sequence[Concert], scanner_map: ScannerMap,
                      scans_mean: float = 4.0, seed: int = 0,
                      participant_ids: Sequence[str] | None = None) -> list[ScanEvent]:
    """Scan events for a planted attendance matrix.

    Each attendance yields Poisson(``scans_mean``) scans at a scanner of the
    concert's stage, uniformly inside the concert's window.
    """
    rng = np.random.default_rng(seed)
    ids = list(participant_ids) if participant_ids is not None else A.participants
    by_stage: dict[str, list[int]] = {}
    for sid, sc in sorted(scanner_map.entries.items()):
        by_stage.setdefault(sc.stage, []).append(sid)
    by_id = {c.concert_id: c for c in schedule}
    coo = A.links.tocoo()
    order = np.lexsort((coo.col, coo.row))
    events = []
    for i, j in zip(coo.row[order], coo.col[order]):
        c = by_id[A.concerts[j]]
        for _ in range(rng.poisson(scans_mean)):
            t = int(rng.integers(c.start_time - WINDOW_BEFORE, c.start_time + WINDOW_AFTER + 1))
            sid = by_stage[c.stage][rng.integers(len(by_stage[c.stage]))]
            events.append(ScanEvent(t, int(sid), ids[i]))
    events.sort(key=lambda e: (e.timestamp, e.scanner_id, e.device_id))
    return events


# ---------------------------------------------------------------------------
# trajectories

@dataclass
class PlantedTrajectorySpec:
    num_devices: int = 500
    num_groups: int = 60
    group_sizes: Sequence[int] = (2, 3, 4)
    num_scanners: int = 10
    num_bins: int = 288
    p_follow: float = 0.8
    background_rate: float = 0.3
    bin_width: int = 600
    t0: int = int(FESTIVAL_START.timestamp())
    stay_probability: float = STAY_PROBABILITY
    seed: int = 0

    def __post_init__(self):
        if min(self.group_sizes) < 1:
            raise ValueError("group sizes must be >= 1")
        if not 0 <= self.p_follow <= 1 or not 0 <= self.stay_probability <= 1:
            raise ValueError("probabilities must lie in [0, 1]")
        if self.background_rate < 0:
            raise ValueError("background rate must be >= 0")
        if self.num_groups * max(self.group_sizes) > self.num_devices:
            raise ValueError("groups do not fit into the device population")


def device_ids(n: int, prefix: str = "dev") -> list[str]:
    return [f"{prefix}{k:05d}" for k in range(n)]


def gen_trajectories(spec: PlantedTrajectorySpec,
                     ids: Sequence[str] | None = None
                     ) -> tuple[list[ScanEvent], dict[str, int]]:
    """Events of devices moving in planted groups; devices outside groups walk alone.

    Every group (singletons included) follows a random walk over scanners that
    stays put with ``stay_probability``.  In each time bin a member is at the
    group's scanner with probability ``p_follow``; otherwise, with probability
    ``background_rate``, it shows up at a uniformly random scanner.
    """
    rng = np.random.default_rng(spec.seed)
    ids = list(ids) if ids is not None else device_ids(spec.num_devices)
    perm = rng.permutation(spec.num_devices)
    group_of = np.empty(spec.num_devices, dtype=np.int64)
    pos = 0
    for g in range(spec.num_groups):
        k = int(rng.choice(spec.group_sizes))
        group_of[perm[pos:pos + k]] = g
        pos += k
    group_of[perm[pos:]] = spec.num_groups + np.arange(spec.num_devices - pos)
    n_groups = int(group_of.max()) + 1

    walks = np.empty((n_groups, spec.num_bins), dtype=np.int64)
    walks[:, 0] = rng.integers(spec.num_scanners, size=n_groups)
    for t in range(1, spec.num_bins):
        stay = rng.random(n_groups) < spec.stay_probability
        walks[:, t] = np.where(stay, walks[:, t - 1], rng.integers(spec.num_scanners, size=n_groups))

    follow = rng.random((spec.num_devices, spec.num_bins)) < spec.p_follow
    stray = ~follow & (rng.random((spec.num_devices, spec.num_bins)) < spec.background_rate)
    stray_at = rng.integers(spec.num_scanners, size=(spec.num_devices, spec.num_bins))
    location = np.where(follow, walks[group_of], np.where(stray, stray_at, -1))
    reps = 1 + rng.poisson(1.0, size=location.shape)

    events = []
    dev, tb = np.nonzero(location >= 0)
    for d, t in zip(dev, tb):
        base = spec.t0 + int(t) * spec.bin_width
        for off in rng.integers(spec.bin_width, size=reps[d, t]):
            events.append(ScanEvent(base + int(off), int(location[d, t]) + 1, ids[d]))
    events.sort(key=lambda e: (e.timestamp, e.scanner_id, e.device_id))
    return events, {ids[d]: int(group_of[d]) for d in range(spec.num_devices)}


def intra_group_pairs(groups: dict[str, int]) -> set[tuple[str, str]]:
    members: dict[int, list[str]] = {}
    for d, g in groups.items():
        members.setdefault(g, []).append(d)
    return {(a, b) for m in members.values() for a in m for b in m if a != b}


# ---------------------------------------------------------------------------
# raw festival logs

DEFAULT_VENDORS = {  # vendor -> device share
    "Nokia": 0.40, "Samsung": 0.20, "SonyEricsson": 0.14, "Apple": 0.09,
    "HTC": 0.06, "LG": 0.04, "Motorola": 0.03, "Other": 0.04,
}


def oui_table_for(vendors: dict[str, float], prefixes_per_vendor: int = 2,
                  seed: int = 0) -> dict[str, str]:
    """OUI table for every vendor except the catch-all ``Other``."""
    rng = np.random.default_rng(seed)
    table = {}
    for v in vendors:
        if v == "Other":
            continue
        while sum(1 for x in table.values() if x == v) < prefixes_per_vendor:
            prefix = ":".join(f"{b:02X}" for b in rng.integers(256, size=3))
            table.setdefault(prefix, v)
    return table


def random_macs(n: int, oui_table: dict[str, str], vendors: dict[str, float],
                seed: int = 0) -> list[str]:
    """Distinct MACs whose vendor prefixes follow the ``vendors`` shares."""
    rng = np.random.default_rng(seed)
    names = list(vendors)
    by_vendor: dict[str, list[str]] = {}
    for prefix, v in sorted(oui_table.items()):
        by_vendor.setdefault(v, []).append(prefix)
    macs: set[str] = set()
    out = []
    counts = np.floor(np.array([vendors[v] for v in names]) * n).astype(int)
    counts[0] += n - counts.sum()
    for v, k in zip(names, counts):
        made = 0
        while made < k:
            if v in by_vendor:
                prefix = by_vendor[v][rng.integers(len(by_vendor[v]))]
            else:
                prefix = ":".join(f"{b:02X}" for b in rng.integers(256, size=3))
                if prefix in oui_table:
                    continue
            mac = prefix + ":" + ":".join(f"{b:02X}" for b in rng.integers(256, size=3))
            if mac not in macs:
                macs.add(mac)
                out.append(mac)
                made += 1
    order = rng.permutation(len(out))
    return [out[k] for k in order]


@dataclass
class FestivalData:
    records: list[RawScanRecord]
    schedule: list[Concert]
    scanner_map: ScannerMap
    oui_table: dict[str, str]
    planted: BinaryAttendance
    row_labels: np.ndarray
    col_labels: np.ndarray
    groups: dict[str, int] = field(default_factory=dict)


def gen_festival(bipartite: PlantedBipartiteSpec, stages: int = 6, days: int = 8,
                 scans_mean: float = 4.0, vendors: dict[str, float] = DEFAULT_VENDORS,
                 trajectories: PlantedTrajectorySpec | None = None,
                 seed: int = 0) -> FestivalData:
    """Raw scan logs plus schedule, scanner map and OUI table for a planted festival.

    Concert attendance follows ``gen_bipartite``; if ``trajectories`` is given,
    extra devices moving in planted groups are added on the same scanners.
    """
    ss = np.random.SeedSequence(seed)
    s_sched, s_scan, s_mac, s_traj = (int(s.generate_state(1)[0]) for s in ss.spawn(4))
    stage_names = default_stages(stages)
    schedule = gen_schedule(bipartite.J, stage_names, days, seed=s_sched)
    smap = scanner_map_for(stage_names)
    A, rows, cols = gen_bipartite(bipartite)
    oui = oui_table_for(vendors, seed=s_mac)
    n_traj = trajectories.num_devices if trajectories else 0
    macs = random_macs(bipartite.I + n_traj, oui, vendors, seed=s_mac)
    A.participants = macs[:bipartite.I]
    events = attendance_events(A, schedule, smap, scans_mean, seed=s_scan)
    groups: dict[str, int] = {}
    if trajectories is not None:
        spec = PlantedTrajectorySpec(**{**vars(trajectories), "num_scanners": len(smap.entries),
                                        "seed": s_traj})
        extra, groups = gen_trajectories(spec, ids=macs[bipartite.I:])
        events = sorted(events + extra, key=lambda e: (e.timestamp, e.scanner_id, e.device_id))
    records = [RawScanRecord(e.timestamp, e.scanner_id, e.device_id) for e in events]
    return FestivalData(records, schedule, smap, oui, A, rows, cols, groups)


def festival_date(ts: int) -> date:
    return datetime.fromtimestamp(ts, tz=timezone.utc).date()
