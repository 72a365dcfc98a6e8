"""Scan-log parsing, device anonymization, vendor lookup and dataset summaries."""
from __future__ import annotations

import csv
import hashlib
import hmac
import io
import json
import logging
import re
from collections import defaultdict
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, TextIO

logger = logging.getLogger(__name__)

MAC_RE = re.compile(r"^[0-9A-Fa-f]{2}(:[0-9A-Fa-f]{2}){5}$")
DEVICE_ID_LENGTH = 16
LOG_FIELDS = ("timestamp", "scanner_id", "mac")
EVENT_FIELDS = ("timestamp", "scanner_id", "device_id", "vendor")


@dataclass(frozen=True)
class RawScanRecord:
    timestamp: int
    scanner_id: int
    mac: str


@dataclass(frozen=True)
class ScanEvent:
    timestamp: int
    scanner_id: int
    device_id: str
    vendor: str | None = None


@dataclass(frozen=True)
class Scanner:
    stage: str
    location: str


@dataclass
class ScannerMap:
    entries: dict[int, Scanner]

    def stage_of(self, scanner_id: int) -> str | None:
        entry = self.entries.get(scanner_id)
        return entry.stage if entry else None

    @property
    def stages(self) -> set[str]:
        return {s.stage for s in self.entries.values()}

    def to_json(self) -> dict:
        return {"scanners": [{"id": k, "stage": v.stage, "location": v.location}
                             for k, v in sorted(self.entries.items())]}


@dataclass(frozen=True)
class SkippedLine:
    line: int
    reason: str


def normalize_mac(mac: str) -> str:
    mac = mac.strip()
    if not MAC_RE.match(mac):
        raise ValueError(f"not a 6-octet MAC address: {mac!r}")
    return mac.upper()


def parse_timestamp(value) -> int:
    """UTC integer seconds from an integer, float or ISO-8601 string."""
    if isinstance(value, bool):
        raise ValueError("boolean is not a timestamp")
    if isinstance(value, (int, float)):
        return int(value // 1)
    text = str(value).strip()
    try:
        return int(float(text) // 1)
    except ValueError:
        pass
    dt = datetime.fromisoformat(text.replace("Z", "+00:00"))
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(dt.timestamp())


def _record(fields: dict) -> RawScanRecord:
    scanner = fields["scanner_id"]
    if isinstance(scanner, str):
        scanner = scanner.strip()
    return RawScanRecord(parse_timestamp(fields["timestamp"]), int(scanner),
                         normalize_mac(fields["mac"]))


def parse_scan_log(stream: TextIO, format: str = "csv"
                   ) -> tuple[list[RawScanRecord], list[SkippedLine]]:
    """Parse a scan log, skipping (and reporting) malformed lines.

    CSV input may carry a ``timestamp,scanner_id,mac`` header; JSONL input has
    one object per line with the same keys.
    """
    if format not in ("csv", "jsonl"):
        raise ValueError(f"unknown log format {format!r}")
    records: list[RawScanRecord] = []
    skipped: list[SkippedLine] = []
    for lineno, line in enumerate(stream, start=1):
        text = line.strip()
        if not text:
            continue
        try:
            if format == "csv":
                parts = [p.strip() for p in next(csv.reader([text]))]
                if lineno == 1 and parts == list(LOG_FIELDS):
                    continue
                if len(parts) != 3:
                    raise ValueError(f"expected 3 fields, got {len(parts)}")
                fields = dict(zip(LOG_FIELDS, parts))
            else:
                fields = json.loads(text)
                if not isinstance(fields, dict):
                    raise ValueError("line is not a JSON object")
            records.append(_record(fields))
        except (ValueError, KeyError, TypeError) as exc:
            logger.warning("skipping malformed line %d: %s", lineno, exc)
            skipped.append(SkippedLine(lineno, str(exc)))
    return records, skipped


def read_scan_log(path: str | Path, format: str | None = None):
    path = Path(path)
    if format is None:
        format = "jsonl" if path.suffix in (".jsonl", ".json") else "csv"
    with open(path, newline="") as fh:
        return parse_scan_log(fh, format)


def write_scan_log(records: Iterable[RawScanRecord], stream: TextIO,
                   format: str = "csv") -> None:
    if format == "csv":
        stream.write(",".join(LOG_FIELDS) + "\n")
        for r in records:
            stream.write(f"{r.timestamp},{r.scanner_id},{r.mac}\n")
    elif format == "jsonl":
        for r in records:
            stream.write(json.dumps({"timestamp": r.timestamp,
                                     "scanner_id": r.scanner_id,
                                     "mac": r.mac}) + "\n")
    else:
        raise ValueError(f"unknown log format {format!r}")


def anonymize(mac: str, salt: bytes) -> str:
    """Keyed one-way device id (HMAC-SHA256, truncated to 16 hex chars)."""
    if not salt:
        raise ValueError("salt must be non-empty")
    digest = hmac.new(salt, normalize_mac(mac).encode("ascii"), hashlib.sha256)
    return digest.hexdigest()[:DEVICE_ID_LENGTH]


def oui_prefix(mac: str) -> str:
    return normalize_mac(mac)[:8]


def extract_vendor(mac: str, oui_table: dict[str, str]) -> str | None:
    return oui_table.get(oui_prefix(mac))


def load_oui_table(path: str | Path) -> dict[str, str]:
    table = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            prefix, _, vendor = line.partition("\t")
            prefix = prefix.strip().upper().replace("-", ":")
            if not re.match(r"^[0-9A-F]{2}(:[0-9A-F]{2}){2}$", prefix) or not vendor:
                logger.warning("skipping malformed OUI line %d", lineno)
                continue
            table[prefix] = vendor.strip()
    return table


def write_oui_table(table: dict[str, str], path: str | Path) -> None:
    with open(path, "w") as fh:
        for prefix, vendor in sorted(table.items()):
            fh.write(f"{prefix}\t{vendor}\n")


def load_scanner_map(path: str | Path) -> ScannerMap:
    with open(path) as fh:
        doc = json.load(fh)
    entries: dict[int, Scanner] = {}
    for item in doc["scanners"]:
        sid = int(item["id"])
        if sid in entries:
            raise ValueError(f"duplicate scanner id {sid}")
        entries[sid] = Scanner(str(item["stage"]), str(item.get("location", "")))
    return ScannerMap(entries)


def to_events(records: Iterable[RawScanRecord], salt: bytes,
              oui_table: dict[str, str] | None = None) -> list[ScanEvent]:
    """Anonymize raw records; the vendor is read before the MAC is discarded."""
    cache: dict[str, tuple[str, str | None]] = {}
    events = []
    for r in records:
        if r.mac not in cache:
            vendor = extract_vendor(r.mac, oui_table) if oui_table else None
            cache[r.mac] = (anonymize(r.mac, salt), vendor)
        device_id, vendor = cache[r.mac]
        events.append(ScanEvent(r.timestamp, r.scanner_id, device_id, vendor))
    return events


def write_events(events: Iterable[ScanEvent], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EVENT_FIELDS)
        for e in events:
            w.writerow([e.timestamp, e.scanner_id, e.device_id, e.vendor or ""])


def read_events(path: str | Path) -> list[ScanEvent]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        return [ScanEvent(int(row["timestamp"]), int(row["scanner_id"]),
                          row["device_id"], row["vendor"] or None)
                for row in reader]


# ---------------------------------------------------------------------------
# summaries

@dataclass
class ScannerStats:
    observations: int
    unique_devices: int
    exclusive_devices: int


@dataclass
class DatasetSummary:
    total_observations: int
    unique_devices: int
    mean_obs_per_device: float
    per_scanner: dict[int, ScannerStats]
    vendor_histogram: dict[str, tuple[int, int]]

    def top_vendor_share(self, k: int) -> float:
        """Fraction of unique devices covered by the k most common vendors."""
        if not self.unique_devices:
            return 0.0
        counts = sorted((d for d, _ in self.vendor_histogram.values()), reverse=True)
        return sum(counts[:k]) / self.unique_devices

    def to_json(self) -> dict:
        return {
            "total_observations": self.total_observations,
            "unique_devices": self.unique_devices,
            "mean_obs_per_device": self.mean_obs_per_device,
            "per_scanner": {str(k): vars(v) for k, v in sorted(self.per_scanner.items())},
            "vendor_histogram": {k: {"devices": d, "observations": o}
                                 for k, (d, o) in sorted(self.vendor_histogram.items())},
        }


def _pick_vendor(a: str | None, b: str | None) -> str | None:
    """Order-independent choice when one device carries several vendor labels."""
    if a is None or b is None:
        return a if b is None else b
    return min(a, b)


@dataclass
class SummaryAccumulator:
    """Mergeable partial summary; ``merge`` is associative and commutative."""

    device_obs: dict[str, int] = field(default_factory=lambda: defaultdict(int))
    device_scanners: dict[str, set[int]] = field(default_factory=lambda: defaultdict(set))
    scanner_obs: dict[int, int] = field(default_factory=lambda: defaultdict(int))
    device_vendor: dict[str, str | None] = field(default_factory=dict)

    def add(self, events: Iterable[ScanEvent]) -> "SummaryAccumulator":
        for e in events:
            self.device_obs[e.device_id] += 1
            self.device_scanners[e.device_id].add(e.scanner_id)
            self.scanner_obs[e.scanner_id] += 1
            self.device_vendor[e.device_id] = _pick_vendor(
                self.device_vendor.get(e.device_id), e.vendor)
        return self

    def merge(self, other: "SummaryAccumulator") -> "SummaryAccumulator":
        out = SummaryAccumulator()
        for part in (self, other):
            for d, n in part.device_obs.items():
                out.device_obs[d] += n
            for d, s in part.device_scanners.items():
                out.device_scanners[d] |= s
            for s, n in part.scanner_obs.items():
                out.scanner_obs[s] += n
            for d, v in part.device_vendor.items():
                out.device_vendor[d] = _pick_vendor(out.device_vendor.get(d), v)
        return out

    def finalize(self) -> DatasetSummary:
        total = sum(self.device_obs.values())
        unique = len(self.device_obs)
        seen_by: dict[int, set[str]] = defaultdict(set)
        for d, scanners in self.device_scanners.items():
            for s in scanners:
                seen_by[s].add(d)
        per_scanner = {}
        for s in sorted(self.scanner_obs):
            devices = seen_by[s]
            exclusive = sum(1 for d in devices if len(self.device_scanners[d]) == 1)
            per_scanner[s] = ScannerStats(self.scanner_obs[s], len(devices), exclusive)
        vendors: dict[str, list[int]] = {}
        for d, v in self.device_vendor.items():
            if v is None:
                continue
            entry = vendors.setdefault(v, [0, 0])
            entry[0] += 1
            entry[1] += self.device_obs[d]
        return DatasetSummary(
            total_observations=total,
            unique_devices=unique,
            mean_obs_per_device=total / unique if unique else 0.0,
            per_scanner=per_scanner,
            vendor_histogram={k: (v[0], v[1]) for k, v in vendors.items()},
        )


def summarize(events: Iterable[ScanEvent]) -> DatasetSummary:
    return SummaryAccumulator().add(events).finalize()


def records_to_text(records: Iterable[RawScanRecord], format: str = "csv") -> str:
    buf = io.StringIO()
    write_scan_log(records, buf, format)
    return buf.getvalue()
