import io
import json
import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from festgroups import ingest
from festgroups.ingest import RawScanRecord, ScanEvent
from festgroups.synth import DEFAULT_VENDORS, oui_table_for, random_macs

macs = st.lists(st.integers(0, 255), min_size=6, max_size=6).map(
    lambda b: ":".join(f"{x:02X}" for x in b))
records = st.builds(RawScanRecord, st.integers(0, 2**31), st.integers(1, 40), macs)
events = st.builds(ScanEvent, st.integers(0, 10**6), st.integers(1, 6),
                   st.sampled_from(["a", "b", "c", "d", "e"]),
                   st.sampled_from([None, "Nokia", "Apple"]))


def parse(text, fmt="csv"):
    return ingest.parse_scan_log(io.StringIO(text), fmt)


def test_parse_single_line():
    recs, skipped = parse("1309471200,9,00:1A:2B:3C:4D:5E\n")
    assert recs == [RawScanRecord(1309471200, 9, "00:1A:2B:3C:4D:5E")]
    assert skipped == []


def test_parse_skips_garbage_with_report():
    text = "timestamp,scanner_id,mac\n1,2,00:00:00:00:00:01\ngarbage\n3,4,00:00:00:00:00:02\n"
    recs, skipped = parse(text)
    assert len(recs) == 2
    assert len(skipped) == 1 and skipped[0].line == 3


def test_parse_empty_stream():
    assert parse("") == ([], [])


def test_parse_jsonl_and_iso_timestamps():
    text = ('{"timestamp": "2011-07-01T00:00:00Z", "scanner_id": 3, "mac": "aa:bb:cc:dd:ee:ff"}\n'
            '[1, 2]\n'
            '{"timestamp": 5.7, "scanner_id": "4", "mac": "00:11:22:33:44:55"}\n')
    recs, skipped = parse(text, "jsonl")
    assert recs[0] == RawScanRecord(1309478400, 3, "AA:BB:CC:DD:EE:FF")
    assert recs[1].timestamp == 5 and recs[1].scanner_id == 4
    assert [s.line for s in skipped] == [2]


def test_parse_rejects_unknown_format():
    with pytest.raises(ValueError):
        parse("", "xml")


@pytest.mark.parametrize("fmt", ["csv", "jsonl"])
@given(st.lists(records, max_size=30))
def test_parse_serialize_round_trip(fmt, recs):
    text = ingest.records_to_text(recs, fmt)
    back, skipped = parse(text, fmt)
    assert back == recs and skipped == []


def test_anonymize_deterministic_and_salted():
    rng = random.Random(0)
    for _ in range(100):
        mac = ":".join(f"{rng.randrange(256):02X}" for _ in range(6))
        a = ingest.anonymize(mac, b"salt-1")
        assert a == ingest.anonymize(mac.lower(), b"salt-1")
        assert len(a) == 16
        assert a != ingest.anonymize(mac, b"salt-2")


def test_anonymize_no_collisions_on_one_bit_flips():
    rng = random.Random(1)
    seen = set()
    for _ in range(10_000):
        value = rng.getrandbits(48)
        for v in (value, value ^ (1 << rng.randrange(48))):
            mac = ":".join(f"{(v >> (8 * k)) & 255:02X}" for k in range(6))
            seen.add((mac, ingest.anonymize(mac, b"k")))
    ids = {}
    for mac, dev in seen:
        assert ids.setdefault(dev, mac) == mac


def test_anonymize_requires_salt():
    with pytest.raises(ValueError):
        ingest.anonymize("00:00:00:00:00:00", b"")


def test_extract_vendor(tmp_path):
    path = tmp_path / "oui.tsv"
    path.write_text("00:1A:2B\tNokia\nbad line\n")
    table = ingest.load_oui_table(path)
    assert ingest.extract_vendor("00:1a:2b:00:00:01", table) == "Nokia"
    assert ingest.extract_vendor("FF:FF:FF:00:00:01", table) is None


def test_top7_vendor_share_on_synthetic_devices():
    oui = oui_table_for(DEFAULT_VENDORS)
    devices = random_macs(2000, oui, DEFAULT_VENDORS, seed=3)
    evs = ingest.to_events([RawScanRecord(0, 1, m) for m in devices], b"s", oui)
    summary = ingest.summarize(evs)
    assert summary.top_vendor_share(7) == pytest.approx(0.96, abs=0.005)


def test_summary_hand_count():
    evs = [ScanEvent(0, 1, "A"), ScanEvent(1, 2, "A"), ScanEvent(2, 1, "B")]
    s = ingest.summarize(evs)
    assert s.total_observations == 3 and s.unique_devices == 2
    assert vars(s.per_scanner[1]) == {"observations": 2, "unique_devices": 2,
                                      "exclusive_devices": 1}
    assert vars(s.per_scanner[2]) == {"observations": 1, "unique_devices": 1,
                                      "exclusive_devices": 0}
    assert s.mean_obs_per_device == 1.5


def test_summary_empty():
    s = ingest.summarize([])
    assert (s.total_observations, s.unique_devices, s.mean_obs_per_device) == (0, 0, 0.0)
    assert s.per_scanner == {} and s.vendor_histogram == {}


@given(st.lists(events, max_size=40), st.randoms(use_true_random=False))
def test_summary_shuffle_invariant(evs, rnd):
    shuffled = list(evs)
    rnd.shuffle(shuffled)
    a, b = ingest.summarize(evs), ingest.summarize(shuffled)
    assert a.to_json() == b.to_json()


@given(st.lists(events, max_size=40))
def test_exclusive_bound(evs):
    s = ingest.summarize(evs)
    exclusive = sum(v.exclusive_devices for v in s.per_scanner.values())
    assert exclusive <= s.unique_devices
    multi = any(len({e.scanner_id for e in evs if e.device_id == d}) > 1
                for d in {e.device_id for e in evs})
    assert (exclusive == s.unique_devices) == (not multi)


@given(st.lists(events, max_size=15), st.lists(events, max_size=15),
       st.lists(events, max_size=15))
def test_summary_merge_associative(a, b, c):
    acc = [ingest.SummaryAccumulator().add(x) for x in (a, b, c)]
    left = acc[0].merge(acc[1]).merge(acc[2]).finalize().to_json()
    right = acc[0].merge(acc[1].merge(acc[2])).finalize().to_json()
    whole = ingest.summarize(a + b + c).to_json()
    assert left == right == whole


def test_scanner_map_and_events_files(tmp_path):
    doc = {"scanners": [{"id": 1, "stage": "Orange", "location": "beer-booth-A"}]}
    (tmp_path / "map.json").write_text(json.dumps(doc))
    smap = ingest.load_scanner_map(tmp_path / "map.json")
    assert smap.stage_of(1) == "Orange" and smap.stage_of(2) is None
    assert smap.to_json() == doc
    evs = [ScanEvent(5, 1, "abc", "Nokia"), ScanEvent(6, 1, "def", None)]
    ingest.write_events(evs, tmp_path / "ev.csv")
    assert ingest.read_events(tmp_path / "ev.csv") == evs
