"""Command-line pipeline: synth -> ingest -> attendance -> irm / robustness / enrich, micro, report.

Stages hand off through files in the output directory.  Every JSON artifact
carries the config hash and the master seed; CSV tables get the same stamp
through the JSON written next to them.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import attendance as att
from . import evaluation as ev
from . import ingest
from . import microgroups as mg
from . import synth
from .config import ConfigError, PipelineConfig, load_config
from .irm import InvariantError, IRMState, observed_matrix, run_restarts

logger = logging.getLogger("festgroups")

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_INVARIANT = 0, 1, 2, 3
STAGES = ("synth", "ingest", "attendance", "irm", "robustness", "enrich", "micro", "report")

EVENTS = "events.csv"
ATTENDANCE = "attendance"          # attendance.csv + attendance.json
IRM_STATE = "irm_state.json"


class UsageError(Exception):
    pass


class InputError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


class Context:
    def __init__(self, cfg: PipelineConfig, seed: int, jobs: int, output: Path):
        self.cfg = cfg
        self.seed = seed
        self.jobs = jobs
        self.out = output
        self.hash = cfg.config_hash()

    def stage_seed(self, stage: str) -> int:
        """Independent, stable seed per stage derived from the master seed."""
        ss = np.random.SeedSequence([self.seed, STAGES.index(stage)])
        return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))

    def stamp(self, stage: str, payload: dict) -> dict:
        return {"stage": stage, "config_hash": self.hash, "seed": self.seed, **payload}

    def write_json(self, name: str, stage: str, payload: dict) -> Path:
        path = self.out / name
        with open(path, "w") as fh:
            json.dump(_plain(self.stamp(stage, payload)), fh, indent=1, sort_keys=True)
            fh.write("\n")
        return path

    def require(self, *paths: Path) -> None:
        for p in paths:
            if not Path(p).exists():
                raise InputError(f"missing input: {p}")

    def read_stamped(self, path: Path) -> dict:
        self.require(path)
        with open(path) as fh:
            doc = json.load(fh)
        if doc.get("config_hash") != self.hash or doc.get("seed") != self.seed:
            raise InputError(f"{path} was produced with a different config or seed "
                             f"(hash {doc.get('config_hash')}, seed {doc.get('seed')})")
        return doc


def _plain(x):
    """Recursively convert numpy scalars and NaN into JSON-safe values."""
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.generic):
        x = x.item()
    if isinstance(x, float) and not np.isfinite(x):
        return None
    return x


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _fmt(x: float) -> str:
    return repr(float(x))


# ---------------------------------------------------------------------------
# stages

def cmd_synth(ctx: Context) -> None:
    s = ctx.cfg.synth
    seed = ctx.stage_seed("synth")
    spec = synth.PlantedBipartiteSpec(I=s.participants, J=s.concerts, L1=s.row_clusters,
                                      L2=s.col_clusters, eta_in=s.eta_in, eta_out=s.eta_out,
                                      seed=seed)
    traj = None
    if s.group_devices:
        traj = synth.PlantedTrajectorySpec(num_devices=s.group_devices, num_groups=s.groups,
                                           p_follow=s.p_follow,
                                           background_rate=s.background_rate,
                                           bin_width=ctx.cfg.micro.bin_width)
    fest = synth.gen_festival(spec, stages=s.stages, days=s.days, scans_mean=s.scans_mean,
                              trajectories=traj, seed=seed)
    for name in ("scan_log", "scanner_map", "oui_table", "schedule"):
        ctx.cfg.path(name).parent.mkdir(parents=True, exist_ok=True)
    with open(ctx.cfg.path("scan_log"), "w", newline="") as fh:
        ingest.write_scan_log(fest.records, fh,
                              "jsonl" if ctx.cfg.paths.scan_log.endswith(".jsonl") else "csv")
    with open(ctx.cfg.path("scanner_map"), "w") as fh:
        json.dump(fest.scanner_map.to_json(), fh, indent=1)
    ingest.write_oui_table(fest.oui_table, ctx.cfg.path("oui_table"))
    att.write_schedule(fest.schedule, ctx.cfg.path("schedule"))
    salt = ctx.cfg.ingest.salt.encode()
    ctx.write_json("synth_truth.json", "synth", {
        "row_labels": {ingest.anonymize(mac, salt): int(z)
                       for mac, z in zip(fest.planted.participants, fest.row_labels)},
        "col_labels": {str(cid): int(z) for cid, z in zip(fest.planted.concerts,
                                                          fest.col_labels)},
        "groups": {ingest.anonymize(mac, salt): g for mac, g in sorted(fest.groups.items())},
        "records": len(fest.records),
    })


def cmd_ingest(ctx: Context) -> None:
    log_path, oui_path = ctx.cfg.path("scan_log"), ctx.cfg.path("oui_table")
    ctx.require(log_path, oui_path)
    fmt = None if ctx.cfg.ingest.format == "auto" else ctx.cfg.ingest.format
    try:
        records, skipped = ingest.read_scan_log(log_path, fmt)
        oui = ingest.load_oui_table(oui_path)
    except (ValueError, KeyError, UnicodeDecodeError) as exc:
        raise InputError(f"cannot read scan log {log_path}: {exc}") from exc
    events = ingest.to_events(records, ctx.cfg.ingest.salt.encode(), oui)
    events.sort(key=lambda e: (e.timestamp, e.scanner_id, e.device_id))
    ingest.write_events(events, ctx.out / EVENTS)
    summary = ingest.summarize(events)
    ctx.write_json("ingest.json", "ingest", {
        "events_file": EVENTS, "records": len(records), "skipped_lines": len(skipped),
        "skipped_examples": [vars(s) for s in skipped[:20]],
        "top7_vendor_share": summary.top_vendor_share(7),
        "summary": summary.to_json()})


def _load_schedule(ctx: Context):
    ctx.require(ctx.cfg.path("schedule"), ctx.cfg.path("scanner_map"))
    try:
        smap = ingest.load_scanner_map(ctx.cfg.path("scanner_map"))
        schedule = att.load_schedule(ctx.cfg.path("schedule"),
                                     before=ctx.cfg.attendance.window_before,
                                     after=ctx.cfg.attendance.window_after)
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read schedule or scanner map: {exc}") from exc
    return schedule, smap


def cmd_attendance(ctx: Context) -> None:
    ctx.read_stamped(ctx.out / "ingest.json")
    ctx.require(ctx.out / EVENTS)
    schedule, smap = _load_schedule(ctx)
    a = ctx.cfg.attendance
    events = ingest.read_events(ctx.out / EVENTS)
    counts = att.build_count_matrix(events, schedule, smap, a.window_before, a.window_after)
    raw = att.binarize(counts, a.threshold)
    A = att.remove_outliers(raw, schedule, a.min_concerts)
    try:
        corr = {k: vars(v) for k, v in att.popularity_correlation(schedule, A).items()}
    except ValueError as exc:
        corr = {"undefined": str(exc)}
    att.write_attendance(A, ctx.out / ATTENDANCE, extra=_plain(ctx.stamp("attendance", {})))
    ctx.write_json("attendance_summary.json", "attendance", {
        "participants_before_filter": raw.shape[0], "participants": A.shape[0],
        "concerts": A.shape[1], "links": int(A.links.nnz), "threshold": A.threshold_used,
        "removed": A.removed, "popularity_correlation": corr})


def _load_attendance(ctx: Context) -> att.BinaryAttendance:
    ctx.read_stamped(ctx.out / f"{ATTENDANCE}.json")
    ctx.require(ctx.out / f"{ATTENDANCE}.csv")
    A = att.read_attendance(ctx.out / ATTENDANCE)
    if A.shape[0] < 2 or A.shape[1] < 2:
        raise InputError(f"attendance matrix too small: {A.shape}")
    return A


def cmd_irm(ctx: Context) -> None:
    A = _load_attendance(ctx)
    config = ctx.cfg.irm_config(ctx.stage_seed("irm"))
    best, traces = run_restarts(A, config, ctx.cfg.irm.restarts, jobs=ctx.jobs,
                                seed=config.seed)
    best.check()
    ctx.write_json(IRM_STATE, "irm", {"num_row_clusters": best.L1,
                                      "num_col_clusters": best.L2, **best.to_json()})
    _write_csv(ctx.out / "irm_trace.csv", ["restart", "sweep", "log_posterior"],
               [(r, t, _fmt(v)) for r, tr in enumerate(traces) for t, v in enumerate(tr)])
    _write_csv(ctx.out / "eta_hat.csv", [f"col_cluster_{k}" for k in range(best.L2)],
               [[_fmt(v) for v in row] for row in best.to_json()["eta_hat"]])


def _load_state(ctx: Context, A) -> IRMState:
    doc = ctx.read_stamped(ctx.out / IRM_STATE)
    z1, z2 = doc["row_assignments"], doc["col_assignments"]
    if (len(z1), len(z2)) != A.shape:
        raise InputError(f"{IRM_STATE} does not match the attendance matrix")
    return IRMState(observed_matrix(A), z1, z2, ctx.cfg.irm_config())


def cmd_robustness(ctx: Context) -> None:
    A = _load_attendance(ctx)
    e = ctx.cfg.eval
    config = ctx.cfg.irm_config()
    report = ev.robustness_suite(A, config, runs=e.runs, fraction=e.fraction,
                                 seed=ctx.stage_seed("robustness"), jobs=ctx.jobs)
    doc = report.to_json()
    traces = doc.pop("traces")
    ctx.write_json("robustness.json", "robustness", doc)
    _write_csv(ctx.out / "robustness_runs.csv",
               ["run", "auc", "row_clusters", "col_clusters", "log_posterior"],
               [(k, _fmt(a), c[0], c[1], _fmt(lp)) for k, (a, c, lp) in
                enumerate(zip(report.run_aucs, report.run_clusters, report.run_log_posteriors))])
    _write_csv(ctx.out / "robustness_traces.csv", ["run", "sweep", "log_posterior"],
               [(r, t, _fmt(v)) for r, tr in enumerate(traces) for t, v in enumerate(tr)])


def cmd_enrich(ctx: Context) -> None:
    A = _load_attendance(ctx)
    state = _load_state(ctx, A)
    schedule, _ = _load_schedule(ctx)
    known = {c.concert_id for c in schedule}
    missing = [cid for cid in A.concerts if cid not in known]
    if missing:
        raise InputError(f"concerts {missing[:5]} missing from {ctx.cfg.path('schedule')}")
    e = ctx.cfg.eval
    report = ev.cluster_report(state, schedule, A, alpha_sig=e.alpha_sig, top_k=e.top_k)
    ctx.write_json("enrichment.json", "enrich", report)
    _write_csv(ctx.out / "enrichment.csv",
               ["cluster", "size", "feature", "chi2", "df", "p_value", "significant",
                "low_expected"],
               [(t["cluster"], t["size"], t["feature"], _fmt(t["chi2"]), t["df"],
                 _fmt(t["p_value"]), int(t["significant"]), int(t["low_expected"]))
                for t in report["enrichment"]["tests"]])


def cmd_micro(ctx: Context) -> None:
    ctx.read_stamped(ctx.out / "ingest.json")
    ctx.require(ctx.out / EVENTS)
    m = ctx.cfg.micro
    events = ingest.read_events(ctx.out / EVENTS)
    if not events:
        raise InputError(f"{ctx.out / EVENTS} contains no events")
    occ = mg.bin_events(events, m.bin_width)
    n_all = len(occ.devices)
    occ = mg.filter_devices(occ, m.min_temporal, m.min_spatial)
    n_kept = len(occ.devices)
    occ, merged = mg.merge_duplicates(occ)
    thresholds = mg.Thresholds(m.min_weight, m.min_locations, m.min_co)
    graph = mg.micro_pipeline(occ, thresholds)
    null = mg.rewiring_baseline(occ, m.trials, thresholds,
                                np.random.default_rng(ctx.stage_seed("micro")), ctx.jobs,
                                m.swaps_per_incidence)
    mg.write_edge_list(graph, ctx.out / "micro_edges.csv")
    mg.write_dot(graph, ctx.out / "micro_graph.dot")
    ctx.write_json("micro_null.json", "micro", null.to_json())
    mean, sd = null.surviving_edges
    ctx.write_json("micro.json", "micro", {
        "devices_seen": n_all, "devices_after_filter": n_kept,
        "nodes_after_merge": len(occ.devices), "merged_duplicates": merged,
        "surviving_nodes": graph.num_nodes, "surviving_edges": graph.num_edges,
        "null_edges_mean": mean, "null_edges_sd": sd,
        "edges_above_null_2sd": graph.num_edges > mean + 2 * sd,
        "groups": mg.connected_groups(graph), "star_nodes": mg.star_nodes(graph)})


REPORT_PARTS = ("ingest.json", "attendance_summary.json", IRM_STATE, "robustness.json",
                "enrichment.json", "micro.json", "micro_null.json", "synth_truth.json")


def cmd_report(ctx: Context) -> None:
    docs = {}
    for name in REPORT_PARTS:
        path = ctx.out / name
        if path.exists():
            docs[name] = ctx.read_stamped(path)
    if not docs:
        raise InputError(f"no stage outputs found in {ctx.out}")
    rows = []

    def metric(stage, key, value):
        rows.append((stage, key, _fmt(value) if isinstance(value, float) else value))

    if "ingest.json" in docs:
        d = docs["ingest.json"]
        metric("ingest", "records", d["records"])
        metric("ingest", "unique_devices", d["summary"]["unique_devices"])
        metric("ingest", "top7_vendor_share", d["top7_vendor_share"])
    if "attendance_summary.json" in docs:
        d = docs["attendance_summary.json"]
        for k in ("participants", "concerts", "links"):
            metric("attendance", k, d[k])
    if IRM_STATE in docs:
        d = docs[IRM_STATE]
        metric("irm", "row_clusters", d["num_row_clusters"])
        metric("irm", "col_clusters", d["num_col_clusters"])
        metric("irm", "log_posterior", d["log_posterior"])
        truth = docs.get("synth_truth.json")
        if truth is not None and "attendance_summary.json" in docs:
            A = att.read_attendance(ctx.out / ATTENDANCE)
            rows_true = [truth["row_labels"].get(p, -1) for p in A.participants]
            cols_true = [truth["col_labels"].get(str(c), -1) for c in A.concerts]
            metric("irm", "nmi_rows_vs_planted", ev.nmi(d["row_assignments"], rows_true))
            metric("irm", "nmi_cols_vs_planted", ev.nmi(d["col_assignments"], cols_true))
    if "robustness.json" in docs:
        d = docs["robustness.json"]
        for k in ("pairwise_nmi_rows", "pairwise_nmi_cols", "auc"):
            metric("robustness", f"{k}_mean", d[k]["mean"])
            metric("robustness", f"{k}_sd", d[k]["sd"])
    if "enrichment.json" in docs:
        for k, v in sorted(docs["enrichment.json"]["enrichment"]["significant_counts"].items()):
            metric("enrich", f"significant_{k}", v)
    if "micro.json" in docs:
        d = docs["micro.json"]
        for k in ("surviving_nodes", "surviving_edges", "null_edges_mean", "null_edges_sd"):
            metric("micro", k, d[k])
    bundle = {name: {k: v for k, v in doc.items() if k not in ("config_hash", "seed", "stage")}
              for name, doc in docs.items()}
    ctx.write_json("report.json", "report", {"parts": sorted(docs), "metrics": [
        {"stage": s, "metric": k, "value": v} for s, k, v in rows], "bundle": bundle})
    _write_csv(ctx.out / "report.csv", ["stage", "metric", "value"], rows)


COMMANDS = {"synth": cmd_synth, "ingest": cmd_ingest, "attendance": cmd_attendance,
            "irm": cmd_irm, "robustness": cmd_robustness, "enrich": cmd_enrich,
            "micro": cmd_micro, "report": cmd_report}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", required=True, metavar="PATH", help="INI config file")
    common.add_argument("--seed", type=int, help="master seed (overrides [run] seed)")
    common.add_argument("--jobs", type=int, help="parallel workers (default: all cores)")
    common.add_argument("--output", metavar="DIR", help="output directory (overrides [paths])")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = _Parser(prog="festgroups", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True
    helps = {"synth": "write a planted festival dataset to the configured input paths",
             "ingest": "anonymize scan logs into events",
             "attendance": "build the binary participant x concert matrix",
             "irm": "co-cluster the attendance matrix",
             "robustness": "repeated hold-out runs: pairwise NMI and AUC",
             "enrich": "cluster report with chi-squared metadata enrichment",
             "micro": "micro-group graph and rewiring baseline",
             "report": "aggregate stage outputs into report.json and report.csv"}
    for name in STAGES:
        sub.add_parser(name, parents=[common], help=helps[name])
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:     # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if not Path(args.config).exists():
        print(f"error: missing config file: {args.config}", file=sys.stderr)
        return EXIT_USAGE
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.seed is not None and args.seed < 0 or args.jobs is not None and args.jobs < 1:
        print("error: --seed must be >= 0 and --jobs >= 1", file=sys.stderr)
        return EXIT_USAGE
    seed = cfg.run.seed if args.seed is None else args.seed
    jobs = args.jobs or cfg.run.jobs or os.cpu_count() or 1
    out = Path(args.output) if args.output else cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    ctx = Context(cfg, seed, jobs, out)
    try:
        COMMANDS[args.command](ctx)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except InvariantError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
