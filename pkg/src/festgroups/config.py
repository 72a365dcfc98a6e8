"""Sectioned INI pipeline configuration with all-at-once validation and a stable hash."""
from __future__ import annotations

import configparser
import dataclasses
import hashlib
import io
import json
from dataclasses import dataclass, field, fields
from pathlib import Path

from .attendance import DEFAULT_THRESHOLD, MIN_CONCERTS, WINDOW_AFTER, WINDOW_BEFORE
from .irm import IRMConfig
from .synth import planted_pairing


class ConfigError(ValueError):
    """One or more configuration problems, reported together."""

    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.problems))


@dataclass
class PathsSection:
    scan_log: str = "data/scan_log.csv"
    scanner_map: str = "data/scanner_map.json"
    oui_table: str = "data/oui.tsv"
    schedule: str = "data/schedule.json"
    output: str = "out"


@dataclass
class IngestSection:
    salt: str = ""
    format: str = "auto"


@dataclass
class AttendanceSection:
    threshold: int = DEFAULT_THRESHOLD
    window_before: int = WINDOW_BEFORE
    window_after: int = WINDOW_AFTER
    min_concerts: int = MIN_CONCERTS


@dataclass
class IRMSection:
    beta: float = 1.0
    alpha_row: str = "auto"
    alpha_col: str = "auto"
    sweeps: int = 500
    split_merge_per_sweep: int = 1
    restricted_sweeps: int = 3
    restarts: int = 10


@dataclass
class MicroSection:
    bin_width: int = 600
    min_temporal: int = 10
    min_spatial: int = 3
    min_weight: float = 0.5
    min_locations: int = 3
    min_co: int = 3
    trials: int = 35
    swaps_per_incidence: float = 10.0


@dataclass
class EvalSection:
    runs: int = 110
    fraction: float = 0.025
    alpha_sig: float = 0.05
    top_k: int = 10


@dataclass
class SynthSection:
    participants: int = 200
    concerts: int = 40
    row_clusters: int = 4
    col_clusters: int = 5
    eta_in: float = 0.8
    eta_out: float = 0.05
    stages: int = 6
    days: int = 8
    scans_mean: float = 4.0
    group_devices: int = 0
    groups: int = 0
    p_follow: float = 0.8
    background_rate: float = 0.3


@dataclass
class RunSection:
    seed: int = 0
    jobs: int = 0   # 0: all available cores


SECTIONS = {
    "paths": PathsSection, "ingest": IngestSection, "attendance": AttendanceSection,
    "irm": IRMSection, "micro": MicroSection, "eval": EvalSection,
    "synth": SynthSection, "run": RunSection,
}


@dataclass
class PipelineConfig:
    paths: PathsSection = field(default_factory=PathsSection)
    ingest: IngestSection = field(default_factory=IngestSection)
    attendance: AttendanceSection = field(default_factory=AttendanceSection)
    irm: IRMSection = field(default_factory=IRMSection)
    micro: MicroSection = field(default_factory=MicroSection)
    eval: EvalSection = field(default_factory=EvalSection)
    synth: SynthSection = field(default_factory=SynthSection)
    run: RunSection = field(default_factory=RunSection)
    base_dir: Path = field(default_factory=Path.cwd)

    def path(self, name: str) -> Path:
        """A ``[paths]`` entry resolved against the config file's directory."""
        p = Path(getattr(self.paths, name))
        return p if p.is_absolute() else (self.base_dir / p)

    @property
    def output_dir(self) -> Path:
        return self.path("output")

    def irm_config(self, seed: int | None = None) -> IRMConfig:
        def alpha(v):
            return None if v == "auto" else float(v)
        return IRMConfig(beta=self.irm.beta, alpha_row=alpha(self.irm.alpha_row),
                         alpha_col=alpha(self.irm.alpha_col), sweeps=self.irm.sweeps,
                         split_merge_per_sweep=self.irm.split_merge_per_sweep,
                         restricted_sweeps=self.irm.restricted_sweeps,
                         seed=self.run.seed if seed is None else seed)

    def as_dict(self) -> dict:
        return {name: dataclasses.asdict(getattr(self, name)) for name in SECTIONS}

    def config_hash(self) -> str:
        """SHA-256 over every setting except output location, parallelism and seed.

        The seed is recorded next to the hash in each artifact.
        """
        d = self.as_dict()
        d["paths"] = {k: v for k, v in d["paths"].items() if k != "output"}
        d["run"] = {}
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _convert(raw: str, typ, where: str, problems: list[str]):
    try:
        if typ is bool:
            return raw.strip().lower() in ("1", "true", "yes", "on")
        return typ(raw.strip())
    except ValueError:
        problems.append(f"{where}: expected {typ.__name__}, got {raw!r}")
        return None


def _check(cfg: PipelineConfig, problems: list[str]) -> None:
    def need(cond, msg):
        if not cond:
            problems.append(msg)

    a, i, m, e, s, r = cfg.attendance, cfg.irm, cfg.micro, cfg.eval, cfg.synth, cfg.run
    need(bool(cfg.ingest.salt), "ingest.salt: must be non-empty")
    need(cfg.ingest.format in ("auto", "csv", "jsonl"), "ingest.format: must be auto, csv or jsonl")
    need(a.threshold >= 1, "attendance.threshold: must be >= 1")
    need(a.window_before >= 0 and a.window_after >= 0, "attendance windows: must be >= 0")
    need(a.min_concerts >= 1, "attendance.min_concerts: must be >= 1")
    need(i.beta > 0, "irm.beta: must be positive")
    for name in ("alpha_row", "alpha_col"):
        v = getattr(i, name)
        if v != "auto":
            try:
                need(float(v) > 0, f"irm.{name}: must be positive or 'auto'")
            except ValueError:
                problems.append(f"irm.{name}: expected a number or 'auto', got {v!r}")
    need(i.sweeps >= 0, "irm.sweeps: must be >= 0")
    need(i.split_merge_per_sweep >= 0, "irm.split_merge_per_sweep: must be >= 0")
    need(i.restricted_sweeps >= 1, "irm.restricted_sweeps: must be >= 1")
    need(i.restarts >= 1, "irm.restarts: must be >= 1")
    need(m.bin_width > 0, "micro.bin_width: must be positive")
    need(m.min_temporal >= 1 and m.min_spatial >= 1, "micro filters: must be >= 1")
    need(0 <= m.min_weight <= 1, "micro.min_weight: must lie in [0, 1]")
    need(m.trials >= 1, "micro.trials: must be >= 1")
    need(m.swaps_per_incidence > 0, "micro.swaps_per_incidence: must be positive")
    need(e.runs >= 2, "eval.runs: must be >= 2")
    need(0 < e.fraction < 1, "eval.fraction: must lie in (0, 1)")
    need(0 < e.alpha_sig < 1, "eval.alpha_sig: must lie in (0, 1)")
    need(e.top_k >= 1, "eval.top_k: must be >= 1")
    need(s.eta_in != s.eta_out, "synth: eta_in and eta_out must differ")
    need(0 <= s.eta_in <= 1 and 0 <= s.eta_out <= 1, "synth rates: must lie in [0, 1]")
    need(s.participants >= 2 and s.concerts >= 2, "synth dimensions: must be >= 2")
    need(1 <= s.row_clusters <= s.participants, "synth.row_clusters: out of range")
    need(1 <= s.col_clusters <= s.concerts, "synth.col_clusters: out of range")
    try:
        planted_pairing(s.row_clusters, s.col_clusters)
    except ValueError as exc:
        problems.append(f"synth clusters: {exc}")
    need(s.concerts <= 12 * s.stages * s.days, "synth.concerts: too many for stages x days")
    need(0 <= s.p_follow <= 1 and s.background_rate >= 0, "synth trajectory rates: out of range")
    need(s.groups * 4 <= s.group_devices, "synth.groups: groups of up to 4 must fit into group_devices")
    need(r.seed >= 0, "run.seed: must be >= 0")
    need(r.jobs >= 0, "run.jobs: must be >= 0")


def parse_config(text: str, base_dir: str | Path = ".") -> PipelineConfig:
    """Parse and validate; every problem is collected into one ``ConfigError``."""
    parser = configparser.ConfigParser(interpolation=None)
    problems: list[str] = []
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError([f"syntax: {exc}".replace("\n", " ")]) from None
    for name in parser.sections():
        if name not in SECTIONS:
            problems.append(f"[{name}]: unknown section")
    values = {}
    for name, cls in SECTIONS.items():
        section = cls()
        if parser.has_section(name):
            known = {f.name: f for f in fields(cls)}
            for key, raw in parser.items(name):
                if key not in known:
                    problems.append(f"{name}.{key}: unknown key")
                    continue
                v = _convert(raw, type(getattr(section, key)), f"{name}.{key}", problems)
                if v is not None:
                    setattr(section, key, v)
        values[name] = section
    cfg = PipelineConfig(**values, base_dir=Path(base_dir).resolve())
    _check(cfg, problems)
    if problems:
        raise ConfigError(problems)
    return cfg


def load_config(path: str | Path) -> PipelineConfig:
    path = Path(path)
    return parse_config(path.read_text(), path.resolve().parent)


def render_config(cfg: PipelineConfig) -> str:
    """INI text that parses back to ``cfg`` (relative to the same directory)."""
    parser = configparser.ConfigParser(interpolation=None)
    for name, d in cfg.as_dict().items():
        parser[name] = {k: str(v) for k, v in d.items()}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()
