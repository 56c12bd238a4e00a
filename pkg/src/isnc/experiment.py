"""Experiment orchestration: sweeps x seeds x modes, per-run files, aggregates."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigurationError, IsncError
from .generators import ClusterSpec, bridge_links, generate_cluster_topology, kbps_to_pps
from .protocol import ProtocolParams
from .scheduler import DECODED
from .simulator import GenerationRow, MetricsSink, SimConfig, Simulator, read_metrics_csv
from .topology import Topology, load_topology, type_label

TOY_SWEEP_LINKS = (("n4", "n7"), ("n6", "n9"))
SWEEPS = ("bandwidth", "bandwidth_kbps", "pbdelay", "alpha")
MODES = ("inter", "intra")


class ExperimentError(IsncError):
    """A single run failed; ``where`` names the offending point."""

    def __init__(self, message: str, where: dict):
        super().__init__(message)
        self.where = where


def toy_topology_path() -> Path:
    return Path(str(resources.files("isnc") / "assets" / "toy.topo"))


def load_toy() -> Topology:
    return load_topology(toy_topology_path())


@dataclass
class ExperimentConfig:
    topology: str | None = None
    clusters: ClusterSpec | None = None
    cluster_seed: int = 0
    modes: tuple[str, ...] = MODES
    duration: float = 40.0
    seeds: tuple[int, ...] = (0,)
    sweep_name: str | None = None
    sweep_values: tuple[float, ...] = ()
    sweep_links: tuple[tuple[str, str], ...] | None = None
    playback_delay_ms: float = 1400.0
    alpha: float = 1.5
    generation_interval: float | None = None
    block: int | None = None
    field_size: int = 256
    packet_bytes: int = 1500
    focus: str | None = None  # node-id prefix reported separately, e.g. "c2_"
    out: str | None = None
    trace: bool = False
    protocol: ProtocolParams = field(default_factory=ProtocolParams)

    def __post_init__(self):
        self.modes = tuple(self.modes)
        self.seeds = tuple(int(s) for s in self.seeds)
        self.sweep_values = tuple(float(v) for v in self.sweep_values)
        if self.topology is not None and self.clusters is not None:
            raise ConfigurationError("give either a topology file or a cluster spec, not both")
        if not self.seeds:
            raise ConfigurationError("at least one seed is required")
        if not self.modes or any(m not in MODES for m in self.modes):
            raise ConfigurationError(f"modes must be drawn from {MODES}, got {self.modes}")
        if not self.duration > 0:
            raise ConfigurationError("duration must be positive")
        if self.playback_delay_ms < 0:
            raise ConfigurationError("playback delay must be >= 0 ms")
        if self.field_size != 256:
            raise ConfigurationError("only GF(256) is implemented")
        if self.sweep_name is not None:
            if self.sweep_name not in SWEEPS:
                raise ConfigurationError(f"unknown sweep {self.sweep_name!r}; choose from {SWEEPS}")
            if not self.sweep_values:
                raise ConfigurationError("a sweep needs at least one value")
        if any(not v > 0 for v in self.sweep_values):
            raise ConfigurationError("sweep values must be positive")

    def sim_config(self) -> SimConfig:
        return SimConfig(
            duration=self.duration,
            playback_delay=self.playback_delay_ms / 1000.0,
            generation_interval=self.generation_interval,
            alpha=self.alpha,
            trace=self.trace,
            protocol=self.protocol,
        )


@dataclass(frozen=True)
class RunSummary:
    mode: str
    value: float | None
    seed: int
    avg_delay: float
    decoded_pct: float
    focus_delay: float
    focus_pct: float
    rates: dict[int, float]
    violations: int
    capped: int
    payload_errors: int


def summarize_rows(rows: Sequence[GenerationRow], nodes: Iterable[str] | None = None) -> tuple[float, float]:
    """``(average decode delay, mean per-node decoded percentage)`` of ``rows``."""
    keep = None if nodes is None else set(nodes)
    delays: list[float] = []
    per: dict[str, list[bool]] = {}
    for r in rows:
        if keep is not None and r.node not in keep:
            continue
        ok = r.status == DECODED
        per.setdefault(r.node, []).append(ok)
        if ok and r.delay is not None:
            delays.append(r.delay)
    avg = math.fsum(delays) / len(delays) if delays else math.inf
    pct = math.fsum(100.0 * sum(v) / len(v) for v in per.values()) / len(per) if per else math.nan
    return avg, pct


def build_topology(cfg: ExperimentConfig) -> Topology:
    if cfg.clusters is not None:
        topo = generate_cluster_topology(cfg.clusters, np.random.default_rng(cfg.cluster_seed))
    elif cfg.topology is not None:
        topo = load_topology(cfg.topology)
    else:
        topo = load_toy()
    if cfg.block is not None:
        topo = topo.with_blocks(cfg.block)
    return topo


def sweep_links_for(cfg: ExperimentConfig, topo: Topology) -> list[tuple[str, str]]:
    if cfg.sweep_links is not None:
        return [tuple(p) for p in cfg.sweep_links]
    if cfg.clusters is not None:
        return bridge_links(topo)
    if cfg.topology is None:
        return list(TOY_SWEEP_LINKS)
    raise ConfigurationError("bandwidth sweeps on a custom topology need explicit sweep links")


def apply_point(cfg: ExperimentConfig, topo: Topology, value: float | None) -> tuple[Topology, SimConfig]:
    """Topology and simulator config of one sweep point."""
    sim = cfg.sim_config()
    name = cfg.sweep_name
    if name is None or value is None:
        return topo, sim
    if name in ("bandwidth", "bandwidth_kbps"):
        pps = value if name == "bandwidth" else kbps_to_pps(value, cfg.packet_bytes)
        return topo.with_link_capacity(sweep_links_for(cfg, topo), pps), sim
    if name == "pbdelay":
        return topo, replace(sim, playback_delay=value / 1000.0)
    return topo, replace(sim, alpha=value)


def focus_nodes(cfg: ExperimentConfig, topo: Topology) -> list[str] | None:
    if cfg.focus is None:
        return None
    return [n for n in topo.clients() if n.startswith(cfg.focus)]


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _run_name(mode: str, name: str | None, value: float | None, seed: int) -> str:
    point = "" if value is None else f"_{name}={value:g}"
    return f"{mode}{point}_seed{seed}"


def run_point(cfg: ExperimentConfig, topo: Topology, mode: str, value: float | None, seed: int) -> MetricsSink:
    t, sim = apply_point(cfg, topo, value)
    return Simulator(t, sim, mode, seed).run()


def run_experiment(cfg: ExperimentConfig) -> list[RunSummary]:
    """Execute every (sweep value, seed, mode) run; write files when ``cfg.out`` is set.

    Files: ``runs/<run>.csv`` (one row per node and generation), optional
    ``runs/<run>.trace``, ``runs.csv`` (one row per run) and ``aggregate.csv``
    (mean and sample standard deviation per mode and sweep value).
    """
    topo = build_topology(cfg)
    focus = focus_nodes(cfg, topo)
    values: list[float | None] = list(cfg.sweep_values) if cfg.sweep_name else [None]
    out = Path(cfg.out) if cfg.out else None
    if out is not None:
        (out / "runs").mkdir(parents=True, exist_ok=True)
    summaries = []
    for value in values:
        for seed in cfg.seeds:
            for mode in cfg.modes:
                where = {"mode": mode, "sweep": cfg.sweep_name, "value": value, "seed": seed}
                try:
                    m = run_point(cfg, topo, mode, value, seed)
                except IsncError as exc:
                    raise ExperimentError(f"run failed at {where}: {exc}", where) from exc
                rows = m.rows
                if out is not None:
                    name = _run_name(mode, cfg.sweep_name, value, seed)
                    path = out / "runs" / f"{name}.csv"
                    m.write_csv(path)
                    rows = read_metrics_csv(path)
                    if cfg.trace:
                        (out / "runs" / f"{name}.trace").write_text("\n".join(m.trace) + "\n", encoding="utf-8")
                summaries.append(_summary(m, rows, mode, value, seed, focus, topo))
    if out is not None:
        write_runs_csv(out / "runs.csv", summaries, topo.num_sessions, cfg.sweep_name)
        write_aggregate_csv(out / "aggregate.csv", aggregate(summaries), cfg.sweep_name)
    return summaries


def _summary(m: MetricsSink, rows, mode, value, seed, focus, topo: Topology) -> RunSummary:
    avg, pct = summarize_rows(rows)
    fd, fp = summarize_rows(rows, focus) if focus is not None else (math.nan, math.nan)
    clients = topo.clients()
    rates: dict[int, float] = {}
    for nid in clients:
        for (_, t), r in m.allocations.get(nid, {}).items():
            rates[t] = rates.get(t, 0.0) + r
    rates = {t: v / len(clients) for t, v in sorted(rates.items())} if clients else {}
    return RunSummary(mode, value, seed, avg, pct, fd, fp, rates, len(m.violations), len(m.capped), m.payload_errors)


def _sample_std(xs: Sequence[float]) -> float:
    xs = [x for x in xs if math.isfinite(x)]
    if len(xs) < 2:
        return math.nan
    return float(np.std(xs, ddof=1))


def _mean(xs: Sequence[float]) -> float:
    return math.fsum(xs) / len(xs) if xs else math.nan


def aggregate(summaries: Sequence[RunSummary]) -> list[dict]:
    """One row per (mode, sweep value), in first-seen order."""
    groups: dict[tuple, list[RunSummary]] = {}
    for s in summaries:
        groups.setdefault((s.mode, s.value), []).append(s)
    rows = []
    for (mode, value), ss in groups.items():
        rows.append({
            "mode": mode,
            "value": value,
            "runs": len(ss),
            "delay_mean": _mean([s.avg_delay for s in ss]),
            "delay_std": _sample_std([s.avg_delay for s in ss]),
            "decoded_mean": _mean([s.decoded_pct for s in ss]),
            "decoded_std": _sample_std([s.decoded_pct for s in ss]),
            "focus_delay_mean": _mean([s.focus_delay for s in ss]),
            "focus_decoded_mean": _mean([s.focus_pct for s in ss]),
            "focus_decoded_std": _sample_std([s.focus_pct for s in ss]),
        })
    return rows


def write_runs_csv(path: Path, summaries: Sequence[RunSummary], num_sessions: int, sweep: str | None) -> None:
    types = list(range(1, 1 << num_sessions))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(
            ["mode", "bandwidth_param", "avg_delay", "avg_decoded_pct"]
            + [f"rate_{type_label(t)}" for t in types]
            + ["sweep", "seed", "focus_avg_delay", "focus_decoded_pct", "violations", "capped", "payload_errors"]
        )
        for s in summaries:
            w.writerow(
                [s.mode, _fmt(s.value), _fmt(s.avg_delay), _fmt(s.decoded_pct)]
                + [_fmt(float(s.rates.get(t, 0.0))) for t in types]
                + [sweep or "", s.seed, _fmt(s.focus_delay), _fmt(s.focus_pct), s.violations, s.capped, s.payload_errors]
            )


def write_aggregate_csv(path: Path, rows: Sequence[dict], sweep: str | None) -> None:
    keys = ["mode", "value", "runs", "delay_mean", "delay_std", "decoded_mean", "decoded_std",
            "focus_delay_mean", "focus_decoded_mean", "focus_decoded_std"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sweep"] + keys)
        for r in rows:
            w.writerow([sweep or ""] + [_fmt(r[k]) for k in keys])


def read_aggregate_csv(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
