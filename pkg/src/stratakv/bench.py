"""Benchmark harness: deterministic workload runs with IO accounting,
oracle verification, crash sweeps, and the log-cleaning cost calculators.

Every quantitative result comes from block-device counters and store
statistics; wall-clock columns are informational only.
"""

from __future__ import annotations

import os
import random
import shutil
import time
from dataclasses import dataclass, field
from fractions import Fraction

from .allocator import ExtentAllocator
from .config import StoreConfig
from .cow import CowTree
from .device import IoCounters, RamBlockDevice
from .errors import CrashPoint, ValidationError
from .oracle import ReferenceOracle
from .store import SdaStore
from .workload import WorkloadSpec, gen_workload

CSV_SCHEMA = "stratakv-metrics-1"
CSV_HEADER = ("target,ops_done,inserts_in_window,blocks_read,blocks_written,"
              "sequential_fraction,stored_entries,dup_factor,level_counts,"
              "window_seconds")


# -- analytic formulas ---------------------------------------------------------

def _exact(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, int):
        return Fraction(x)
    if isinstance(x, float):
        return Fraction(str(x))
    return Fraction(str(x))


def lfs_rho(mu) -> float:
    """Write amplification of a log cleaner recovering segments at mean
    utilization mu: 2 / (1 - mu). Exact for decimal inputs."""
    m = _exact(mu)
    if not 0 <= m < 1:
        raise ValidationError("mu must lie in [0, 1)")
    return float(2 / (1 - m))


def cow_slowdown(entries_per_block, rho) -> float:
    """Slowdown factor B * (1 + rho) of a log-embedded CoW B-tree relative
    to a write-optimized store, for B entries per block."""
    b = _exact(entries_per_block)
    r = _exact(rho)
    if b < 1:
        raise ValidationError("entries per block must be at least 1")
    if r < 0:
        raise ValidationError("rho cannot be negative")
    return float(b * (1 + r))


# -- metrics ---------------------------------------------------------------------

@dataclass
class MetricsRow:
    target: str
    ops_done: int
    inserts_in_window: int
    blocks_read: int
    blocks_written: int
    sequential_fraction: float
    stored_entries: int
    dup_factor: float
    level_counts: str
    window_seconds: float

    def to_csv(self) -> str:
        return (f"{self.target},{self.ops_done},{self.inserts_in_window},"
                f"{self.blocks_read},{self.blocks_written},"
                f"{self.sequential_fraction:.4f},{self.stored_entries},"
                f"{self.dup_factor:.4f},{self.level_counts},"
                f"{self.window_seconds:.3f}")


@dataclass
class RangeQueryStat:
    blocks_read: int
    seq_reads: int
    candidate_arrays: int
    results: int


@dataclass
class TargetResult:
    target: str
    rows: list[MetricsRow] = field(default_factory=list)
    total: IoCounters = field(default_factory=IoCounters)
    query_reads: int = 0
    query_writes: int = 0
    range_stats: list[RangeQueryStat] = field(default_factory=list)
    mismatches: list[str] = field(default_factory=list)
    audit_violations: list[str] = field(default_factory=list)
    stored_entries: int = 0
    dup_factor: float = 0.0
    level_counts: dict[int, int] = field(default_factory=dict)
    elapsed_seconds: float = 0.0

    @property
    def insert_reads(self) -> int:
        return self.total.reads - self.query_reads

    @property
    def insert_writes(self) -> int:
        return self.total.writes - self.query_writes


@dataclass
class BenchResult:
    spec: WorkloadSpec
    targets: dict[str, TargetResult]

    def to_csv(self) -> str:
        lines = [f"# schema={CSV_SCHEMA}", CSV_HEADER]
        for result in self.targets.values():
            lines.extend(row.to_csv() for row in result.rows)
        return "\n".join(lines) + "\n"

    def plot_series(self) -> str:
        """Derived throughput / range-IO series (informational)."""
        lines = ["target,ops_done,inserts_per_second,range_entries_per_block_read"]
        for result in self.targets.values():
            per_block = 0.0
            if result.range_stats:
                read = sum(s.blocks_read for s in result.range_stats)
                got = sum(s.results for s in result.range_stats)
                per_block = got / read if read else 0.0
            for row in result.rows:
                rate = (row.inserts_in_window / row.window_seconds
                        if row.window_seconds > 0 else 0.0)
                lines.append(f"{result.target},{row.ops_done},{rate:.1f},{per_block:.2f}")
        return "\n".join(lines) + "\n"

    @property
    def mismatches(self) -> list[str]:
        out = []
        for r in self.targets.values():
            out.extend(r.mismatches)
        return out

    @property
    def violations(self) -> list[str]:
        out = []
        for r in self.targets.values():
            out.extend(r.audit_violations)
        return out


class _Verifier:
    """Shadow-executes the stream on the oracle and cross-checks queries."""

    PROBES_PER_RANGE = 8

    def __init__(self, spec: WorkloadSpec):
        self.oracle = ReferenceOracle()
        self.oracle.create_root()
        self.rng = random.Random(f"probe-{spec.seed}")
        self.recent: list[tuple[bytes, int]] = []
        self.mismatches: list[str] = []

    def apply(self, op) -> None:
        self.oracle.apply(op)
        if op[0] == "put":
            self.recent.append((op[1], op[3]))
            if len(self.recent) > 4096:
                del self.recent[:2048]

    def check_range(self, label, got, start, version, limit) -> None:
        want = self.oracle.range_query(start, None, version, limit=limit)
        if got != want:
            self.mismatches.append(
                f"{label}: range(start={start.hex()}, v={version}) returned "
                f"{len(got)} rows, oracle {len(want)}")

    def probe_gets(self, label, getter, key_len: int) -> None:
        versions = self.oracle.tree.live_versions()
        for _ in range(self.PROBES_PER_RANGE):
            if self.recent and self.rng.random() < 0.75:
                key, _ = self.recent[self.rng.randrange(len(self.recent))]
            else:
                key = self.rng.randbytes(key_len)
            v = versions[self.rng.randrange(len(versions))]
            got = getter(key, v)
            want = self.oracle.get(key, v)
            if got != want:
                self.mismatches.append(
                    f"{label}: get({key.hex()}, v={v}) = "
                    f"{got!r}, oracle {want!r}")


def _make_sda(spec: WorkloadSpec, config: StoreConfig | None, backend: str,
              workdir: str | None) -> SdaStore:
    config = config or StoreConfig(block_size=spec.block_size)
    if backend == "ram":
        return SdaStore.create_ram(config)
    if workdir is None:
        raise ValidationError("file backend requires a working directory")
    return SdaStore.create(os.path.join(workdir, "sda"), config)


def _run_target_sda(spec: WorkloadSpec, verify: bool, config: StoreConfig | None,
                    backend: str, workdir: str | None,
                    window: int) -> TargetResult:
    store = _make_sda(spec, config, backend, workdir)
    result = TargetResult(target="sda")
    verifier = _Verifier(spec) if verify else None
    counters = store.device.counters
    t0 = time.monotonic()
    window_t0 = t0
    inserts = 0
    last_inserts = 0

    for op in gen_workload(spec):
        kind = op[0]
        if kind == "put":
            store.put(op[1], op[2], op[3])
            inserts += 1
        elif kind == "clone":
            store.clone(op[1])
        elif kind == "range":
            _, start, size, version = op
            before = counters.snapshot()
            got = store.range_query(start, None, version, limit=size)
            delta = counters.delta(before)
            result.range_stats.append(RangeQueryStat(
                blocks_read=delta.reads, seq_reads=delta.seq_reads,
                candidate_arrays=store.candidate_array_count(version),
                results=len(got)))
            result.query_reads += delta.reads
            result.query_writes += delta.writes
            if verifier is not None:
                verifier.check_range("sda", got, start, version, size)
                before = counters.snapshot()
                verifier.probe_gets("sda", store.get, spec.key_len)
                delta = counters.delta(before)
                result.query_reads += delta.reads
                result.query_writes += delta.writes
        if verifier is not None and kind != "range":
            verifier.apply(op)
        if kind == "put" and inserts % window == 0:
            now = time.monotonic()
            snap = counters.snapshot()
            stats = store.stats()
            result.rows.append(MetricsRow(
                target="sda", ops_done=inserts,
                inserts_in_window=inserts - last_inserts,
                blocks_read=snap.reads, blocks_written=snap.writes,
                sequential_fraction=snap.sequential_fraction(),
                stored_entries=stats.stored_entries,
                dup_factor=stats.dup_factor,
                level_counts=_format_levels(stats.per_level),
                window_seconds=now - window_t0))
            window_t0 = now
            last_inserts = inserts

    result.audit_violations = store.audit() + store.density_check_failures
    stats = store.stats()
    result.stored_entries = stats.stored_entries
    result.dup_factor = stats.dup_factor
    result.level_counts = stats.per_level
    result.total = counters.snapshot()
    result.elapsed_seconds = time.monotonic() - t0
    if verifier is not None:
        result.mismatches = verifier.mismatches
    store.close()
    return result


def _run_target_cow(spec: WorkloadSpec, verify: bool, config: StoreConfig | None,
                    window: int) -> TargetResult:
    config = config or StoreConfig(block_size=spec.block_size)
    device = RamBlockDevice(config.block_size, config.capacity_blocks)
    allocator = ExtentAllocator(config.capacity_blocks, config.chunk_blocks)
    cow = CowTree(device, allocator)
    result = TargetResult(target="cow")
    verifier = _Verifier(spec) if verify else None
    counters = device.counters
    t0 = time.monotonic()
    window_t0 = t0
    inserts = 0
    last_inserts = 0

    for op in gen_workload(spec):
        kind = op[0]
        if kind == "put":
            cow.update(op[1], op[2], op[3])
            inserts += 1
        elif kind == "clone":
            cow.clone(op[1])
        elif kind == "range":
            _, start, size, version = op
            before = counters.snapshot()
            got = cow.range_query(start, None, version, limit=size)
            delta = counters.delta(before)
            result.range_stats.append(RangeQueryStat(
                blocks_read=delta.reads, seq_reads=delta.seq_reads,
                candidate_arrays=0, results=len(got)))
            result.query_reads += delta.reads
            result.query_writes += delta.writes
            if verifier is not None:
                verifier.check_range("cow", got, start, version, size)
                before = counters.snapshot()
                verifier.probe_gets("cow", cow.lookup, spec.key_len)
                delta = counters.delta(before)
                result.query_reads += delta.reads
                result.query_writes += delta.writes
        if verifier is not None and kind != "range":
            verifier.apply(op)
        if kind == "put" and inserts % window == 0:
            now = time.monotonic()
            snap = counters.snapshot()
            result.rows.append(MetricsRow(
                target="cow", ops_done=inserts,
                inserts_in_window=inserts - last_inserts,
                blocks_read=snap.reads, blocks_written=snap.writes,
                sequential_fraction=snap.sequential_fraction(),
                stored_entries=0, dup_factor=0.0, level_counts="",
                window_seconds=now - window_t0))
            window_t0 = now
            last_inserts = inserts

    result.total = counters.snapshot()
    result.elapsed_seconds = time.monotonic() - t0
    if verifier is not None:
        result.mismatches = verifier.mismatches
    return result


def _format_levels(per_level: dict[int, int]) -> str:
    return "|".join(f"{level}:{count}" for level, count in sorted(per_level.items()))


def run_bench(target: str, spec: WorkloadSpec, verify: bool = False,
              config: StoreConfig | None = None, backend: str = "ram",
              workdir: str | None = None, window: int | None = None) -> BenchResult:
    """Run the workload against the requested target(s) and collect metrics."""
    if target not in ("sda", "cow", "both"):
        raise ValidationError(f"unknown target {target!r}")
    window = window or min(10_000, max(1000, spec.total_inserts // 10))
    targets: dict[str, TargetResult] = {}
    if target in ("sda", "both"):
        targets["sda"] = _run_target_sda(spec, verify, config, backend,
                                         workdir, window)
    if target in ("cow", "both"):
        targets["cow"] = _run_target_cow(spec, verify, config, window)
    return BenchResult(spec=spec, targets=targets)


def audit_store(directory: str) -> list[str]:
    """Open a store directory, run the full invariant audit, close."""
    store = SdaStore.open(directory)
    try:
        return store.audit()
    finally:
        store.close()


# -- crash sweep ---------------------------------------------------------------

@dataclass
class CrashTestReport:
    commits_observed: int
    runs: int
    failures: list[str]

    @property
    def passed(self) -> bool:
        return not self.failures


_PRE_STAGES = ("pre_slot", "mid_slot", "pre_epoch")


def _oracle_at(ops: list, n_ops: int) -> ReferenceOracle:
    oracle = ReferenceOracle()
    oracle.create_root()
    for op in ops[:n_ops]:
        if op[0] != "range":
            oracle.apply(op)
    return oracle


def _dump_equal(store: SdaStore, oracle: ReferenceOracle) -> str | None:
    """Full logical comparison; returns a description of the first diff."""
    if len(store.tree) != len(oracle.tree):
        return (f"version count {len(store.tree)} != {len(oracle.tree)}")
    for v in store.tree.all_versions():
        if store.tree.parent(v) != oracle.tree.parent(v):
            return f"parent of version {v} differs"
    if store.tree.deleted_set != oracle.tree.deleted_set:
        return "deleted version sets differ"
    for v in store.tree.live_versions():
        got = store.range_query(b"\x00", None, v)
        want = oracle.range_query(b"\x00", None, v)
        if got != want:
            return (f"content at version {v}: {len(got)} rows vs oracle "
                    f"{len(want)}")
    return None


def crash_test(workdir: str, inserts: int = 10_000, seed: int = 7,
               config: StoreConfig | None = None,
               kill_points: str = "all") -> CrashTestReport:
    """Kill-point sweep across every manifest commit in a workload.

    Every recovery must equal the oracle state as of the previous commit
    (for kills before the epoch switch) or of this commit (after), and
    the recovered allocator must tile the device with zero leaks.
    """
    config = config or StoreConfig(flush_entries=512, capacity_blocks=8192)
    spec = WorkloadSpec(seed=seed, total_inserts=inserts,
                        clone_interval=max(1, inserts // 10),
                        range_query_interval=inserts + 1,
                        block_size=config.block_size)
    ops = [op for op in gen_workload(spec)]
    stages = _PRE_STAGES + ("post_epoch",) if kill_points == "all" else (kill_points,)

    # dry run: learn how many commits the workload performs and which
    # operation index each commit covers
    coverage: dict[int, int] = {}
    dry_dir = os.path.join(workdir, "dry")
    store = SdaStore.create(dry_dir, config)
    op_index = 0

    def recorder(stage, commit_index):
        coverage.setdefault(commit_index, op_index)

    store.kill_hook = recorder
    for op in ops:
        op_index += 1
        _apply_store_op(store, op)
    store.kill_hook = None
    store.close()
    shutil.rmtree(dry_dir)
    commit_indices = sorted(coverage)

    failures: list[str] = []
    runs = 0
    for commit_index in commit_indices:
        for stage in stages:
            runs += 1
            label = f"commit={commit_index} stage={stage}"
            run_dir = os.path.join(workdir, f"run-{commit_index}-{stage}")
            crashed = _run_until_crash(run_dir, config, ops, commit_index, stage)
            if not crashed:
                failures.append(f"{label}: kill point never reached")
                continue
            try:
                recovered = SdaStore.open(run_dir)
            except Exception as exc:
                failures.append(f"{label}: recovery failed: {exc}")
                continue
            try:
                violations = recovered.audit()
                if violations:
                    failures.append(f"{label}: audit: {violations[:3]}")
                expect_ops = (coverage[commit_index] if stage == "post_epoch"
                              else _previous_coverage(coverage, commit_index))
                diff = _dump_equal(recovered, _oracle_at(ops, expect_ops))
                if diff:
                    failures.append(f"{label}: {diff}")
            finally:
                recovered.close()
            shutil.rmtree(run_dir)
    return CrashTestReport(commits_observed=len(commit_indices), runs=runs,
                           failures=failures)


def _previous_coverage(coverage: dict[int, int], commit_index: int) -> int:
    earlier = [coverage[c] for c in coverage if c < commit_index]
    return max(earlier) if earlier else 0


def _apply_store_op(store: SdaStore, op) -> None:
    kind = op[0]
    if kind == "put":
        store.put(op[1], op[2], op[3])
    elif kind == "clone":
        store.clone(op[1])
    elif kind == "range":
        pass
    else:
        raise ValidationError(f"unknown op {kind!r}")


def _run_until_crash(run_dir: str, config: StoreConfig, ops: list,
                     commit_index: int, stage: str) -> bool:
    store = SdaStore.create(run_dir, config)

    def killer(got_stage, got_commit):
        if got_commit == commit_index and got_stage == stage:
            raise CrashPoint(f"{got_stage}@{got_commit}")

    store.kill_hook = killer
    try:
        for op in ops:
            _apply_store_op(store, op)
    except CrashPoint:
        store.device.close()
        return True
    store.close()
    return False
