"""
Job coordinator. A job runs in two phases: the index-scan splits first,
then the full-scan splits with an offer policy whose rate may depend on how
long the index scans took. Waves are separated by barriers and timed on the
simulated clock; every job yields one report row.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING

from lazyidx.execution import JobSpec, ScanKind
from lazyidx.indexer import OfferPolicy
from lazyidx.json import MSONable, jsanitize
from lazyidx.logging import logged
from lazyidx.policy import (
    Calibration,
    CostModelParams,
    EagerRatePlanner,
    PolicyMode,
    eager_run_job,
    n_fsw,
    predict_job_runtime,
)
from lazyidx.scheduler import dump_plan, plan_job
from lazyidx.serialization import dumpfn, loadfn

if TYPE_CHECKING:
    from typing import Iterable, Sequence, TextIO, Union

    from lazyidx.cluster import Cluster
    from lazyidx.execution import TaskResult

logger = logging.getLogger(__name__)

REPORT_COLUMNS = (
    "job_id",
    "predicate_attribute",
    "index_splits",
    "full_splits",
    "blocks_indexed",
    "blocks_total",
    "indexed_fraction",
    "rho",
    "predicted_seconds",
    "simulated_seconds",
    "records_out",
    "bytes_read",
    "blocks_offered",
    "blocks_rejected",
)


class JobFailedError(RuntimeError):
    """Raised when a map task fails. rows holds the report up to and including the failed job."""

    def __init__(self, message: str, rows: Sequence[JobReport] = ()):
        super().__init__(message)
        self.rows = list(rows)


@dataclass
class WaveTiming:
    wave: int
    scan_kind: ScanKind
    task_seconds: float
    index_overhead_seconds: float = 0.0

    @property
    def seconds(self) -> float:
        return self.task_seconds + self.index_overhead_seconds


@dataclass
class JobReport(MSONable):
    """
    Report row of one job. blocks_indexed counts the input blocks with an
    index on the predicate attribute after the job.
    """

    job_id: str
    predicate_attribute: str
    index_splits: int
    full_splits: int
    blocks_indexed: int
    blocks_total: int
    indexed_fraction: float
    rho: float | None
    predicted_seconds: float | None
    simulated_seconds: float
    records_out: int
    bytes_read: int
    blocks_offered: int
    blocks_rejected: int
    index_scan_seconds: float = 0.0
    policy_fallback: bool = False
    failed_tasks: int = 0
    waves: list[WaveTiming] = field(default_factory=list)
    results: list[TaskResult] = field(default_factory=list, repr=False)

    def as_row(self) -> dict:
        """The CSV columns of the report."""
        return {c: getattr(self, c) for c in REPORT_COLUMNS}

    def as_dict(self) -> dict:
        d = jsanitize({k: v for k, v in self.__dict__.items() if k != "results"})
        d["@module"] = self.__class__.__module__
        d["@class"] = self.__class__.__name__
        return d

    @classmethod
    def from_dict(cls, d: dict) -> JobReport:
        kwargs = {k: v for k, v in d.items() if not k.startswith("@")}
        kwargs["waves"] = [
            WaveTiming(w["wave"], ScanKind(w["scan_kind"]), w["task_seconds"], w["index_overhead_seconds"])
            for w in kwargs.get("waves", [])
        ]
        return cls(**kwargs)

    def output(self) -> list:
        """Emitted records of all tasks."""
        return [rec for r in self.results if r.output is not None for rec in r.output]


def wave_timings(results: Iterable[TaskResult], cluster: Cluster) -> list[WaveTiming]:
    """Simulated duration of every wave: slowest task plus indexing overhead."""
    waves: dict[int, WaveTiming] = {}
    indexed: dict[int, int] = {}
    for r in results:
        w = waves.setdefault(r.wave, WaveTiming(r.wave, r.scan_kind, 0.0))
        w.task_seconds = max(w.task_seconds, r.elapsed)
        indexed[r.wave] = indexed.get(r.wave, 0) + r.blocks_indexed
    for wave, w in waves.items():
        w.index_overhead_seconds = cluster.config.cost.index_overhead_seconds(indexed[wave], cluster.config.n_slots)
    return [waves[k] for k in sorted(waves)]


class Engine:
    """
    Runs job sequences on a cluster, keeping the eager indexing calibration
    of the cluster root up to date.
    """

    def __init__(self, cluster: Cluster, progress: bool = False, plan_out: TextIO | None = None):
        """
        Args:
            cluster: Cluster with an uploaded dataset.
            progress: Show per-wave progress bars.
            plan_out: If given, every job's plan is dumped there.
        """
        self.cluster = cluster
        self.progress = progress
        self.plan_out = plan_out
        self.planner = EagerRatePlanner(cluster.config.policy, Calibration.load(cluster.root))

    def _offer_policy(self, job: JobSpec, t_is: float, n_blocks: int, n_idx: int):
        """Offer policy of the full-scan phase, with the rate and cost model inputs behind it."""
        cfg = self.cluster.config
        policy = cfg.policy.with_job_overrides(job.offer_rate, job.eager, job.selectivity_threshold)
        if policy.mode is PolicyMode.SELECTIVITY:
            offer_policy = OfferPolicy.selectivity(policy.selectivity_threshold, policy.selectivity_direction)
            return offer_policy, None, None, False
        if policy.mode is PolicyMode.EAGER:
            decision = eager_run_job(self.planner, t_is, cfg.n_slots, n_blocks, n_idx)
            return OfferPolicy.offer_rate(decision.rho), decision.rho, decision.params, decision.fallback
        return OfferPolicy.offer_rate(policy.rho), policy.rho, None, False

    @logged(logging.INFO)
    def run_job(self, job: JobSpec) -> JobReport:
        """
        Plans and runs one job.

        Raises:
            JobFailedError: If a task failed. Its rows hold this job's report.
        """
        cluster = self.cluster
        registry = cluster.registry
        cfg = cluster.config
        job = job.bind(registry.schema)
        attribute = job.predicate.attribute

        plan = plan_job(job, registry, cfg.max_blocks_per_split, cfg.schedule_count_mode)
        if self.plan_out is not None:
            dump_plan(plan, self.plan_out)
        index_plan = [a for a in plan if a.scan_kind is ScanKind.INDEX_SCAN]
        full_plan = [a for a in plan if a.scan_kind is ScanKind.FULL_SCAN]
        n_blocks = len(registry)
        n_idx = sum(len(a.block_ids) for a in index_plan)

        results = cluster.run_wave(index_plan, job, None, progress=self.progress)
        index_waves = wave_timings(results, cluster)
        t_is = sum(w.seconds for w in index_waves)

        offer_policy, rho, params, fallback = self._offer_policy(job, t_is, n_blocks, n_idx)
        offer_policy.begin_job(n_blocks, [a.block_ids[0] for a in full_plan])
        full_results = cluster.run_wave(
            full_plan,
            job,
            offer_policy,
            first_task_id=len(index_plan),
            first_wave=len(index_waves),
            progress=self.progress,
        )
        results.extend(full_results)
        full_waves = wave_timings(full_results, cluster)
        scan_seconds = sum(w.task_seconds for w in full_waves)
        overhead_seconds = sum(w.index_overhead_seconds for w in full_waves)
        simulated = t_is + scan_seconds + overhead_seconds

        if rho is not None:
            measured = Calibration.from_job(
                scan_seconds, overhead_seconds, rho, n_blocks, len(full_waves), cfg.n_slots, simulated
            )
            self.planner.observe(measured)
            self.planner.calibration.save(cluster.root)
        predicted = self._predict(rho, params, n_blocks, n_idx, t_is)

        blocks_indexed = registry.indexed_block_count(attribute)
        failed = [r for r in results if not r.ok]
        report = JobReport(
            job_id=job.job_id,
            predicate_attribute=attribute,
            index_splits=len(index_plan),
            full_splits=len(full_plan),
            blocks_indexed=blocks_indexed,
            blocks_total=n_blocks,
            indexed_fraction=blocks_indexed / n_blocks if n_blocks else 1.0,
            rho=rho,
            predicted_seconds=predicted,
            simulated_seconds=simulated,
            records_out=sum(r.records_emitted for r in results),
            bytes_read=sum(r.bytes_read for r in results),
            blocks_offered=sum(r.blocks_offered for r in results),
            blocks_rejected=sum(r.blocks_rejected for r in results),
            index_scan_seconds=t_is,
            policy_fallback=fallback,
            failed_tasks=len(failed),
            waves=index_waves + full_waves,
            results=results,
        )
        logger.info(
            f"Job {job.job_id}: {report.index_splits} index / {report.full_splits} full splits, "
            f"{blocks_indexed}/{n_blocks} blocks indexed on {attribute!r}, {simulated:.4g}s simulated"
        )
        if failed:
            raise JobFailedError(f"Job {job.job_id}: {len(failed)} task(s) failed, first: {failed[0].error}", [report])
        return report

    def _predict(
        self, rho: float | None, params: CostModelParams | None, n_blocks: int, n_idx: int, t_is: float
    ) -> float | None:
        """Cost model runtime of a finished job, None without a rate or calibration."""
        if rho is None:
            return None
        if params is None:
            c = self.planner.calibration
            params = CostModelParams(
                n_slots=self.cluster.config.n_slots,
                n_blocks=n_blocks,
                n_idx_blocks=n_idx,
                t_fsw=c.t_fsw or 0.0,
                t_idx_overhead=c.t_idx_overhead or 0.0,
                t_is=t_is,
            )
            if n_fsw(params) and (c.t_fsw is None or (rho > 0 and c.t_idx_overhead is None)):
                return None
        return predict_job_runtime(params, rho)

    def run_workload(self, jobs: Iterable[JobSpec]) -> list[JobReport]:
        """
        Runs jobs in order.

        Raises:
            JobFailedError: On the first failing job; rows holds every report so far.
        """
        rows: list[JobReport] = []
        for job in jobs:
            try:
                rows.append(self.run_job(job))
            except JobFailedError as exc:
                raise JobFailedError(str(exc), rows + exc.rows) from exc
        return rows


def load_jobs(path: Union[str, Path]) -> list[JobSpec]:
    """Reads a YAML or JSON jobs file: a list of jobs, or {"jobs": [...]}."""
    data = loadfn(path)
    if data is None:
        return []
    if isinstance(data, dict):
        data = data.get("jobs", [])
    return [JobSpec.from_dict(d, i) for i, d in enumerate(data)]


def write_report(rows: Sequence[JobReport], prefix: Union[str, Path]) -> tuple[Path, Path]:
    """
    Writes <prefix>.csv (REPORT_COLUMNS, one line per job) and <prefix>.json
    (every report field, including wave timings).

    Returns:
        The CSV and JSON paths.
    """
    prefix = Path(prefix)
    csv_path, json_path = prefix.with_suffix(".csv"), prefix.with_suffix(".json")
    with open(csv_path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=REPORT_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow(jsanitize(row.as_row()))
    dumpfn([row.as_dict() for row in rows], json_path, indent=2)
    return csv_path, json_path


def load_report(path: Union[str, Path]) -> list[JobReport]:
    data = loadfn(path)
    return [row if isinstance(row, JobReport) else JobReport.from_dict(row) for row in data]
