"""
Offer policies and eager adaptive indexing: the simulated clock, a cost model
of a job's runtime as a function of the offer rate, its calibration from a
measured job, and the per-job choice of the offer rate that spends the time
saved by index scans on building more indexes.

With n_fsw = ceil((n_blocks - n_idx_blocks) / n_slots) full-scan waves, the
model is::

    T_job = T_is + t_fsw * n_fsw + t_idx_overhead * min(rho * ceil(n_blocks / n_slots), n_fsw)

and the rate that makes T_job hit a target runtime is::

    rho = (T_target - T_is - t_fsw * n_fsw) / (t_idx_overhead * ceil(n_blocks / n_slots))
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import TYPE_CHECKING

from lazyidx.json import MSONable
from lazyidx.serialization import dumpfn, loadfn

if TYPE_CHECKING:
    from typing import Union

logger = logging.getLogger(__name__)

CALIBRATION_NAME = "calibration.json"


@dataclass
class CostModel(MSONable):
    """
    Simulated clock of the cluster. A map task takes task_startup_seconds
    plus seconds_per_byte for every byte it reads; a wave lasts as long as
    its slowest task plus index_seconds_per_block for every block its tasks
    handed to the indexers, spread over the cluster's slots.
    """

    task_startup_seconds: float = 1.0
    seconds_per_byte: float = 1e-8
    index_seconds_per_block: float = 1.0

    def __post_init__(self):
        for name in ("task_startup_seconds", "seconds_per_byte", "index_seconds_per_block"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative, got {getattr(self, name)}")

    def task_seconds(self, bytes_read: int) -> float:
        return self.task_startup_seconds + bytes_read * self.seconds_per_byte

    def index_overhead_seconds(self, blocks_indexed: int, n_slots: int) -> float:
        return self.index_seconds_per_block * blocks_indexed / n_slots


class PolicyMode(Enum):
    CONSTANT = "constant"
    EAGER = "eager"
    SELECTIVITY = "selectivity"


@dataclass
class PolicyConfig(MSONable):
    """
    Offer policy settings of a cluster, or of one job when given in a jobs
    file.

    Args:
        mode: constant (fixed offer rate), eager (offer rate from the cost
            model) or selectivity (offer blocks by qualifying fraction).
        rho: Offer rate of constant mode, and initial rate of eager mode.
        target_seconds: Runtime budget of eager mode. Defaults to the
            runtime of the first job.
        t_fsw: User-given runtime of one full-scan wave.
        t_idx_overhead: User-given indexing overhead per wave.
        selectivity_threshold: Qualifying fraction threshold.
        selectivity_direction: at_least (offer blocks with at least the
            threshold qualifying) or at_most.
    """

    mode: PolicyMode = PolicyMode.CONSTANT
    rho: float = 0.1
    target_seconds: float | None = None
    t_fsw: float | None = None
    t_idx_overhead: float | None = None
    selectivity_threshold: float = 0.8
    selectivity_direction: str = "at_least"

    def __post_init__(self):
        self.mode = PolicyMode(self.mode)
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError(f"rho must be in [0, 1], got {self.rho}")
        if not 0.0 <= self.selectivity_threshold <= 1.0:
            raise ValueError(f"selectivity_threshold must be in [0, 1], got {self.selectivity_threshold}")
        if self.selectivity_direction not in ("at_least", "at_most"):
            raise ValueError(f"selectivity_direction must be at_least or at_most, got {self.selectivity_direction!r}")
        for name in ("target_seconds", "t_fsw", "t_idx_overhead"):
            value = getattr(self, name)
            if value is not None and value < 0:
                raise ValueError(f"{name} must be non-negative, got {value}")

    def with_job_overrides(
        self,
        offer_rate: float | None = None,
        eager: bool | None = None,
        selectivity_threshold: float | None = None,
    ) -> PolicyConfig:
        """The policy of one job: the cluster policy with the job file's keys applied."""
        if selectivity_threshold is not None:
            return replace(self, mode=PolicyMode.SELECTIVITY, selectivity_threshold=selectivity_threshold)
        if eager:
            return replace(self, mode=PolicyMode.EAGER, rho=self.rho if offer_rate is None else offer_rate)
        if offer_rate is not None:
            return replace(self, mode=PolicyMode.CONSTANT, rho=offer_rate)
        return self


@dataclass(frozen=True)
class CostModelParams:
    """
    Inputs of the runtime model.

    Args:
        n_slots: Map tasks the cluster runs in parallel.
        n_blocks: Input blocks of the job.
        n_idx_blocks: Input blocks already indexed on the predicate attribute.
        t_fsw: Runtime of one full-scan wave.
        t_idx_overhead: Indexing overhead added to a wave per offered block
            per slot.
        t_is: Runtime of the index-scan phase.
        t_target: Runtime budget.
    """

    n_slots: int
    n_blocks: int
    n_idx_blocks: int = 0
    t_fsw: float = 0.0
    t_idx_overhead: float = 0.0
    t_is: float = 0.0
    t_target: float = 0.0

    def __post_init__(self):
        if self.n_slots < 1:
            raise ValueError(f"n_slots must be positive, got {self.n_slots}")
        if not 0 <= self.n_idx_blocks <= self.n_blocks:
            raise ValueError(f"n_idx_blocks must be in [0, {self.n_blocks}], got {self.n_idx_blocks}")

    @property
    def waves(self) -> int:
        """ceil(n_blocks / n_slots)"""
        return -(-self.n_blocks // self.n_slots)


def n_fsw(params: CostModelParams) -> int:
    """Number of full-scan waves: ceil(unindexed blocks / n_slots)."""
    return -(-(params.n_blocks - params.n_idx_blocks) // params.n_slots)


def predict_job_runtime(params: CostModelParams, rho: float) -> float:
    """
    Predicted job runtime for offer rate rho.

    >>> predict_job_runtime(CostModelParams(10, 100, 20, t_fsw=10, t_idx_overhead=2, t_is=10), 0.5)
    100.0
    """
    if not 0.0 <= rho <= 1.0:
        raise ValueError(f"rho must be in [0, 1], got {rho}")
    waves = n_fsw(params)
    overhead = params.t_idx_overhead * min(rho * params.waves, waves)
    return float(params.t_is + params.t_fsw * waves + overhead)


def compute_rho(params: CostModelParams) -> float:
    """
    Offer rate that spends the remaining runtime budget on indexing,
    clamped to [0, 1].

    >>> compute_rho(CostModelParams(10, 100, 20, t_fsw=10, t_idx_overhead=2, t_is=10, t_target=100))
    0.5
    """
    budget = params.t_target - params.t_is - params.t_fsw * n_fsw(params)
    if budget <= 0:
        return 0.0
    if params.t_idx_overhead <= 0 or params.waves == 0:
        return 1.0
    return min(1.0, budget / (params.t_idx_overhead * params.waves))


@dataclass
class Calibration(MSONable):
    """
    Measured or user-given cost model constants of a cluster, persisted as
    calibration.json in the cluster root.
    """

    t_fsw: float | None = None
    t_idx_overhead: float | None = None
    t_target: float | None = None
    source: str = "measured"

    @property
    def complete(self) -> bool:
        return None not in (self.t_fsw, self.t_idx_overhead, self.t_target)

    @classmethod
    def from_job(
        cls,
        full_scan_seconds: float,
        index_overhead_seconds: float,
        rho: float,
        n_blocks: int,
        n_fsw: int,
        n_slots: int,
        runtime: float,
    ) -> Calibration:
        """
        Derives t_fsw and t_idx_overhead from one executed job.

        Args:
            full_scan_seconds: Time of the full-scan waves without indexing overhead.
            index_overhead_seconds: Indexing overhead added to those waves.
            rho: Offer rate the job ran with.
            n_blocks: Input blocks of the job.
            n_fsw: Full-scan waves of the job.
            n_slots: Map slots of the cluster.
            runtime: Total job runtime, the default target.
        """
        t_fsw = full_scan_seconds / n_fsw if n_fsw else None
        waves = -(-n_blocks // n_slots)
        charged = min(rho * waves, n_fsw)
        t_idx = index_overhead_seconds / charged if charged > 0 else None
        return cls(t_fsw=t_fsw, t_idx_overhead=t_idx, t_target=runtime)

    def merged(self, policy: PolicyConfig) -> Calibration:
        """User-given values in policy take precedence over measured ones."""
        user = {"t_fsw": policy.t_fsw, "t_idx_overhead": policy.t_idx_overhead, "t_target": policy.target_seconds}
        overrides = {k: v for k, v in user.items() if v is not None}
        if not overrides:
            return self
        merged = replace(self, **overrides)
        merged.source = "user" if len(overrides) == 3 else "mixed"
        return merged

    def fill_missing(self, other: Calibration) -> Calibration:
        """Keeps every value already set here, taking the others from other."""
        return Calibration(
            t_fsw=self.t_fsw if self.t_fsw is not None else other.t_fsw,
            t_idx_overhead=self.t_idx_overhead if self.t_idx_overhead is not None else other.t_idx_overhead,
            t_target=self.t_target if self.t_target is not None else other.t_target,
            source=self.source,
        )

    def save(self, root: Union[str, Path]) -> None:
        dumpfn(self.as_dict(), Path(root) / CALIBRATION_NAME, indent=2)

    @classmethod
    def load(cls, root: Union[str, Path]) -> Calibration:
        """Calibration of a cluster root, or an empty one."""
        path = Path(root) / CALIBRATION_NAME
        if not path.exists():
            return cls()
        data = loadfn(path)
        return data if isinstance(data, Calibration) else cls.from_dict(data)


@dataclass(frozen=True)
class EagerDecision:
    """Offer rate chosen for one job, with the cost model inputs behind it."""

    rho: float
    params: CostModelParams | None
    fallback: bool = False

    @property
    def predicted_seconds(self) -> float | None:
        if self.params is None:
            return None
        return predict_job_runtime(self.params, self.rho)


class EagerRatePlanner:
    """
    Chooses the offer rate of every job of an eager sequence. The first job
    runs with the initial rate and becomes the calibration job; its runtime
    is the default target.
    """

    def __init__(self, policy: PolicyConfig, calibration: Calibration | None = None):
        self.policy = policy
        self.calibration = (calibration or Calibration()).merged(policy)
        self.jobs_run = 0

    @property
    def calibrated(self) -> bool:
        return self.calibration.complete

    def decide(self, n_slots: int, n_blocks: int, n_idx_blocks: int, t_is: float) -> EagerDecision:
        """Offer rate for a job whose index-scan phase took t_is."""
        if not self.calibrated:
            if self.jobs_run > 0:
                warnings.warn(
                    "Eager indexing has no calibration (t_fsw, t_idx_overhead, target); using the constant offer rate.",
                    stacklevel=2,
                )
            return EagerDecision(self.policy.rho, None, fallback=self.jobs_run > 0)
        c = self.calibration
        params = CostModelParams(
            n_slots=n_slots,
            n_blocks=n_blocks,
            n_idx_blocks=n_idx_blocks,
            t_fsw=c.t_fsw,
            t_idx_overhead=c.t_idx_overhead,
            t_is=t_is,
            t_target=c.t_target,
        )
        rho = compute_rho(params)
        logger.info(f"Eager offer rate {rho:.4f} ({n_idx_blocks}/{n_blocks} blocks indexed, T_is={t_is:.4g})")
        return EagerDecision(rho, params)

    def observe(self, measured: Calibration) -> None:
        """Feeds the measurements of a finished job; the first one calibrates."""
        self.jobs_run += 1
        if not self.calibrated:
            self.calibration = self.calibration.fill_missing(measured)
            logger.info(f"Calibrated eager indexing: {self.calibration}")


def eager_run_job(
    planner: EagerRatePlanner, t_is: float, n_slots: int, n_blocks: int, n_idx_blocks: int
) -> EagerDecision:
    """
    Offer rate of the full-scan phase of an eager job, once its index scans
    have run in t_is.

    The caller runs the full-scan phase with the returned rate and then
    reports the job's measurements with planner.observe.
    """
    if n_idx_blocks >= n_blocks:
        return EagerDecision(0.0, CostModelParams(n_slots, n_blocks, n_idx_blocks, t_is=t_is))
    return planner.decide(n_slots, n_blocks, n_idx_blocks, t_is)
