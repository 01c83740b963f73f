"""Result containers for seeded experiment runs."""

from dataclasses import dataclass, field


@dataclass
class ReplicateResult:
    """One trajectory: a label (seed or ladder value), metric time series as
    name -> (times, values) pairs, and any final states worth keeping."""

    label: str
    seed: int | None
    series: dict
    finals: dict = field(default_factory=dict)


@dataclass
class RunRecord:
    """Outcome of one experiment: config snapshot, per-replicate series,
    wall-clock, version stamp, and the master seed that reproduces it."""

    config: dict
    replicates: list
    master_seed: int | None = None
    wall_clock: float = 0.0
    version: str = ""
    summary: dict = field(default_factory=dict)
