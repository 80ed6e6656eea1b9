from typing import Dict, List, Literal, Optional

from pydantic import BaseModel, Field

Algorithm = Literal["cannon", "tallskinny"]


class PhaseTraffic(BaseModel):
    sent_bytes: int = 0
    recv_bytes: int = 0


class RankTraffic(BaseModel):
    rank: int
    sent_bytes: int = 0
    recv_bytes: int = 0
    messages_sent: int = 0
    messages_received: int = 0
    phases: Dict[str, PhaseTraffic] = Field(default_factory=dict)

    def phase(self, name: str) -> PhaseTraffic:
        return self.phases.get(name, PhaseTraffic())


class TransportStats(BaseModel):
    ranks: List[RankTraffic]

    @property
    def total_sent(self) -> int:
        return sum(r.sent_bytes for r in self.ranks)

    @property
    def total_received(self) -> int:
        return sum(r.recv_bytes for r in self.ranks)

    @property
    def conserved(self) -> bool:
        return self.total_sent == self.total_received


class RankComm(BaseModel):
    rank: int
    sent_bytes: int
    recv_bytes: int
    steps: int
    phases: Dict[str, PhaseTraffic] = Field(default_factory=dict)


class CommReport(BaseModel):
    """Per-rank communication of one distributed multiplication."""
    algorithm: Algorithm
    steps: int
    ranks: List[RankComm]

    @classmethod
    def from_stats(cls, algorithm: Algorithm, steps: int, stats: TransportStats) -> "CommReport":
        return cls(
            algorithm=algorithm,
            steps=steps,
            ranks=[
                RankComm(rank=r.rank, sent_bytes=r.sent_bytes, recv_bytes=r.recv_bytes, steps=steps, phases=r.phases)
                for r in stats.ranks
            ],
        )

    def phase_sent(self, name: str) -> List[int]:
        return [r.phases.get(name, PhaseTraffic()).sent_bytes for r in self.ranks]

    def phase_received(self, name: str) -> List[int]:
        return [r.phases.get(name, PhaseTraffic()).recv_bytes for r in self.ranks]

    @property
    def max_sent(self) -> int:
        return max((r.sent_bytes for r in self.ranks), default=0)


class StackStats(BaseModel):
    stacks: int = 0
    entries: int = 0
    max_stack_size: int = 0
    # power-of-two bins: key "2^b" counts stacks with 2^(b-1) < size <= 2^b
    size_histogram: Dict[str, int] = Field(default_factory=dict)
    worker_entries: List[int] = Field(default_factory=list)

    def merge(self, other: "StackStats") -> "StackStats":
        histogram = dict(self.size_histogram)
        for key, count in other.size_histogram.items():
            histogram[key] = histogram.get(key, 0) + count
        width = max(len(self.worker_entries), len(other.worker_entries))
        workers = [
            (self.worker_entries[w] if w < len(self.worker_entries) else 0)
            + (other.worker_entries[w] if w < len(other.worker_entries) else 0)
            for w in range(width)
        ]
        return StackStats(
            stacks=self.stacks + other.stacks,
            entries=self.entries + other.entries,
            max_stack_size=max(self.max_stack_size, other.max_stack_size),
            size_histogram=dict(sorted(histogram.items(), key=lambda kv: int(kv[0][2:]))),
            worker_entries=workers,
        )


class DensifySummary(BaseModel):
    a_block_shapes: List[List[int]] = Field(default_factory=list)
    b_block_shapes: List[List[int]] = Field(default_factory=list)
    copy_bytes: int = 0
    pool_allocations: int = 0
    pool_reuses: int = 0
    overhead_seconds: float = 0.0


class MultiplyResult(BaseModel):
    """Everything a distributed multiplication reports besides the C panels."""
    comm: CommReport
    stacks: StackStats
    densify: Optional[DensifySummary] = None


class RunConfig(BaseModel):
    shape: Literal["square", "rect"]
    M: int
    N: int
    K: int
    block: int
    grid: str
    ranks: int
    threads: int
    algorithm: Algorithm
    densified: bool
    seed: int


class RunReport(BaseModel):
    config: RunConfig
    wall_times: List[float]
    wall_time_median: float
    comm: CommReport
    stacks: StackStats
    densify: Optional[DensifySummary] = None
    verified: Optional[bool] = None
    max_relative_error: Optional[float] = None


class RatioRow(BaseModel):
    shape: str
    block: int
    grid: str
    threads: int
    algorithm: Algorithm
    t_blocked: float
    t_densified: float
    ratio: float


class SweepRow(BaseModel):
    ranks: int
    threads: int
    grid: str
    algorithm: Algorithm
    densified: bool
    wall_time_median: float
    max_sent_bytes: int
    stacks: int
    verified: Optional[bool] = None


class BenchOutput(BaseModel):
    """What one CLI invocation writes in JSON format."""
    reports: List[RunReport]
    ratios: Optional[List[RatioRow]] = None
    sweep: Optional[List[SweepRow]] = None
