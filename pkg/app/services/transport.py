"""
In-process SPMD message passing.

Every rank runs the same program in its own thread and talks to its peers
through a ``RankEndpoint``. Messages are matched FIFO per (source, dest, tag):
the n-th receive posted for a channel gets the n-th message sent on it.
Payloads are copied at send time and only their element bytes are counted.
"""
import copy
import logging
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from typing import Any, Callable, Dict, Iterator, List, Optional, Tuple, TypeVar, Union

import numpy as np

from app.core.config import settings
from app.core.errors import Deadlock, RankPanic
from app.models.grid import ProcessGrid
from app.models.matrix import BlockedMatrix
from app.models.report import PhaseTraffic, RankTraffic, TransportStats
from app.services import metrics

logger = logging.getLogger(__name__)

T = TypeVar("T")
Channel = Tuple[int, int, int]          # (src, dest, tag)
MessageKey = Tuple[int, int, int, int]  # (src, dest, tag, seq)
BARRIER = "barrier"


def payload_nbytes(payload: Any) -> int:
    if payload is None:
        return 0
    if isinstance(payload, np.ndarray):
        return int(payload.nbytes)
    if isinstance(payload, BlockedMatrix):
        return payload.nbytes
    if isinstance(payload, (tuple, list)):
        return sum(payload_nbytes(p) for p in payload)
    raise TypeError(f"unsupported payload type {type(payload).__name__}")


def _copy_payload(payload: Any) -> Any:
    if isinstance(payload, (np.ndarray, BlockedMatrix)):
        return payload.copy()
    if isinstance(payload, (tuple, list)):
        return type(payload)(_copy_payload(p) for p in payload)
    return copy.deepcopy(payload)


class _Aborted(Exception):
    """Raised inside ranks that are unwound because another rank failed."""


class PendingHandle:
    def __init__(self, endpoint: "RankEndpoint", kind: str, peer: int, tag: int, seq: int):
        self.endpoint = endpoint
        self.kind = kind
        self.peer = peer
        self.tag = tag
        self.seq = seq
        self.done = kind == "send"
        self.waited = False

    def wait(self) -> Any:
        return self.endpoint.wait(self)

    def __repr__(self) -> str:
        state = "waited" if self.waited else ("done" if self.done else "pending")
        return f"PendingHandle({self.kind}, peer={self.peer}, tag={self.tag}, seq={self.seq}, {state})"


class RankEndpoint:
    """Communication handle of one rank; only its own worker may use it."""

    def __init__(self, fabric: "VirtualTransport", rank: int):
        self.fabric = fabric
        self.rank = rank
        self.size = fabric.size
        self.grid = fabric.grid
        self.coords = fabric.grid.coords(rank) if fabric.grid is not None else (0, rank)
        self.sent_bytes = 0
        self.recv_bytes = 0
        self.messages_sent = 0
        self.messages_received = 0
        self.phases: Dict[str, PhaseTraffic] = {}
        self._phase: Optional[str] = None
        self._recv_posted: Dict[Channel, int] = {}

    @contextmanager
    def phase(self, name: str) -> Iterator[None]:
        """Attributes traffic inside the block to phase ``name`` as well."""
        previous, self._phase = self._phase, name
        self.phases.setdefault(name, PhaseTraffic())
        try:
            yield
        finally:
            self._phase = previous

    def isend(self, dest: int, tag: int, payload: Any) -> PendingHandle:
        nbytes = payload_nbytes(payload)
        seq = self.fabric._deliver(self.rank, dest, tag, _copy_payload(payload))
        self.sent_bytes += nbytes
        self.messages_sent += 1
        if self._phase is not None:
            self.phases[self._phase].sent_bytes += nbytes
        return PendingHandle(self, "send", dest, tag, seq)

    def irecv(self, src: int, tag: int) -> PendingHandle:
        channel = (src, self.rank, tag)
        seq = self._recv_posted.get(channel, 0)
        self._recv_posted[channel] = seq + 1
        return PendingHandle(self, "recv", src, tag, seq)

    def wait(self, handle: PendingHandle) -> Any:
        if handle.endpoint is not self:
            raise ValueError("handles cannot be shared between ranks")
        if handle.waited:
            raise ValueError(f"{handle!r} was already waited on")
        handle.waited = True
        if handle.kind == "send":
            return None
        payload = self.fabric._collect(self.rank, (handle.peer, self.rank, handle.tag, handle.seq))
        nbytes = payload_nbytes(payload)
        self.recv_bytes += nbytes
        self.messages_received += 1
        if self._phase is not None:
            self.phases[self._phase].recv_bytes += nbytes
        handle.done = True
        return payload

    def send(self, dest: int, tag: int, payload: Any) -> None:
        self.isend(dest, tag, payload)

    def recv(self, src: int, tag: int) -> Any:
        return self.wait(self.irecv(src, tag))

    def barrier(self) -> None:
        self.fabric._barrier(self.rank)

    def traffic(self) -> RankTraffic:
        return RankTraffic(
            rank=self.rank,
            sent_bytes=self.sent_bytes,
            recv_bytes=self.recv_bytes,
            messages_sent=self.messages_sent,
            messages_received=self.messages_received,
            phases={name: p.model_copy() for name, p in self.phases.items()},
        )


class VirtualTransport:
    """Internally synchronized message fabric shared by all ranks of one run."""

    def __init__(self, size: int, grid: Optional[ProcessGrid] = None, timeout: Optional[float] = None):
        self.size = size
        self.grid = grid
        self.timeout = settings.TRANSPORT_WAIT_TIMEOUT if timeout is None else timeout
        self._cond = threading.Condition()
        self._mailbox: Dict[MessageKey, Any] = {}
        self._send_seq: Dict[Channel, int] = {}
        self._waiting: Dict[int, Union[MessageKey, Tuple[str, int]]] = {}
        self._alive = set(range(size))
        self._barrier_count = 0
        self._barrier_generation = 0
        self._failure: Optional[Exception] = None
        self.endpoints = [RankEndpoint(self, rank) for rank in range(size)]

    # --- Called from endpoints ---
    def _deliver(self, src: int, dest: int, tag: int, payload: Any) -> int:
        if not 0 <= dest < self.size:
            raise ValueError(f"destination rank {dest} outside 0..{self.size - 1}")
        with self._cond:
            channel = (src, dest, tag)
            seq = self._send_seq.get(channel, 0)
            self._send_seq[channel] = seq + 1
            self._mailbox[(src, dest, tag, seq)] = payload
            self._cond.notify_all()
        return seq

    def _collect(self, rank: int, key: MessageKey) -> Any:
        with self._cond:
            self._block_until(rank, key, lambda: key in self._mailbox)
            return self._mailbox.pop(key)

    def _barrier(self, rank: int) -> None:
        with self._cond:
            generation = self._barrier_generation
            self._barrier_count += 1
            if self._barrier_count == self.size:
                self._barrier_count = 0
                self._barrier_generation += 1
                self._cond.notify_all()
                return
            self._block_until(rank, (BARRIER, generation), lambda: self._barrier_generation != generation)

    def _block_until(self, rank: int, awaited, ready: Callable[[], bool]) -> None:
        # caller holds self._cond
        deadline = time.monotonic() + self.timeout
        self._waiting[rank] = awaited
        try:
            while not ready():
                if self._failure is not None:
                    raise _Aborted()
                if self._all_stuck():
                    self._failure = Deadlock(self._describe_deadlock())
                    self._cond.notify_all()
                    raise self._failure
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    self._failure = Deadlock(
                        f"rank {rank} waited {self.timeout:.1f}s for {awaited}; " + self._describe_deadlock()
                    )
                    self._cond.notify_all()
                    raise self._failure
                self._cond.wait(timeout=min(remaining, 1.0))
        finally:
            self._waiting.pop(rank, None)

    def _satisfiable(self, awaited) -> bool:
        if awaited[0] == BARRIER:
            return self._barrier_generation != awaited[1]
        return awaited in self._mailbox

    def _all_stuck(self) -> bool:
        if any(rank not in self._waiting for rank in self._alive):
            return False
        return not any(self._satisfiable(self._waiting[rank]) for rank in self._alive)

    def _describe_deadlock(self) -> str:
        pending = ", ".join(f"rank {r} awaits {self._waiting[r]}" for r in sorted(self._waiting))
        return f"no rank can progress ({pending or 'nothing pending'}); unmatched messages: {len(self._mailbox)}"

    def _finish(self, rank: int, error: Optional[Exception] = None) -> None:
        with self._cond:
            self._alive.discard(rank)
            if error is not None and self._failure is None:
                self._failure = error
            self._cond.notify_all()

    # --- Driver ---
    def run(self, program: Callable[[RankEndpoint], T]) -> List[T]:
        def body(endpoint: RankEndpoint) -> T:
            try:
                result = program(endpoint)
            except _Aborted:
                self._finish(endpoint.rank)
                raise
            except Exception as exc:
                if isinstance(exc, Deadlock):
                    self._finish(endpoint.rank, exc)
                    raise
                logger.debug("Rank %d raised %r", endpoint.rank, exc)
                panic = RankPanic(endpoint.rank, repr(exc))
                self._finish(endpoint.rank, panic)
                raise panic from exc
            self._finish(endpoint.rank)
            return result

        with ThreadPoolExecutor(max_workers=self.size, thread_name_prefix="rank") as pool:
            futures = [pool.submit(body, endpoint) for endpoint in self.endpoints]
            outcomes = []
            for future in futures:
                try:
                    outcomes.append(future.result())
                except Exception:
                    outcomes.append(None)

        if self._failure is not None:
            raise self._failure
        return outcomes

    def stats(self) -> TransportStats:
        return TransportStats(ranks=[endpoint.traffic() for endpoint in self.endpoints])


def spmd_run(
    grid: Union[ProcessGrid, int],
    program: Callable[[RankEndpoint], T],
    timeout: Optional[float] = None,
) -> Tuple[List[T], TransportStats]:
    """Runs ``program`` once per rank and returns per-rank results plus traffic counters."""
    if isinstance(grid, ProcessGrid):
        fabric = VirtualTransport(grid.size, grid=grid, timeout=timeout)
    else:
        fabric = VirtualTransport(int(grid), grid=ProcessGrid(rows=1, cols=int(grid)), timeout=timeout)
    results = fabric.run(program)
    stats = fabric.stats()
    metrics.record_transport(stats)
    if not stats.conserved:
        logger.warning("Byte conservation violated: sent %d, received %d", stats.total_sent, stats.total_received)
    return results, stats
