"""In-memory message-passing runtime with a deterministic virtual clock.

Rank programs are generator functions taking a :class:`Comm`.  Sends are
plain calls; receives are ``payload = yield from comm.recv(src)``.  The same
program runs unchanged under the single-threaded virtual-time scheduler or
with one thread per rank in wall-clock mode.

Timing model (virtual mode, all times are integer nanoseconds):

* a message of ``m`` bytes costs ``hop = alpha*(1 + jitter) + beta*m``;
* a send never advances the sender clock, but each rank has a single
  injection port, so consecutive sends leave at
  ``max(sender_clock, port_free)`` and occupy the port for ``hop``;
* a receive sets the receiver clock to ``max(clock, arrival)``;
* local reductions charge ``gamma`` per byte to the calling rank.
"""

from __future__ import annotations

import collections
import enum
import hashlib
import inspect
import queue
import random
import struct
import threading
import time
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Any, Callable, Generator

import numpy as np

from .errors import Deadlock, OpDatatypeMismatch, RankPanic, SizeMismatch, UnknownRank

__all__ = [
    "Datatype",
    "ReduceOp",
    "CostModel",
    "Comm",
    "SpmdResult",
    "run_spmd",
    "dissemination_barrier",
    "barrier_rounds",
    "reduce_local",
    "INT_SIZE",
]

Program = Callable[["Comm"], Any]


class Datatype(enum.Enum):
    """Base datatypes; the value is the extent in bytes."""

    BYTE = 1
    INT32 = 4
    FLOAT64 = 8

    @property
    def extent(self) -> int:
        return self.value

    @property
    def np_dtype(self) -> np.dtype:
        return _NP_DTYPES[self]


_NP_DTYPES = {
    Datatype.BYTE: np.dtype(np.uint8),
    Datatype.INT32: np.dtype(np.int32),
    Datatype.FLOAT64: np.dtype(np.float64),
}

# size of one slot in the integer scratch arena (counts / displacements)
INT_SIZE = Datatype.INT32.extent


class ReduceOp(enum.Enum):
    SUM = "sum"
    MAX = "max"
    BOR = "bor"

    @property
    def associative(self) -> bool:
        return True

    @property
    def commutative(self) -> bool:
        return True

    def supports(self, dt: Datatype) -> bool:
        if self is ReduceOp.BOR:
            return True
        return dt in (Datatype.INT32, Datatype.FLOAT64)


def check_op(op: ReduceOp, dt: Datatype) -> None:
    if not op.supports(dt):
        raise OpDatatypeMismatch(f"{op.name} is not defined on {dt.name}")


def reduce_local(op: ReduceOp, dt: Datatype, inbuf, inout: np.ndarray, count: int,
                 comm: "Comm | None" = None) -> None:
    """``inout[i] = op(inbuf[i], inout[i])`` for the first ``count`` elements.

    ``inbuf`` may be an array or a raw byte payload.  When ``comm`` is given
    the local computation is charged to its clock.
    """
    check_op(op, dt)
    if isinstance(inbuf, (bytes, bytearray, memoryview)):
        inbuf = np.frombuffer(inbuf, dtype=dt.np_dtype)
    if len(inbuf) < count or len(inout) < count:
        raise SizeMismatch(f"reduce_local needs {count} elements")
    a = inbuf[:count]
    b = inout[:count]
    if op is ReduceOp.SUM:
        np.add(a, b, out=b)
    elif op is ReduceOp.MAX:
        np.maximum(a, b, out=b)
    else:
        bb = b.view(np.uint8)
        np.bitwise_or(a.view(np.uint8), bb, out=bb)
    if comm is not None:
        comm.compute(count * dt.extent)


def _exact(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, int):
        return Fraction(x)
    return Fraction(repr(float(x)))


@dataclass(frozen=True)
class CostModel:
    """Hockney-style point-to-point cost model plus seeded jitter."""

    alpha_us: float = 2.0
    beta_us_per_byte: float = 0.001
    gamma_us_per_byte: float = 0.0
    jitter_fraction: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name in ("alpha_us", "beta_us_per_byte", "gamma_us_per_byte", "jitter_fraction"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")

    @cached_property
    def _alpha_ns(self) -> Fraction:
        return _exact(self.alpha_us) * 1000

    @cached_property
    def _beta_ns(self) -> Fraction:
        return _exact(self.beta_us_per_byte) * 1000

    @cached_property
    def _gamma_ns(self) -> Fraction:
        return _exact(self.gamma_us_per_byte) * 1000

    @cached_property
    def alpha_ns(self) -> int:
        return round(self._alpha_ns)

    def wire_ns(self, nbytes: int) -> int:
        return round(self._beta_ns * nbytes)

    def hop_ns(self, nbytes: int, jitter: float = 0.0) -> int:
        """Cost of one message; ``jitter`` is the multiplicative sample on alpha."""
        if jitter:
            a = round(float(self._alpha_ns) * (1.0 + jitter))
        else:
            a = self.alpha_ns
        return a + self.wire_ns(nbytes)

    def compute_ns(self, nbytes: int) -> int:
        return round(self._gamma_ns * nbytes)

    def jitter_sample(self, src: int, dst: int, ordinal: int) -> float:
        """Deterministic draw in ``[0, jitter_fraction)`` keyed by the message."""
        if not self.jitter_fraction:
            return 0.0
        key = struct.pack("<QIIQ", self.seed & 0xFFFFFFFFFFFFFFFF, src, dst, ordinal)
        u = int.from_bytes(hashlib.blake2b(key, digest_size=8).digest(), "little")
        return self.jitter_fraction * (u / 2.0**64)


def barrier_rounds(p: int) -> int:
    return (p - 1).bit_length()


@dataclass
class SpmdResult:
    outputs: list
    elapsed_ns: list[int]
    messages: int = 0
    bytes_sent: int = 0

    @property
    def elapsed_us(self) -> list[float]:
        return [t / 1000 for t in self.elapsed_ns]

    @property
    def max_elapsed_ns(self) -> int:
        return max(self.elapsed_ns)


_RECV = "recv"
_SYNC = "sync"


class Comm:
    """Per-rank handle passed to rank programs."""

    __slots__ = ("rank", "size", "_world")

    def __init__(self, rank: int, size: int, world):
        self.rank = rank
        self.size = size
        self._world = world

    @property
    def virtual(self) -> bool:
        return self._world.virtual

    def send(self, dst: int, payload) -> None:
        self._world.send(self.rank, dst, bytes(payload))

    def recv(self, src: int) -> Generator[Any, Any, bytes]:
        return self._world.recv(self.rank, src)

    def now(self) -> int:
        return self._world.now(self.rank)

    def compute(self, nbytes: int) -> None:
        self._world.compute(self.rank, nbytes)

    def sync(self):
        """Align all clocks to the latest one (virtual mode only)."""
        return self._world.sync(self.rank)


class _VirtualWorld:
    virtual = True

    def __init__(self, p: int, model: CostModel):
        self.p = p
        self.model = model
        self.clock = [0] * p
        self.port = [0] * p
        self.queues: dict[tuple[int, int], collections.deque] = {}
        self.ordinal: dict[tuple[int, int], int] = {}
        self.waiting: list[int | None] = [None] * p
        self.ready: collections.deque[int] = collections.deque()
        self.at_sync: list[int] = []
        self.messages = 0
        self.bytes_sent = 0
        self._hops: dict[int, int] = {}

    def _check(self, r: int) -> None:
        if not 0 <= r < self.p:
            raise UnknownRank(f"rank {r} not in group of size {self.p}")

    def send(self, src: int, dst: int, payload: bytes) -> None:
        self._check(dst)
        if src == dst:
            raise UnknownRank("send to self")
        key = (src, dst)
        n = len(payload)
        if self.model.jitter_fraction:
            k = self.ordinal.get(key, 0)
            self.ordinal[key] = k + 1
            hop = self.model.hop_ns(n, self.model.jitter_sample(src, dst, k))
        else:
            hop = self._hops.get(n)
            if hop is None:
                hop = self._hops[n] = self.model.hop_ns(n)
        depart = self.clock[src]
        if self.port[src] > depart:
            depart = self.port[src]
        arrival = depart + hop
        self.port[src] = arrival
        q = self.queues.get(key)
        if q is None:
            q = self.queues[key] = collections.deque()
        q.append((arrival, payload))
        self.messages += 1
        self.bytes_sent += n
        if self.waiting[dst] == src:
            self.waiting[dst] = None
            self.ready.append(dst)

    def recv(self, dst: int, src: int):
        self._check(src)
        if src == dst:
            raise UnknownRank("receive from self")
        q = self.queues.get((src, dst))
        if not q:
            yield (_RECV, src)
            q = self.queues[(src, dst)]
        arrival, payload = q.popleft()
        if arrival > self.clock[dst]:
            self.clock[dst] = arrival
        return payload

    def now(self, r: int) -> int:
        return self.clock[r]

    def compute(self, r: int, nbytes: int) -> None:
        self.clock[r] += self.model.compute_ns(nbytes)

    def sync(self, r: int):
        yield (_SYNC, None)

    def run(self, program: Program, rng: random.Random | None) -> SpmdResult:
        p = self.p
        gens: list[Any] = [None] * p
        outputs: list[Any] = [None] * p
        done = [False] * p
        for r in range(p):
            g = program(Comm(r, p, self))
            if inspect.isgenerator(g):
                gens[r] = g
                self.ready.append(r)
            else:
                outputs[r] = g
                done[r] = True
        ndone = sum(done)
        ready = self.ready
        while ready:
            if rng is not None and len(ready) > 1:
                i = rng.randrange(len(ready))
                ready.rotate(-i)
            r = ready.popleft()
            try:
                req = gens[r].send(None)
            except StopIteration as stop:
                outputs[r] = stop.value
                done[r] = True
                ndone += 1
                continue
            except Exception as exc:  # noqa: BLE001 - re-raised as RankPanic
                raise RankPanic(r, exc) from exc
            kind, src = req
            if kind == _RECV:
                if self.queues.get((src, r)):
                    ready.append(r)
                else:
                    self.waiting[r] = src
            else:
                self.at_sync.append(r)
                if len(self.at_sync) == p:
                    t = max(self.clock)
                    self.clock = [t] * p
                    ready.extend(sorted(self.at_sync))
                    self.at_sync = []
        if ndone != p:
            blocked = {r: self.waiting[r] for r in range(p) if not done[r]}
            raise Deadlock(f"ranks blocked (rank: awaited source): {blocked}")
        return SpmdResult(outputs, list(self.clock), self.messages, self.bytes_sent)


class _WallclockWorld:
    virtual = False

    def __init__(self, p: int, timeout: float):
        self.p = p
        self.timeout = timeout
        self.queues = {(s, d): queue.SimpleQueue() for s in range(p) for d in range(p) if s != d}
        self.lock = threading.Lock()
        self.messages = 0
        self.bytes_sent = 0

    def send(self, src: int, dst: int, payload: bytes) -> None:
        if not 0 <= dst < self.p or src == dst:
            raise UnknownRank(f"invalid destination {dst}")
        with self.lock:
            self.messages += 1
            self.bytes_sent += len(payload)
        self.queues[(src, dst)].put(payload)

    def recv(self, dst: int, src: int):
        if not 0 <= src < self.p or src == dst:
            raise UnknownRank(f"invalid source {src}")
        try:
            return self.queues[(src, dst)].get(timeout=self.timeout)
        except queue.Empty:
            raise Deadlock(f"rank {dst} waited {self.timeout}s for rank {src}") from None
        yield  # pragma: no cover - makes this a generator

    def now(self, r: int) -> int:
        return time.perf_counter_ns()

    def compute(self, r: int, nbytes: int) -> None:
        pass

    def sync(self, r: int):
        return
        yield  # pragma: no cover

    def run(self, program: Program) -> SpmdResult:
        p = self.p
        outputs: list[Any] = [None] * p
        elapsed = [0] * p
        errors: list[BaseException | None] = [None] * p

        def drive(r: int) -> None:
            t0 = time.perf_counter_ns()
            try:
                g = program(Comm(r, p, self))
                if inspect.isgenerator(g):
                    try:
                        while True:
                            g.send(None)
                    except StopIteration as stop:
                        outputs[r] = stop.value
                else:
                    outputs[r] = g
            except BaseException as exc:  # noqa: BLE001
                errors[r] = exc
            elapsed[r] = time.perf_counter_ns() - t0

        threads = [threading.Thread(target=drive, args=(r,), daemon=True) for r in range(p)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        for r, exc in enumerate(errors):
            if exc is None:
                continue
            if isinstance(exc, Deadlock):
                raise exc
            raise RankPanic(r, exc) from exc
        return SpmdResult(outputs, elapsed, self.messages, self.bytes_sent)


def run_spmd(p: int, program: Program, model: CostModel | None = None, mode: str = "virtual",
             *, schedule_rng: random.Random | None = None, timeout: float = 30.0) -> SpmdResult:
    """Run ``program`` on ``p`` ranks and collect outputs and elapsed times.

    ``schedule_rng`` randomizes the order in which runnable ranks are
    resumed; virtual timings do not depend on it.
    """
    if p < 1:
        raise ValueError("p must be >= 1")
    if mode == "virtual":
        return _VirtualWorld(p, model or CostModel()).run(program, schedule_rng)
    if mode == "wallclock":
        return _WallclockWorld(p, timeout).run(program)
    raise ValueError(f"unknown mode {mode!r}")


def dissemination_barrier(comm: Comm):
    """Dissemination barrier: ceil(log2 p) rounds of zero-byte tokens.

    In virtual mode the exit clocks are aligned afterwards, so every rank
    leaves the barrier at the same instant.
    """
    p, r = comm.size, comm.rank
    dist = 1
    while dist < p:
        comm.send((r + dist) % p, b"")
        yield from comm.recv((r - dist) % p)
        dist <<= 1
    yield from comm.sync()
