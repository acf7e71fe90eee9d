"""Guideline mock-ups: drop-in replacements built from other collectives.

Every mock-up draws its extra memory from a rank-local
:class:`ScratchBuffers` pair (message bytes and int slots) and reports its
requirement through :func:`extra_memory_required`.  The requirement is the
per-process maximum; a rank allocates only what it needs itself.
"""

from __future__ import annotations

import contextlib
import enum
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .collectives import (
    AlgorithmId,
    CollectiveCall,
    CollectiveKind,
    execute_collective,
    validate_call,
)
from .errors import InsufficientScratch, KindMismatch, UnknownMockup
from .runtime import INT_SIZE, Comm, Datatype, ReduceOp, reduce_local

K = CollectiveKind


class MockupId(enum.Enum):
    ALLGATHER_AS_GATHER_BCAST = "allgather_as_gather_bcast"
    ALLGATHER_AS_ALLTOALL = "allgather_as_alltoall"
    ALLGATHER_AS_ALLREDUCE = "allgather_as_allreduce"
    ALLGATHER_AS_ALLGATHERV = "allgather_as_allgatherv"
    ALLREDUCE_AS_REDUCE_BCAST = "allreduce_as_reduce_bcast"
    ALLREDUCE_AS_REDUCESCATTERBLOCK_ALLGATHER = "allreduce_as_reducescatterblock_allgather"
    ALLREDUCE_AS_REDUCESCATTER_ALLGATHERV = "allreduce_as_reducescatter_allgatherv"
    ALLTOALL_AS_ALLTOALLV = "alltoall_as_alltoallv"
    BCAST_AS_ALLGATHERV = "bcast_as_allgatherv"
    BCAST_AS_SCATTER_ALLGATHER = "bcast_as_scatter_allgather"
    GATHER_AS_ALLGATHER = "gather_as_allgather"
    GATHER_AS_GATHERV = "gather_as_gatherv"
    GATHER_AS_REDUCE = "gather_as_reduce"
    REDUCE_AS_ALLREDUCE = "reduce_as_allreduce"
    REDUCE_AS_REDUCESCATTERBLOCK_GATHER = "reduce_as_reducescatterblock_gather"
    REDUCE_AS_REDUCESCATTER_GATHERV = "reduce_as_reducescatter_gatherv"
    REDUCESCATTERBLOCK_AS_REDUCE_SCATTER = "reducescatterblock_as_reduce_scatter"
    REDUCESCATTERBLOCK_AS_REDUCESCATTER = "reducescatterblock_as_reducescatter"
    REDUCESCATTERBLOCK_AS_ALLREDUCE = "reducescatterblock_as_allreduce"
    SCAN_AS_EXSCAN_REDUCELOCAL = "scan_as_exscan_reducelocal"
    SCATTER_AS_BCAST = "scatter_as_bcast"
    SCATTER_AS_SCATTERV = "scatter_as_scatterv"

    @property
    def number(self) -> int:
        """Position of the guideline in the list of 22 (1-based)."""
        return _ORDER.index(self) + 1

    @property
    def lhs(self) -> CollectiveKind:
        return _LHS[self.value.split("_as_")[0]]

    @classmethod
    def parse(cls, name: str) -> "MockupId":
        try:
            return cls(name.strip())
        except ValueError:
            valid = ", ".join(m.value for m in cls)
            raise UnknownMockup(f"unknown mock-up {name!r}; valid: {valid}") from None


_ORDER = list(MockupId)
_LHS = {
    "allgather": K.ALLGATHER,
    "allreduce": K.ALLREDUCE,
    "alltoall": K.ALLTOALL,
    "bcast": K.BCAST,
    "gather": K.GATHER,
    "reduce": K.REDUCE,
    "reducescatterblock": K.REDUCE_SCATTER_BLOCK,
    "scan": K.SCAN,
    "scatter": K.SCATTER,
}


def mockups_for(kind: CollectiveKind) -> list[MockupId]:
    return [m for m in MockupId if m.lhs is kind]


def tunable_kinds() -> list[CollectiveKind]:
    """Collectives that appear on the left-hand side of some guideline."""
    seen: list[CollectiveKind] = []
    for m in MockupId:
        if m.lhs not in seen:
            seen.append(m.lhs)
    return seen


def local_id(mid: MockupId) -> int:
    """Profile-local id: 1 is the Default, mock-ups count up from 2."""
    return mockups_for(mid.lhs).index(mid) + 2


@dataclass(frozen=True)
class MockupConfig:
    chunk_size: int = 1

    def __post_init__(self):
        if self.chunk_size < 1:
            raise ValueError("chunk size must be >= 1")



@dataclass(frozen=True)
class MemoryRequirement:
    msg_bytes: int = 0
    int_elems: int = 0

    @property
    def int_bytes(self) -> int:
        return self.int_elems * INT_SIZE


def pad_count(n: int, p: int) -> int:
    """Smallest multiple of ``p`` that is >= ``n``."""
    if p < 1:
        raise ValueError("p must be >= 1")
    return n + (p - n % p) % p


def chunk_counts(n: int, p: int, chunk: int) -> list[int]:
    """Deal ``ceil(n/chunk)`` chunks round-robin over ``p`` ranks."""
    if chunk < 1:
        raise ValueError("chunk size must be >= 1")
    counts = [0] * p
    full, last = divmod(n, chunk)
    per, extra = divmod(full, p)
    for i in range(p):
        counts[i] = (per + (1 if i < extra else 0)) * chunk
    if last:
        counts[full % p] += last
    return counts


def chunk_bound(n: int, p: int, chunk: int) -> int:
    return max(n // p + chunk, chunk)


class ScratchBuffers:
    """Rank-local bump arenas for message bytes and int slots.

    Both arenas are allocated once.  Allocations made inside :meth:`frame`
    are released when the frame exits; high-water marks persist until
    :meth:`reset_high_water`.
    """

    def __init__(self, msg_capacity: int, int_capacity: int):
        if msg_capacity < 0 or int_capacity < 0:
            raise ValueError("arena capacities must be nonnegative")
        self.msg_capacity = msg_capacity
        self.int_capacity = int_capacity
        self._msg = np.zeros(msg_capacity, dtype=np.uint8)
        self._int = np.zeros(int_capacity, dtype=np.uint8)
        self._msg_top = 0
        self._int_top = 0
        self.msg_high_water = 0
        self.int_high_water = 0

    def fits(self, req: MemoryRequirement) -> bool:
        return req.msg_bytes <= self.msg_capacity and req.int_bytes <= self.int_capacity

    def reset_high_water(self) -> None:
        self.msg_high_water = self._msg_top
        self.int_high_water = self._int_top

    @contextlib.contextmanager
    def frame(self):
        msg_top, int_top = self._msg_top, self._int_top
        try:
            yield self
        finally:
            self._msg_top, self._int_top = msg_top, int_top

    def msg(self, count: int, dt: Datatype, zero: bool = False) -> np.ndarray:
        nbytes = count * dt.extent
        top = self._msg_top + nbytes
        if top > self.msg_capacity:
            raise InsufficientScratch(f"message arena exhausted ({top} > {self.msg_capacity} B)")
        raw = self._msg[self._msg_top:top]
        if zero:
            raw.fill(0)
        self._msg_top = top
        self.msg_high_water = max(self.msg_high_water, top)
        return raw.view(dt.np_dtype)

    def ints(self, count: int) -> np.ndarray:
        top = self._int_top + count * INT_SIZE
        if top > self.int_capacity:
            raise InsufficientScratch(f"int arena exhausted ({top} > {self.int_capacity} B)")
        raw = self._int[self._int_top:top]
        self._int_top = top
        self.int_high_water = max(self.int_high_water, top)
        return raw.view(np.int32)


M = MockupId


def extra_memory_required(mid: MockupId, call: CollectiveCall,
                          cfg: MockupConfig = MockupConfig()) -> MemoryRequirement:
    """Per-process maximum of extra scratch needed by ``mid`` for ``call``."""
    if call.kind is not mid.lhs:
        raise KindMismatch(f"{mid.value} replaces {mid.lhs.name}, not {call.kind.name}")
    n, p, e = call.n, call.p, call.extent
    padded = pad_count(n, p)
    others = p > 1  # rows that only charge non-root processes
    if mid in (M.ALLGATHER_AS_GATHER_BCAST, M.ALLREDUCE_AS_REDUCE_BCAST, M.SCAN_AS_EXSCAN_REDUCELOCAL):
        return MemoryRequirement()
    if mid in (M.ALLGATHER_AS_ALLTOALL, M.ALLGATHER_AS_ALLREDUCE, M.GATHER_AS_REDUCE):
        return MemoryRequirement(p * n * e)
    if mid in (M.ALLGATHER_AS_ALLGATHERV, M.ALLTOALL_AS_ALLTOALLV, M.GATHER_AS_GATHERV,
               M.SCATTER_AS_SCATTERV):
        return MemoryRequirement(0, 2 * p)
    if mid in (M.ALLREDUCE_AS_REDUCESCATTERBLOCK_ALLGATHER, M.BCAST_AS_SCATTER_ALLGATHER,
               M.REDUCE_AS_REDUCESCATTERBLOCK_GATHER):
        return MemoryRequirement((padded + padded // p) * e)
    if mid in (M.ALLREDUCE_AS_REDUCESCATTER_ALLGATHERV, M.REDUCE_AS_REDUCESCATTER_GATHERV):
        return MemoryRequirement(chunk_bound(n, p, cfg.chunk_size) * e, 2 * p)
    if mid is M.BCAST_AS_ALLGATHERV:
        return MemoryRequirement(n * e, 2 * p)
    if mid is M.GATHER_AS_ALLGATHER:
        return MemoryRequirement(p * n * e if others else 0)
    if mid in (M.REDUCE_AS_ALLREDUCE, M.SCATTER_AS_BCAST):
        return MemoryRequirement(n * e if others else 0)
    if mid in (M.REDUCESCATTERBLOCK_AS_REDUCE_SCATTER, M.REDUCESCATTERBLOCK_AS_ALLREDUCE):
        return MemoryRequirement(n * e)
    if mid is M.REDUCESCATTERBLOCK_AS_REDUCESCATTER:
        return MemoryRequirement(0, p)
    raise AssertionError(mid)


# ----------------------------------------------------------------------------
# mock-up bodies: generator functions (comm, call, send, recv, scratch, cfg, run)
# where ``run(call, send, recv)`` executes a Default collective


def _as_bytes(buf: np.ndarray | None) -> np.ndarray | None:
    return None if buf is None else buf.view(np.uint8)


def _fill_displs(counts: np.ndarray, displs: np.ndarray) -> None:
    displs[0] = 0
    if len(counts) > 1:
        np.cumsum(counts[:-1], out=displs[1:])


def _allgather_as_gather_bcast(comm, call, send, recv, scratch, cfg, run):
    n, p = call.n, call.p
    yield from run(call.with_(kind=K.GATHER, root=0), send, recv)
    yield from run(call.with_(kind=K.BCAST, n=p * n, root=0), None, recv)


def _allgather_as_alltoall(comm, call, send, recv, scratch, cfg, run):
    n, p = call.n, call.p
    big = scratch.msg(p * n, call.datatype)
    big.reshape(p, n)[...] = send
    yield from run(call.with_(kind=K.ALLTOALL), big, recv)


def _allgather_as_allreduce(comm, call, send, recv, scratch, cfg, run):
    n, p, e = call.n, call.p, call.extent
    big = scratch.msg(p * n, call.datatype, zero=True)
    big[comm.rank * n:(comm.rank + 1) * n] = send
    sub = CollectiveCall(K.ALLREDUCE, p * n * e, Datatype.BYTE, p, ReduceOp.BOR)
    yield from run(sub, _as_bytes(big), _as_bytes(recv))


def _regular_vectors(scratch, p: int, count: int):
    counts = scratch.ints(p)
    displs = scratch.ints(p)
    counts.fill(count)
    _fill_displs(counts, displs)
    return counts, displs


def _allgather_as_allgatherv(comm, call, send, recv, scratch, cfg, run):
    counts, displs = _regular_vectors(scratch, call.p, call.n)
    yield from run(call.with_(kind=K.ALLGATHERV, counts=counts, displs=displs), send, recv)


def _allreduce_as_reduce_bcast(comm, call, send, recv, scratch, cfg, run):
    yield from run(call.with_(kind=K.REDUCE, root=0), send, recv)
    yield from run(call.with_(kind=K.BCAST, op=None, root=0), None, recv)


def _padded_copy(scratch, call, send):
    padded = scratch.msg(pad_count(call.n, call.p), call.datatype)
    padded[:call.n] = send
    padded[call.n:] = 0
    return padded


def _allreduce_as_rsb_allgather(comm, call, send, recv, scratch, cfg, run):
    p = call.p
    padded = _padded_copy(scratch, call, send)
    block = scratch.msg(len(padded) // p, call.datatype)
    yield from run(call.with_(kind=K.REDUCE_SCATTER_BLOCK, n=len(padded)), padded, block)
    yield from run(call.with_(kind=K.ALLGATHER, n=len(block), op=None), block, padded)
    recv[...] = padded[:call.n]


def _allreduce_as_rs_allgatherv(comm, call, send, recv, scratch, cfg, run):
    counts, displs, block = _chunked_setup(comm, call, scratch, cfg)
    yield from run(call.with_(kind=K.REDUCE_SCATTER, counts=counts, displs=displs), send, block)
    yield from run(call.with_(kind=K.ALLGATHERV, op=None, counts=counts, displs=displs),
                   block, recv)


def _chunked_setup(comm, call, scratch, cfg):
    n, p = call.n, call.p
    chunk = cfg.chunk_size
    counts = scratch.ints(p)
    displs = scratch.ints(p)
    counts[...] = chunk_counts(n, p, chunk)
    _fill_displs(counts, displs)
    block = scratch.msg(chunk_bound(n, p, chunk), call.datatype)
    return counts, displs, block[:int(counts[comm.rank])]


def _alltoall_as_alltoallv(comm, call, send, recv, scratch, cfg, run):
    counts, displs = _regular_vectors(scratch, call.p, call.n)
    yield from run(call.with_(kind=K.ALLTOALLV, counts=counts, displs=displs), send, recv)


def _bcast_as_allgatherv(comm, call, send, recv, scratch, cfg, run):
    n, p, root = call.n, call.p, call.root
    counts = scratch.ints(p)
    displs = scratch.ints(p)
    counts.fill(0)
    counts[root] = n
    displs.fill(0)
    sub = call.with_(kind=K.ALLGATHERV, counts=counts, displs=displs)
    if comm.rank == root:
        # the root's send and receive buffers must not alias
        yield from run(sub, recv, scratch.msg(n, call.datatype))
    else:
        yield from run(sub, recv[:0], recv)


def _bcast_as_scatter_allgather(comm, call, send, recv, scratch, cfg, run):
    n, p, root = call.n, call.p, call.root
    padded = scratch.msg(pad_count(n, p), call.datatype)
    block = scratch.msg(len(padded) // p, call.datatype)
    if comm.rank == root:
        padded[:n] = recv
        padded[n:] = 0
    yield from run(call.with_(kind=K.SCATTER, n=len(padded)), padded, block)
    yield from run(call.with_(kind=K.ALLGATHER, n=len(block)), block, padded)
    if comm.rank != root:
        recv[...] = padded[:n]


def _gather_as_allgather(comm, call, send, recv, scratch, cfg, run):
    if comm.rank != call.root:
        recv = scratch.msg(call.p * call.n, call.datatype)
    yield from run(call.with_(kind=K.ALLGATHER), send, recv)


def _gather_as_gatherv(comm, call, send, recv, scratch, cfg, run):
    counts, displs = _regular_vectors(scratch, call.p, call.n)
    yield from run(call.with_(kind=K.GATHERV, counts=counts, displs=displs), send, recv)


def _gather_as_reduce(comm, call, send, recv, scratch, cfg, run):
    n, p, e = call.n, call.p, call.extent
    big = scratch.msg(p * n, call.datatype, zero=True)
    big[comm.rank * n:(comm.rank + 1) * n] = send
    sub = CollectiveCall(K.REDUCE, p * n * e, Datatype.BYTE, p, ReduceOp.BOR, call.root)
    yield from run(sub, _as_bytes(big), _as_bytes(recv))


def _reduce_as_allreduce(comm, call, send, recv, scratch, cfg, run):
    if comm.rank != call.root:
        recv = scratch.msg(call.n, call.datatype)
    yield from run(call.with_(kind=K.ALLREDUCE), send, recv)


def _reduce_as_rsb_gather(comm, call, send, recv, scratch, cfg, run):
    p, root = call.p, call.root
    padded = _padded_copy(scratch, call, send)
    block = scratch.msg(len(padded) // p, call.datatype)
    yield from run(call.with_(kind=K.REDUCE_SCATTER_BLOCK, n=len(padded)), padded, block)
    yield from run(call.with_(kind=K.GATHER, n=len(block), op=None), block,
                   padded if comm.rank == root else None)
    if comm.rank == root:
        recv[...] = padded[:call.n]


def _reduce_as_rs_gatherv(comm, call, send, recv, scratch, cfg, run):
    counts, displs, block = _chunked_setup(comm, call, scratch, cfg)
    yield from run(call.with_(kind=K.REDUCE_SCATTER, counts=counts, displs=displs), send, block)
    yield from run(call.with_(kind=K.GATHERV, op=None, counts=counts, displs=displs), block, recv)


def _rsb_as_reduce_scatter(comm, call, send, recv, scratch, cfg, run):
    tmp = scratch.msg(call.n, call.datatype) if comm.rank == 0 else None
    yield from run(call.with_(kind=K.REDUCE, root=0), send, tmp)
    yield from run(call.with_(kind=K.SCATTER, op=None, root=0), tmp, recv)


def _rsb_as_reducescatter(comm, call, send, recv, scratch, cfg, run):
    counts = scratch.ints(call.p)
    counts.fill(call.n // call.p)
    yield from run(call.with_(kind=K.REDUCE_SCATTER, counts=counts), send, recv)


def _rsb_as_allreduce(comm, call, send, recv, scratch, cfg, run):
    b = call.n // call.p
    tmp = scratch.msg(call.n, call.datatype)
    yield from run(call.with_(kind=K.ALLREDUCE), send, tmp)
    recv[...] = tmp[comm.rank * b:(comm.rank + 1) * b]


def _scan_as_exscan_reducelocal(comm, call, send, recv, scratch, cfg, run):
    yield from run(call.with_(kind=K.EXSCAN), send, recv)
    if comm.rank == 0:
        recv[...] = send
    else:
        reduce_local(call.op, call.datatype, send, recv, call.n, comm)


def _scatter_as_bcast(comm, call, send, recv, scratch, cfg, run):
    n, p, root = call.n, call.p, call.root
    b = n // p
    buf = send if comm.rank == root else scratch.msg(n, call.datatype)
    yield from run(call.with_(kind=K.BCAST), None, buf)
    recv[...] = buf[comm.rank * b:(comm.rank + 1) * b]


def _scatter_as_scatterv(comm, call, send, recv, scratch, cfg, run):
    counts, displs = _regular_vectors(scratch, call.p, call.n // call.p)
    yield from run(call.with_(kind=K.SCATTERV, counts=counts, displs=displs), send, recv)


_BODIES = {
    M.ALLGATHER_AS_GATHER_BCAST: _allgather_as_gather_bcast,
    M.ALLGATHER_AS_ALLTOALL: _allgather_as_alltoall,
    M.ALLGATHER_AS_ALLREDUCE: _allgather_as_allreduce,
    M.ALLGATHER_AS_ALLGATHERV: _allgather_as_allgatherv,
    M.ALLREDUCE_AS_REDUCE_BCAST: _allreduce_as_reduce_bcast,
    M.ALLREDUCE_AS_REDUCESCATTERBLOCK_ALLGATHER: _allreduce_as_rsb_allgather,
    M.ALLREDUCE_AS_REDUCESCATTER_ALLGATHERV: _allreduce_as_rs_allgatherv,
    M.ALLTOALL_AS_ALLTOALLV: _alltoall_as_alltoallv,
    M.BCAST_AS_ALLGATHERV: _bcast_as_allgatherv,
    M.BCAST_AS_SCATTER_ALLGATHER: _bcast_as_scatter_allgather,
    M.GATHER_AS_ALLGATHER: _gather_as_allgather,
    M.GATHER_AS_GATHERV: _gather_as_gatherv,
    M.GATHER_AS_REDUCE: _gather_as_reduce,
    M.REDUCE_AS_ALLREDUCE: _reduce_as_allreduce,
    M.REDUCE_AS_REDUCESCATTERBLOCK_GATHER: _reduce_as_rsb_gather,
    M.REDUCE_AS_REDUCESCATTER_GATHERV: _reduce_as_rs_gatherv,
    M.REDUCESCATTERBLOCK_AS_REDUCE_SCATTER: _rsb_as_reduce_scatter,
    M.REDUCESCATTERBLOCK_AS_REDUCESCATTER: _rsb_as_reducescatter,
    M.REDUCESCATTERBLOCK_AS_ALLREDUCE: _rsb_as_allreduce,
    M.SCAN_AS_EXSCAN_REDUCELOCAL: _scan_as_exscan_reducelocal,
    M.SCATTER_AS_BCAST: _scatter_as_bcast,
    M.SCATTER_AS_SCATTERV: _scatter_as_scatterv,
}


def execute_mockup(comm: Comm, mid: MockupId, call: CollectiveCall, send, recv,
                   scratch: ScratchBuffers, cfg: MockupConfig = MockupConfig(),
                   defaults: Mapping[CollectiveKind, AlgorithmId] | None = None):
    """Run mock-up ``mid`` in place of ``call`` (generator; use ``yield from``).

    Raises :class:`InsufficientScratch` before touching any buffer when the
    requirement does not fit the arenas.  The decision depends only on the
    call and the capacities, so all ranks raise together.
    """
    if call.kind is not mid.lhs:
        raise KindMismatch(f"{mid.value} replaces {mid.lhs.name}, not {call.kind.name}")
    validate_call(call)
    req = extra_memory_required(mid, call, cfg)
    if not scratch.fits(req):
        raise InsufficientScratch(
            f"{mid.value} needs {req.msg_bytes} B + {req.int_elems} ints, arenas hold "
            f"{scratch.msg_capacity} B + {scratch.int_capacity // INT_SIZE} ints")

    def run(sub: CollectiveCall, s, r):
        alg = defaults.get(sub.kind) if defaults else None
        return execute_collective(comm, sub, alg, s, r)

    with scratch.frame():
        yield from _BODIES[mid](comm, call, send, recv, scratch, cfg, run)
