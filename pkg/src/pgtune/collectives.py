"""Default collective algorithms and the sequential reference oracle.

Buffers are 1-D numpy arrays of the call's datatype.  Count conventions
(``n`` is ``CollectiveCall.n``):

==========================  ===================  ======================
kind                        send                 recv
==========================  ===================  ======================
BCAST                       unused               buffer, n (all ranks)
GATHER                      n                    p*n (root)
SCATTER                     n (root, n % p == 0) n/p
ALLGATHER                   n                    p*n
ALLTOALL                    p*n                  p*n
REDUCE                      n                    n (root)
ALLREDUCE                   n                    n
REDUCE_SCATTER_BLOCK        n (n % p == 0)       n/p
REDUCE_SCATTER              n == sum(counts)     counts[rank]
SCAN / EXSCAN               n                    n
GATHERV                     counts[rank]         by counts/displs (root)
SCATTERV                    by counts/displs     counts[rank]
ALLGATHERV                  counts[rank]         by counts/displs
ALLTOALLV                   by counts/displs     by counts/displs
==========================  ===================  ======================

ALLTOALLV uses the same ``counts``/``displs`` vector for the send and the
receive side, which requires all counts to be equal.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Any, Callable, Sequence

import numpy as np

from .errors import ConfigError, OpDatatypeMismatch, RootOutOfRange, SizeMismatch, UnknownCollective
from .runtime import Comm, Datatype, ReduceOp, check_op, reduce_local


class CollectiveKind(enum.Enum):
    BCAST = "MPI_Bcast"
    GATHER = "MPI_Gather"
    GATHERV = "MPI_Gatherv"
    SCATTER = "MPI_Scatter"
    SCATTERV = "MPI_Scatterv"
    ALLGATHER = "MPI_Allgather"
    ALLGATHERV = "MPI_Allgatherv"
    ALLTOALL = "MPI_Alltoall"
    ALLTOALLV = "MPI_Alltoallv"
    REDUCE = "MPI_Reduce"
    ALLREDUCE = "MPI_Allreduce"
    REDUCE_SCATTER = "MPI_Reduce_scatter"
    REDUCE_SCATTER_BLOCK = "MPI_Reduce_scatter_block"
    SCAN = "MPI_Scan"
    EXSCAN = "MPI_Exscan"

    @property
    def mpi_name(self) -> str:
        return self.value

    @property
    def cli_name(self) -> str:
        return self.name.lower()

    @property
    def rooted(self) -> bool:
        return self in _ROOTED

    @property
    def reduction(self) -> bool:
        return self in _REDUCTIONS

    @property
    def irregular(self) -> bool:
        return self in _IRREGULAR

    @classmethod
    def parse(cls, name: str) -> "CollectiveKind":
        key = name.strip()
        for kind in cls:
            if key.lower() in (kind.cli_name, kind.mpi_name.lower()):
                return kind
        valid = ", ".join(k.cli_name for k in cls)
        raise UnknownCollective(f"unknown collective {name!r}; valid: {valid}")


_ROOTED = {CollectiveKind.BCAST, CollectiveKind.GATHER, CollectiveKind.GATHERV,
           CollectiveKind.SCATTER, CollectiveKind.SCATTERV, CollectiveKind.REDUCE}
_REDUCTIONS = {CollectiveKind.REDUCE, CollectiveKind.ALLREDUCE, CollectiveKind.REDUCE_SCATTER,
               CollectiveKind.REDUCE_SCATTER_BLOCK, CollectiveKind.SCAN, CollectiveKind.EXSCAN}
_IRREGULAR = {CollectiveKind.GATHERV, CollectiveKind.SCATTERV, CollectiveKind.ALLGATHERV,
              CollectiveKind.ALLTOALLV, CollectiveKind.REDUCE_SCATTER}


@dataclass(frozen=True, eq=False)
class CollectiveCall:
    """One collective invocation as seen by every rank."""

    kind: CollectiveKind
    n: int
    datatype: Datatype
    p: int
    op: ReduceOp | None = None
    root: int = 0
    counts: Sequence[int] | None = None
    displs: Sequence[int] | None = None

    @property
    def extent(self) -> int:
        return self.datatype.extent

    @property
    def msize_bytes(self) -> int:
        """Per-process message size used to key benchmarks and profiles."""
        if self.kind in (CollectiveKind.SCATTER, CollectiveKind.REDUCE_SCATTER_BLOCK):
            return self.n // self.p * self.extent
        return self.n * self.extent

    def with_(self, **changes) -> "CollectiveCall":
        fields = dict(kind=self.kind, n=self.n, datatype=self.datatype, p=self.p, op=self.op,
                      root=self.root, counts=self.counts, displs=self.displs)
        fields.update(changes)
        return CollectiveCall(**fields)


def call_for_msize(kind: CollectiveKind, msize: int, p: int, datatype: Datatype = Datatype.BYTE,
                   op: ReduceOp | None = ReduceOp.BOR, root: int = 0) -> CollectiveCall:
    """Build the regular call whose per-process message size is ``msize`` bytes."""
    if msize % datatype.extent:
        raise SizeMismatch(f"{msize} B is not a multiple of the {datatype.name} extent")
    n = msize // datatype.extent
    if kind in (CollectiveKind.SCATTER, CollectiveKind.REDUCE_SCATTER_BLOCK):
        n *= p
    counts = displs = None
    if kind.irregular:
        counts = list(balanced_counts(n, p)) if kind is CollectiveKind.REDUCE_SCATTER else [n] * p
        displs = list(np.cumsum([0] + counts[:-1]))
    return CollectiveCall(kind, n, datatype, p, op if kind.reduction else None, root,
                          counts, displs)


def balanced_counts(n: int, p: int) -> list[int]:
    q, r = divmod(n, p)
    return [q + (1 if i < r else 0) for i in range(p)]


@dataclass(frozen=True)
class AlgorithmId:
    kind: CollectiveKind
    variant: str

    def __str__(self) -> str:
        return f"{self.kind.name}:{self.variant}"

    @classmethod
    def parse(cls, text: str) -> "AlgorithmId":
        kind, _, variant = text.partition(":")
        alg = cls(CollectiveKind.parse(kind), variant.strip())
        if (alg.kind, alg.variant) not in _ALGORITHMS:
            valid = ", ".join(v for k, v in _ALGORITHMS if k is alg.kind)
            raise ConfigError(f"unknown algorithm {text!r}; valid variants: {valid}")
        return alg


# ----------------------------------------------------------------------------
# validation


def _expect(buf, length: int, what: str) -> None:
    if buf is None:
        raise SizeMismatch(f"{what} buffer missing")
    if len(buf) != length:
        raise SizeMismatch(f"{what} buffer holds {len(buf)} elements, expected {length}")


def _vector(values, p: int, what: str) -> list[int]:
    if values is None or len(values) != p:
        raise SizeMismatch(f"{what} must have {p} entries")
    out = [int(v) for v in values]
    if any(v < 0 for v in out):
        raise SizeMismatch(f"negative entry in {what}")
    return out


def validate_call(call: CollectiveCall) -> None:
    kind, p = call.kind, call.p
    if p < 1:
        raise SizeMismatch("group size must be positive")
    if call.n < 0:
        raise SizeMismatch("negative count")
    if kind.rooted and not 0 <= call.root < p:
        raise RootOutOfRange(f"root {call.root} outside 0..{p - 1}")
    if kind.reduction:
        if call.op is None:
            raise OpDatatypeMismatch(f"{kind.name} requires a reduction op")
        check_op(call.op, call.datatype)
    if kind in (CollectiveKind.SCATTER, CollectiveKind.REDUCE_SCATTER_BLOCK) and call.n % p:
        raise SizeMismatch(f"{kind.name} count {call.n} not divisible by p={p}")
    if kind.irregular:
        counts = _vector(call.counts, p, "counts")
        if kind is CollectiveKind.REDUCE_SCATTER:
            if sum(counts) != call.n:
                raise SizeMismatch("reduce_scatter counts must sum to n")
        else:
            _vector(call.displs, p, "displs")
        if kind is CollectiveKind.ALLTOALLV and len(set(counts)) > 1:
            raise SizeMismatch("alltoallv counts must be uniform")


def _v_extent(call: CollectiveCall) -> int:
    """Length of the buffer addressed by counts/displs."""
    return max((int(d) + int(c) for c, d in zip(call.counts, call.displs)), default=0)


def buffer_sizes(call: CollectiveCall, rank: int) -> tuple[int | None, int | None]:
    """Element counts of (send, recv) on ``rank``; None where not significant."""
    k, n, p = call.kind, call.n, call.p
    is_root = rank == call.root
    if k is CollectiveKind.BCAST:
        return None, n
    if k is CollectiveKind.GATHER:
        return n, (p * n if is_root else None)
    if k is CollectiveKind.SCATTER:
        return (n if is_root else None), n // p
    if k is CollectiveKind.ALLGATHER:
        return n, p * n
    if k is CollectiveKind.ALLTOALL:
        return p * n, p * n
    if k is CollectiveKind.REDUCE:
        return n, (n if is_root else None)
    if k in (CollectiveKind.ALLREDUCE, CollectiveKind.SCAN):
        return n, n
    if k is CollectiveKind.EXSCAN:
        return n, (n if rank > 0 else None)
    if k is CollectiveKind.REDUCE_SCATTER_BLOCK:
        return n, n // p
    if k is CollectiveKind.REDUCE_SCATTER:
        return n, int(call.counts[rank])
    if k is CollectiveKind.GATHERV:
        return int(call.counts[rank]), (_v_extent(call) if is_root else None)
    if k is CollectiveKind.SCATTERV:
        return (_v_extent(call) if is_root else None), int(call.counts[rank])
    if k is CollectiveKind.ALLGATHERV:
        return int(call.counts[rank]), _v_extent(call)
    if k is CollectiveKind.ALLTOALLV:
        return _v_extent(call), _v_extent(call)
    raise AssertionError(k)


# ----------------------------------------------------------------------------
# helpers


def _put(dst: np.ndarray, payload: bytes) -> None:
    src = np.frombuffer(payload, dtype=dst.dtype)
    if len(src) != len(dst):
        raise SizeMismatch(f"received {len(src)} elements into a slot of {len(dst)}")
    dst[...] = src


def _block(buf: np.ndarray, i: int, n: int) -> np.ndarray:
    return buf[i * n:(i + 1) * n]


# ----------------------------------------------------------------------------
# algorithms: generator functions (comm, call, send, recv)


def bcast_linear(comm: Comm, call: CollectiveCall, send, recv):
    p, r, root = comm.size, comm.rank, call.root
    if r == root:
        data = recv.tobytes()
        for k in range(1, p):
            comm.send((root + k) % p, data)
    else:
        _put(recv, (yield from comm.recv(root)))


def bcast_binomial(comm: Comm, call: CollectiveCall, send, recv):
    p, r, root = comm.size, comm.rank, call.root
    vr = (r - root) % p
    mask = 1
    while mask < p:
        if vr & mask:
            _put(recv, (yield from comm.recv((r - mask) % p)))
            break
        mask <<= 1
    mask >>= 1
    data = recv.tobytes()
    while mask > 0:
        if vr + mask < p:
            comm.send((r + mask) % p, data)
        mask >>= 1


def gather_linear(comm: Comm, call: CollectiveCall, send, recv):
    p, r, root, n = comm.size, comm.rank, call.root, call.n
    if r != root:
        comm.send(root, send.tobytes())
        return
    _block(recv, root, n)[...] = send
    for src in range(p):
        if src != root:
            _put(_block(recv, src, n), (yield from comm.recv(src)))


def gather_binomial(comm: Comm, call: CollectiveCall, send, recv):
    p, r, root, n = comm.size, comm.rank, call.root, call.n
    vr = (r - root) % p
    tmp = np.empty(p * n, dtype=send.dtype)
    tmp[:n] = send
    held = 1
    mask = 1
    while mask < p:
        if vr & mask:
            comm.send((r - mask) % p, tmp[:held * n].tobytes())
            return
        child = vr + mask
        if child < p:
            cnt = min(mask, p - child)
            _put(tmp[mask * n:(mask + cnt) * n], (yield from comm.recv((r + mask) % p)))
            held = mask + cnt
        mask <<= 1
    for j in range(p):
        _block(recv, (j + root) % p, n)[...] = _block(tmp, j, n)


def scatter_linear(comm: Comm, call: CollectiveCall, send, recv):
    p, r, root = comm.size, comm.rank, call.root
    b = call.n // p
    if r == root:
        for k in range(1, p):
            dst = (root + k) % p
            comm.send(dst, _block(send, dst, b).tobytes())
        recv[...] = _block(send, root, b)
    else:
        _put(recv, (yield from comm.recv(root)))


def allgather_ring(comm: Comm, call: CollectiveCall, send, recv):
    p, r, n = comm.size, comm.rank, call.n
    _block(recv, r, n)[...] = send
    right, left = (r + 1) % p, (r - 1) % p
    for step in range(p - 1):
        comm.send(right, _block(recv, (r - step) % p, n).tobytes())
        _put(_block(recv, (r - step - 1) % p, n), (yield from comm.recv(left)))


def alltoall_pairwise(comm: Comm, call: CollectiveCall, send, recv):
    p, r, n = comm.size, comm.rank, call.n
    _block(recv, r, n)[...] = _block(send, r, n)
    for step in range(1, p):
        dst, src = (r + step) % p, (r - step) % p
        comm.send(dst, _block(send, dst, n).tobytes())
        _put(_block(recv, src, n), (yield from comm.recv(src)))


def reduce_binomial(comm: Comm, call: CollectiveCall, send, recv):
    p, r, root, n = comm.size, comm.rank, call.root, call.n
    vr = (r - root) % p
    acc = send.copy()
    mask = 1
    while mask < p:
        if vr & mask:
            comm.send((r - mask) % p, acc.tobytes())
            return
        if vr + mask < p:
            payload = yield from comm.recv((r + mask) % p)
            reduce_local(call.op, call.datatype, payload, acc, n, comm)
        mask <<= 1
    recv[...] = acc


def allreduce_recursive_doubling(comm: Comm, call: CollectiveCall, send, recv):
    p, r, n = comm.size, comm.rank, call.n
    op, dt = call.op, call.datatype
    buf = send.copy()
    p2 = 1 << (p.bit_length() - 1)
    rem = p - p2
    if r < 2 * rem:
        if r % 2 == 0:
            comm.send(r + 1, buf.tobytes())
            newrank = -1
        else:
            reduce_local(op, dt, (yield from comm.recv(r - 1)), buf, n, comm)
            newrank = r // 2
    else:
        newrank = r - rem
    if newrank >= 0:
        mask = 1
        while mask < p2:
            peer = newrank ^ mask
            dst = peer * 2 + 1 if peer < rem else peer + rem
            comm.send(dst, buf.tobytes())
            reduce_local(op, dt, (yield from comm.recv(dst)), buf, n, comm)
            mask <<= 1
    if r < 2 * rem:
        if r % 2:
            comm.send(r - 1, buf.tobytes())
        else:
            _put(buf, (yield from comm.recv(r + 1)))
    recv[...] = buf


def reduce_scatter_block_pairwise(comm: Comm, call: CollectiveCall, send, recv):
    p, r = comm.size, comm.rank
    b = call.n // p
    acc = _block(send, r, b).copy()
    for step in range(1, p):
        dst, src = (r + step) % p, (r - step) % p
        comm.send(dst, _block(send, dst, b).tobytes())
        reduce_local(call.op, call.datatype, (yield from comm.recv(src)), acc, b, comm)
    recv[...] = acc


def reduce_scatter_reduce_scatterv(comm: Comm, call: CollectiveCall, send, recv):
    counts = [int(c) for c in call.counts]
    displs = [0] * len(counts)
    for i in range(1, len(counts)):
        displs[i] = displs[i - 1] + counts[i - 1]
    tmp = np.empty(call.n, dtype=send.dtype) if comm.rank == 0 else None
    yield from reduce_binomial(comm, call.with_(kind=CollectiveKind.REDUCE, root=0), send, tmp)
    sv = call.with_(kind=CollectiveKind.SCATTERV, root=0, displs=displs)
    yield from scatterv_linear(comm, sv, tmp, recv)


def scan_linear(comm: Comm, call: CollectiveCall, send, recv):
    p, r = comm.size, comm.rank
    acc = send.copy()
    if r > 0:
        reduce_local(call.op, call.datatype, (yield from comm.recv(r - 1)), acc, call.n, comm)
    if r < p - 1:
        comm.send(r + 1, acc.tobytes())
    recv[...] = acc


def exscan_linear(comm: Comm, call: CollectiveCall, send, recv):
    p, r = comm.size, comm.rank
    if r == 0:
        if p > 1:
            comm.send(1, send.tobytes())
        return
    payload = yield from comm.recv(r - 1)
    _put(recv, payload)
    if r < p - 1:
        acc = send.copy()
        reduce_local(call.op, call.datatype, payload, acc, call.n, comm)
        comm.send(r + 1, acc.tobytes())


def _slot(buf, call: CollectiveCall, i: int):
    d, c = int(call.displs[i]), int(call.counts[i])
    return buf[d:d + c]


def gatherv_linear(comm: Comm, call: CollectiveCall, send, recv):
    p, r, root = comm.size, comm.rank, call.root
    if r != root:
        comm.send(root, send.tobytes())
        return
    _slot(recv, call, root)[...] = send
    for src in range(p):
        if src != root:
            _put(_slot(recv, call, src), (yield from comm.recv(src)))


def scatterv_linear(comm: Comm, call: CollectiveCall, send, recv):
    p, r, root = comm.size, comm.rank, call.root
    if r == root:
        for k in range(1, p):
            dst = (root + k) % p
            comm.send(dst, _slot(send, call, dst).tobytes())
        recv[...] = _slot(send, call, root)
    else:
        _put(recv, (yield from comm.recv(root)))


def allgatherv_linear(comm: Comm, call: CollectiveCall, send, recv):
    p, r = comm.size, comm.rank
    _slot(recv, call, r)[...] = send
    data = send.tobytes()
    for step in range(1, p):
        comm.send((r + step) % p, data)
    for step in range(1, p):
        src = (r - step) % p
        _put(_slot(recv, call, src), (yield from comm.recv(src)))


def alltoallv_linear(comm: Comm, call: CollectiveCall, send, recv):
    p, r = comm.size, comm.rank
    _slot(recv, call, r)[...] = _slot(send, call, r)
    for step in range(1, p):
        dst, src = (r + step) % p, (r - step) % p
        comm.send(dst, _slot(send, call, dst).tobytes())
        _put(_slot(recv, call, src), (yield from comm.recv(src)))


K = CollectiveKind
_ALGORITHMS: dict[tuple[CollectiveKind, str], Callable] = {
    (K.BCAST, "binomial"): bcast_binomial,
    (K.BCAST, "linear"): bcast_linear,
    (K.GATHER, "linear"): gather_linear,
    (K.GATHER, "binomial"): gather_binomial,
    (K.SCATTER, "linear"): scatter_linear,
    (K.ALLGATHER, "ring"): allgather_ring,
    (K.ALLTOALL, "pairwise"): alltoall_pairwise,
    (K.REDUCE, "binomial"): reduce_binomial,
    (K.ALLREDUCE, "recursive_doubling"): allreduce_recursive_doubling,
    (K.REDUCE_SCATTER, "reduce_scatterv"): reduce_scatter_reduce_scatterv,
    (K.REDUCE_SCATTER_BLOCK, "pairwise"): reduce_scatter_block_pairwise,
    (K.SCAN, "linear"): scan_linear,
    (K.EXSCAN, "linear"): exscan_linear,
    (K.GATHERV, "linear"): gatherv_linear,
    (K.SCATTERV, "linear"): scatterv_linear,
    (K.ALLGATHERV, "linear"): allgatherv_linear,
    (K.ALLTOALLV, "linear"): alltoallv_linear,
}

# deliberately includes slow choices (linear broadcast) so that guideline
# violations show up under the cost model
SHIPPED_DEFAULTS: dict[CollectiveKind, str] = {
    K.BCAST: "linear",
    K.GATHER: "binomial",
    K.SCATTER: "linear",
    K.ALLGATHER: "ring",
    K.ALLTOALL: "pairwise",
    K.REDUCE: "binomial",
    K.ALLREDUCE: "recursive_doubling",
    K.REDUCE_SCATTER: "reduce_scatterv",
    K.REDUCE_SCATTER_BLOCK: "pairwise",
    K.SCAN: "linear",
    K.EXSCAN: "linear",
    K.GATHERV: "linear",
    K.SCATTERV: "linear",
    K.ALLGATHERV: "linear",
    K.ALLTOALLV: "linear",
}


def algorithms() -> list[AlgorithmId]:
    return [AlgorithmId(k, v) for k, v in _ALGORITHMS]


def variants(kind: CollectiveKind) -> list[str]:
    return [v for k, v in _ALGORITHMS if k is kind]


def default_table(overrides: dict[CollectiveKind, str] | None = None) -> dict[CollectiveKind, AlgorithmId]:
    table = dict(SHIPPED_DEFAULTS)
    if overrides:
        table.update(overrides)
    for kind, variant in table.items():
        if (kind, variant) not in _ALGORITHMS:
            valid = ", ".join(variants(kind))
            raise ConfigError(f"unknown {kind.cli_name} algorithm {variant!r}; valid: {valid}")
    return {k: AlgorithmId(k, v) for k, v in table.items()}


def _check_buffers(call: CollectiveCall, rank: int, send, recv) -> None:
    ns, nr = buffer_sizes(call, rank)
    if ns is not None:
        _expect(send, ns, "send")
    if nr is not None:
        _expect(recv, nr, "recv")
    dt = call.datatype.np_dtype
    for buf in (send, recv):
        if buf is not None and buf.dtype != dt:
            raise SizeMismatch(f"buffer dtype {buf.dtype} does not match {call.datatype.name}")


def execute_collective(comm: Comm, call: CollectiveCall, alg: AlgorithmId | None, send, recv):
    """Run one collective on this rank (generator; use ``yield from``)."""
    validate_call(call)
    if call.p != comm.size:
        raise SizeMismatch(f"call for p={call.p} on a group of {comm.size}")
    if alg is None:
        alg = AlgorithmId(call.kind, SHIPPED_DEFAULTS[call.kind])
    if alg.kind is not call.kind:
        raise SizeMismatch(f"algorithm {alg} cannot run {call.kind.name}")
    _check_buffers(call, comm.rank, send, recv)
    yield from _ALGORITHMS[(alg.kind, alg.variant)](comm, call, send, recv)


# ----------------------------------------------------------------------------
# sequential oracle


def _combine(op: ReduceOp, acc: np.ndarray, x: np.ndarray) -> np.ndarray:
    if op is ReduceOp.SUM:
        return acc + x
    if op is ReduceOp.MAX:
        return np.maximum(acc, x)
    out = acc.view(np.uint8) | x.view(np.uint8)
    return out.view(acc.dtype)


def _fold(op: ReduceOp, arrays: list[np.ndarray]) -> np.ndarray:
    acc = arrays[0].copy()
    for x in arrays[1:]:
        acc = _combine(op, acc, x)
    return acc


def sequential_oracle(call: CollectiveCall, all_send: list) -> list[Any]:
    """Expected recv buffer of every rank, computed rank by rank.

    For BCAST, ``all_send`` holds each rank's initial buffer.  Entries are
    None where the recv buffer is not significant (non-root GATHER/REDUCE,
    rank 0 of EXSCAN, which must be left untouched).  For the ``*v`` kinds,
    positions not covered by any count are zero in the expected buffer.
    """
    validate_call(call)
    k, n, p, root, op = call.kind, call.n, call.p, call.root, call.op
    if len(all_send) != p:
        raise SizeMismatch("one send buffer per rank required")
    for r in range(p):
        ns, _ = buffer_sizes(call, r)
        if ns is not None:
            _expect(all_send[r], ns, "send")
    if k is K.BCAST:
        _expect(all_send[root], n, "root")
        return [all_send[root].copy() for _ in range(p)]
    if k in (K.GATHER, K.ALLGATHER):
        full = np.concatenate([all_send[i] for i in range(p)]) if p else None
        if k is K.GATHER:
            return [full.copy() if r == root else None for r in range(p)]
        return [full.copy() for _ in range(p)]
    if k is K.SCATTER:
        b = n // p
        return [all_send[root][r * b:(r + 1) * b].copy() for r in range(p)]
    if k is K.ALLTOALL:
        out = []
        for r in range(p):
            out.append(np.concatenate([all_send[i][r * n:(r + 1) * n] for i in range(p)]))
        return out
    if k in (K.REDUCE, K.ALLREDUCE):
        total = _fold(op, [all_send[i] for i in range(p)])
        if k is K.REDUCE:
            return [total.copy() if r == root else None for r in range(p)]
        return [total.copy() for _ in range(p)]
    if k is K.REDUCE_SCATTER_BLOCK:
        total = _fold(op, [all_send[i] for i in range(p)])
        b = n // p
        return [total[r * b:(r + 1) * b].copy() for r in range(p)]
    if k is K.REDUCE_SCATTER:
        total = _fold(op, [all_send[i] for i in range(p)])
        out, start = [], 0
        for r in range(p):
            c = int(call.counts[r])
            out.append(total[start:start + c].copy())
            start += c
        return out
    if k is K.SCAN:
        return [_fold(op, [all_send[i] for i in range(r + 1)]) for r in range(p)]
    if k is K.EXSCAN:
        return [None] + [_fold(op, [all_send[i] for i in range(r)]) for r in range(1, p)]
    counts = [int(c) for c in call.counts]
    displs = [int(d) for d in call.displs] if call.displs is not None else None
    dt = call.datatype.np_dtype
    if k in (K.GATHERV, K.ALLGATHERV):
        ext = _v_extent(call)
        out = []
        for r in range(p):
            if k is K.GATHERV and r != root:
                out.append(None)
                continue
            buf = np.zeros(ext, dtype=dt)
            for i in range(p):
                buf[displs[i]:displs[i] + counts[i]] = all_send[i]
            out.append(buf)
        return out
    if k is K.SCATTERV:
        return [all_send[root][displs[r]:displs[r] + counts[r]].copy() for r in range(p)]
    if k is K.ALLTOALLV:
        ext = _v_extent(call)
        out = []
        for r in range(p):
            buf = np.zeros(ext, dtype=dt)
            for i in range(p):
                buf[displs[i]:displs[i] + counts[i]] = all_send[i][displs[r]:displs[r] + counts[r]]
            out.append(buf)
        return out
    raise AssertionError(k)
