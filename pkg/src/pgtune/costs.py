"""Closed-form and recurrence latencies of the Default algorithms.

Each function evaluates the per-rank time equations of one algorithm under a
jitter-free :class:`~pgtune.runtime.CostModel`, with every rank starting at
time 0.  The result is the latest finishing time over all ranks in integer
nanoseconds, which is what a synchronized measurement of the collective
records.  These are written independently of the message-passing code so
they can serve as a check on the simulator.
"""

from __future__ import annotations

from typing import Sequence

from .collectives import AlgorithmId, CollectiveKind, balanced_counts
from .runtime import CostModel

K = CollectiveKind


def _log2_ceil(p: int) -> int:
    return (p - 1).bit_length()


class _Ports:
    """Single injection port per rank: sends leave one after another."""

    def __init__(self, p: int, model: CostModel):
        self.free = [0] * p
        self.model = model

    def send(self, src: int, now: int, nbytes: int) -> int:
        depart = max(now, self.free[src])
        arrival = depart + self.model.hop_ns(nbytes)
        self.free[src] = arrival
        return arrival


def _binomial_up(p: int, model: CostModel, size_of, reduce_bytes: int | None) -> int:
    """Finishing time of the root of a binomial gather/reduce tree."""
    def ready(vr: int) -> int:
        t = 0
        mask = 1
        while mask < p:
            if vr & mask:
                return t
            child = vr + mask
            if child < p:
                t = max(t, ready(child) + model.hop_ns(size_of(child, mask)))
                if reduce_bytes is not None:
                    t += model.compute_ns(reduce_bytes)
            mask <<= 1
        return t

    return ready(0)


def _recursive_doubling(p: int, m: int, model: CostModel) -> int:
    h_g = model.compute_ns(m)
    t = [0] * p
    ports = _Ports(p, model)
    p2 = 1 << (p.bit_length() - 1)
    rem = p - p2
    for r in range(0, 2 * rem, 2):
        arrival = ports.send(r, t[r], m)
        t[r + 1] = max(t[r + 1], arrival) + h_g
    members = [2 * i + 1 if i < rem else i + rem for i in range(p2)]
    mask = 1
    while mask < p2:
        arrivals = {}
        for i, r in enumerate(members):
            arrivals[members[i ^ mask]] = ports.send(r, t[r], m)
        for r in members:
            t[r] = max(t[r], arrivals[r]) + h_g
        mask <<= 1
    for r in range(1, 2 * rem, 2):
        arrival = ports.send(r, t[r], m)
        t[r - 1] = max(t[r - 1], arrival)
    return max(t)


def _linear_root_sends(sizes: Sequence[int], model: CostModel, start: int = 0) -> int:
    """Last arrival when one rank sends ``sizes`` back to back."""
    t = start
    for s in sizes:
        t += model.hop_ns(s)
    return t


def algorithm_cost_schedule(alg: AlgorithmId, p: int, n: int, extent: int, model: CostModel,
                            counts: Sequence[int] | None = None) -> int:
    """Predicted latency in nanoseconds of ``alg`` for ``n`` elements of size ``extent``.

    ``n`` follows the call convention of the kind (total elements for
    SCATTER, REDUCE_SCATTER_BLOCK and REDUCE_SCATTER).  The ``*v`` kinds
    assume regular counts of ``n`` per rank; REDUCE_SCATTER uses ``counts``
    or a balanced split of ``n``.
    """
    if model.jitter_fraction:
        raise ValueError("cost schedule requires a jitter-free model")
    if p == 1:
        return 0
    kind, variant = alg.kind, alg.variant
    m = n * extent
    hop = model.hop_ns
    gam = model.compute_ns
    L = _log2_ceil(p)

    if kind is K.BCAST:
        return L * hop(m) if variant == "binomial" else (p - 1) * hop(m)
    if kind in (K.GATHER, K.GATHERV):
        if variant == "binomial":
            return _binomial_up(p, model, lambda child, mask: min(mask, p - child) * m, None)
        return hop(m)
    if kind in (K.SCATTER, K.SCATTERV):
        block = m // p if kind is K.SCATTER else m
        return (p - 1) * hop(block)
    if kind in (K.ALLGATHER, K.ALLGATHERV, K.ALLTOALL, K.ALLTOALLV):
        return (p - 1) * hop(m)
    if kind is K.REDUCE:
        return _binomial_up(p, model, lambda child, mask: m, m)
    if kind is K.ALLREDUCE:
        return _recursive_doubling(p, m, model)
    if kind is K.REDUCE_SCATTER_BLOCK:
        b = m // p
        return (p - 1) * (hop(b) + gam(b))
    if kind is K.REDUCE_SCATTER:
        cs = list(counts) if counts is not None else balanced_counts(n, p)
        t_reduce = _binomial_up(p, model, lambda child, mask: m, m)
        return _linear_root_sends([c * extent for c in cs[1:]], model, t_reduce)
    if kind is K.SCAN:
        return (p - 1) * (hop(m) + gam(m))
    if kind is K.EXSCAN:
        return (p - 1) * hop(m) + (p - 2) * gam(m)
    raise KeyError(str(alg))
