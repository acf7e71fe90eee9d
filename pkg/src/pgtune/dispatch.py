"""Tuned runtime: route collective calls to profiled mock-ups when they pay off."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

from .bench import BenchFunction, make_buffers
from .collectives import AlgorithmId, CollectiveCall, CollectiveKind, execute_collective
from .mockups import MockupConfig, MockupId, ScratchBuffers, execute_mockup, extra_memory_required
from .profile import Profile, parse_profile
from .runtime import Comm

DEFAULT = "Default"

PROFILE_HIT = "profile-hit"
NO_PROFILE = "no-profile"
NPROCS_MISMATCH = "nprocs-mismatch"
INSUFFICIENT_SCRATCH = "insufficient-scratch"


@dataclass(frozen=True)
class DispatchDecision:
    collective: CollectiveKind
    msize: int
    chosen: MockupId | None  # None: the Default algorithm
    reason: str

    @property
    def chosen_name(self) -> str:
        return DEFAULT if self.chosen is None else self.chosen.value


@dataclass
class TunedRuntime:
    """Profiles indexed by (collective, nprocs) plus per-rank scratch arenas."""

    nprocs: int
    profiles: dict[tuple[CollectiveKind, int], Profile]
    scratch: list[ScratchBuffers]
    mockup_cfg: MockupConfig = MockupConfig()
    defaults: Mapping[CollectiveKind, AlgorithmId] = field(default_factory=dict)
    decisions: list[DispatchDecision] = field(default_factory=list)

    def __post_init__(self):
        self._kinds = {kind for kind, _ in self.profiles}

    @property
    def msg_capacity(self) -> int:
        return self.scratch[0].msg_capacity if self.scratch else 0

    @property
    def int_capacity(self) -> int:
        return self.scratch[0].int_capacity if self.scratch else 0

    def decide(self, call: CollectiveCall) -> DispatchDecision:
        """Pure decision for ``call``; identical on every rank."""
        kind, msize = call.kind, call.msize_bytes
        prof = self.profiles.get((kind, call.p))
        if prof is None:
            reason = NPROCS_MISMATCH if kind in self._kinds else NO_PROFILE
            return DispatchDecision(kind, msize, None, reason)
        mid = prof.lookup(msize)
        if mid is None:
            return DispatchDecision(kind, msize, None, NO_PROFILE)
        req = extra_memory_required(mid, call, self.mockup_cfg)
        if call.p > len(self.scratch) or not all(s.fits(req) for s in self.scratch):
            return DispatchDecision(kind, msize, None, INSUFFICIENT_SCRATCH)
        return DispatchDecision(kind, msize, mid, PROFILE_HIT)


def load_profiles(profile_dir: str | os.PathLike | None) -> dict[tuple[CollectiveKind, int], Profile]:
    """Parse every ``*.profile`` file; a malformed one fails with its path in the message."""
    index: dict[tuple[CollectiveKind, int], Profile] = {}
    if profile_dir is None:
        return index
    d = Path(profile_dir)
    if not d.exists():
        return index
    for path in sorted(d.glob("*.profile")):
        prof = parse_profile(path)
        index[(prof.collective, prof.nprocs)] = prof
    return index


def init_tuned(profile_dir: str | os.PathLike | None, nprocs: int, msg_capacity: int = 104857600,
               int_capacity: int = 10240, mockup_cfg: MockupConfig = MockupConfig(),
               defaults: Mapping[CollectiveKind, AlgorithmId] | None = None) -> TunedRuntime:
    """Load all profiles and allocate one arena pair per rank up front."""
    profiles = load_profiles(profile_dir)
    scratch = [ScratchBuffers(msg_capacity, int_capacity) for _ in range(nprocs)]
    return TunedRuntime(nprocs, profiles, scratch, mockup_cfg, dict(defaults or {}))


def dispatch(rt: TunedRuntime, comm: Comm, call: CollectiveCall, send, recv):
    """Run ``call`` through the tuned runtime (generator; use ``yield from``)."""
    decision = rt.decide(call)
    if comm.rank == 0:
        rt.decisions.append(decision)
    if decision.chosen is None:
        yield from execute_collective(comm, call, rt.defaults.get(call.kind), send, recv)
    else:
        yield from execute_mockup(comm, decision.chosen, call, send, recv,
                                  rt.scratch[comm.rank], rt.mockup_cfg, rt.defaults)


def tuned_function(rt: TunedRuntime, kind: CollectiveKind) -> BenchFunction:
    """Benchmark ``kind`` as an application linked against the tuned runtime sees it."""

    def prepare(comm: Comm, call: CollectiveCall):
        send, recv = make_buffers(comm, call)
        return lambda: dispatch(rt, comm, call, send, recv)

    return BenchFunction(kind.mpi_name, kind, prepare)


def replacement_footer(rt: TunedRuntime) -> list[str]:
    """One line per distinct (collective, msize) decision in call order, then capacities."""
    seen = set()
    lines = []
    for d in rt.decisions:
        key = (d.collective, d.msize)
        if key in seen:
            continue
        seen.add(key)
        lines.append(f"# {d.collective.mpi_name} {d.msize} {d.chosen_name}")
    lines.append(f"# msg_buffer_bytes={rt.msg_capacity}")
    lines.append(f"# int_buffer_bytes={rt.int_capacity}")
    return lines
