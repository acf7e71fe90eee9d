from __future__ import annotations

import numpy as np
import pytest

from _util import check_outputs, expected, initial_buffers, make_call
from pgtune.bench import Launcher, default_function, time_function
from pgtune.collectives import AlgorithmId, CollectiveKind, call_for_msize, default_table
from pgtune.costs import algorithm_cost_schedule
from pgtune.dispatch import (
    INSUFFICIENT_SCRATCH,
    NO_PROFILE,
    NPROCS_MISMATCH,
    PROFILE_HIT,
    dispatch,
    init_tuned,
    replacement_footer,
    tuned_function,
)
from pgtune.errors import ParseError
from pgtune.mockups import MockupId, local_id, mockups_for
from pgtune.profile import MessageRange, Profile, write_profile
from pgtune.runtime import CostModel, Datatype, ReduceOp, run_spmd

K = CollectiveKind
DEFAULTS = default_table({K.BCAST: "binomial"})
MODEL = CostModel(alpha_us=10, beta_us_per_byte=0.01, gamma_us_per_byte=0.001)


def profile_for(mid: MockupId, p: int, sizes) -> Profile:
    table = {local_id(m): m.value for m in mockups_for(mid.lhs)}
    return Profile(mid.lhs, p, table, tuple(MessageRange(s, s, local_id(mid)) for s in sizes))


def run_dispatched(rt, call, sends, recvs, model=MODEL):
    bufs = [None if r is None else r.copy() for r in recvs]

    def prog(comm):
        yield from dispatch(rt, comm, call, sends[comm.rank], bufs[comm.rank])
        return bufs[comm.rank]

    return run_spmd(call.p, prog, model)


def test_empty_directory_always_default(tmp_path):
    rt = init_tuned(tmp_path, 4, 1024, 64, defaults=DEFAULTS)
    assert rt.profiles == {}
    call = call_for_msize(K.ALLGATHER, 8, 4)
    assert rt.decide(call).reason == NO_PROFILE
    assert replacement_footer(rt) == ["# msg_buffer_bytes=1024", "# int_buffer_bytes=64"]


def test_nprocs_compatibility(tmp_path):
    write_profile(profile_for(MockupId.SCATTER_AS_BCAST, 1024, [100]), tmp_path / "MPI_Scatter.1024.profile")
    rt = init_tuned(tmp_path, 2, 0, 0)
    assert (K.SCATTER, 1024) in rt.profiles
    assert rt.decide(call_for_msize(K.SCATTER, 100, 64)).reason == NPROCS_MISMATCH
    assert rt.decide(call_for_msize(K.BCAST, 100, 64)).reason == NO_PROFILE


def test_listing_profile_active_at_its_process_count(tmp_path):
    write_profile(profile_for(MockupId.SCATTER_AS_BCAST, 1024, [100]), tmp_path / "a.profile")
    rt = init_tuned(tmp_path, 1024, 1 << 20, 16 << 10)
    d = rt.decide(call_for_msize(K.SCATTER, 100, 1024))
    assert (d.chosen, d.reason) == (MockupId.SCATTER_AS_BCAST, PROFILE_HIT)
    assert rt.decide(call_for_msize(K.SCATTER, 8, 1024)).reason == NO_PROFILE


def test_malformed_profile_fails_fast_naming_file(tmp_path):
    (tmp_path / "bad.profile").write_text("# pgtune profile\nMPI_Scatter\nlots\n")
    with pytest.raises(ParseError, match="bad.profile"):
        init_tuned(tmp_path, 2, 0, 0)
    (tmp_path / "bad.profile").write_text("# pgtune profile\nMPI_Scatter\n2\n1\n2 scatter_as_magic\n0\n")
    with pytest.raises(ParseError, match="bad.profile"):
        init_tuned(tmp_path, 2, 0, 0)


def test_allreduce_hit_runs_reduce_then_bcast(tmp_path):
    p, n = 6, 10
    write_profile(profile_for(MockupId.ALLREDUCE_AS_REDUCE_BCAST, p, [n * 4]), tmp_path / "x.profile")
    rt = init_tuned(tmp_path, p, 0, 0, defaults=DEFAULTS)
    call = make_call(K.ALLREDUCE, n, p, Datatype.INT32, ReduceOp.SUM)
    sends, recvs = initial_buffers(call, np.random.default_rng(0))
    res = run_dispatched(rt, call, sends, recvs)
    assert check_outputs(call, res.outputs, expected(call, sends, recvs)) == []
    assert rt.decisions[-1].chosen is MockupId.ALLREDUCE_AS_REDUCE_BCAST
    want = (algorithm_cost_schedule(AlgorithmId(K.REDUCE, "binomial"), p, n, 4, MODEL)
            + algorithm_cost_schedule(AlgorithmId(K.BCAST, "binomial"), p, n, 4, MODEL))
    assert res.max_elapsed_ns == want


def test_zero_budget_falls_back(tmp_path):
    p = 4
    write_profile(profile_for(MockupId.ALLGATHER_AS_ALLTOALL, p, [8]), tmp_path / "x.profile")
    rt = init_tuned(tmp_path, p, 0, 0, defaults=DEFAULTS)
    call = make_call(K.ALLGATHER, 8, p, Datatype.BYTE, None)
    sends, recvs = initial_buffers(call, np.random.default_rng(1))
    res = run_dispatched(rt, call, sends, recvs)
    assert check_outputs(call, res.outputs, expected(call, sends, recvs)) == []
    assert (rt.decisions[-1].chosen, rt.decisions[-1].reason) == (None, INSUFFICIENT_SCRATCH)
    assert replacement_footer(rt)[0] == "# MPI_Allgather 8 Default"


def test_no_profile_latency_equals_default(tmp_path):
    rt = init_tuned(tmp_path, 4, 0, 0, defaults=DEFAULTS)
    launcher = Launcher(4, MODEL)
    for kind in (K.ALLGATHER, K.BCAST, K.REDUCE):
        tuned = time_function(tuned_function(rt, kind), 64, 2, launcher).latencies_ns
        plain = time_function(default_function(kind, DEFAULTS), 64, 2, launcher).latencies_ns
        assert tuned == plain


def test_footer_lines(tmp_path):
    p = 8
    write_profile(profile_for(MockupId.ALLGATHER_AS_GATHER_BCAST, p, [100]), tmp_path / "x.profile")
    rt = init_tuned(tmp_path, p, 1 << 16, 1024, defaults=DEFAULTS)
    for msize in (100, 8, 100):
        call = call_for_msize(K.ALLGATHER, msize, p)
        sends, recvs = initial_buffers(call, np.random.default_rng(msize))
        run_dispatched(rt, call, sends, recvs)
    assert [d.reason for d in rt.decisions] == [PROFILE_HIT, NO_PROFILE, PROFILE_HIT]
    assert replacement_footer(rt) == [
        "# MPI_Allgather 100 allgather_as_gather_bcast",
        "# MPI_Allgather 8 Default",
        "# msg_buffer_bytes=65536",
        "# int_buffer_bytes=1024",
    ]


def test_capacity_sweep_switches_exactly_at_requirement(tmp_path):
    p = 3
    mid = MockupId.ALLGATHER_AS_ALLREDUCE
    write_profile(profile_for(mid, p, [5]), tmp_path / "x.profile")
    call = make_call(K.ALLGATHER, 5, p, Datatype.BYTE, None)
    need = p * 5
    for cap in range(0, need + 3):
        rt = init_tuned(tmp_path, p, cap, 0, defaults=DEFAULTS)
        sends, recvs = initial_buffers(call, np.random.default_rng(cap))
        res = run_dispatched(rt, call, sends, recvs)
        assert check_outputs(call, res.outputs, expected(call, sends, recvs)) == []
        assert rt.decisions[-1].chosen == (mid if cap >= need else None)
