from __future__ import annotations

import io
from dataclasses import dataclass, field

import pytest
from hypothesis import given, strategies as st

from pgtune.bench import (
    CSV_COLUMNS,
    Launcher,
    NrepConfig,
    SampleSet,
    default_function,
    estimate_nrep,
    estimate_t1,
    format_us,
    mockup_function,
    nrep_from_times,
    parse_us,
    read_csv,
    rse,
    run_benchmark,
    time_function,
    write_csv,
)
from pgtune.collectives import AlgorithmId, CollectiveKind, call_for_msize, default_table
from pgtune.costs import algorithm_cost_schedule
from pgtune.errors import DegenerateSamples, NonConvergence, ParseError
from pgtune.mockups import MockupId, mockups_for
from pgtune.runtime import CostModel, barrier_rounds

K = CollectiveKind
HOCKNEY = CostModel(alpha_us=100, beta_us_per_byte=0.01)
DEFAULTS = default_table({K.BCAST: "binomial"})


@dataclass(frozen=True)
class CountingLauncher(Launcher):
    """Launcher that records how many single runs were started."""

    calls: list = field(default_factory=list, compare=False)

    def run(self, program, seed):
        self.calls.append(seed)
        return super().run(program, seed)


def test_rse_examples():
    assert rse([10, 10, 10, 10]) == 0
    assert rse([9, 11]) == pytest.approx(0.1, rel=1e-15)
    with pytest.raises(DegenerateSamples):
        rse([5])
    with pytest.raises(DegenerateSamples):
        rse([0, 0])


def test_nrep_formula_examples():
    assert nrep_from_times(2000, 40, 10) == 50
    assert nrep_from_times(100, 400, 10) == 10
    assert nrep_from_times(2001, 40, 1) == 51
    with pytest.raises(DegenerateSamples):
        nrep_from_times(10, 0, 1)


@given(t1=st.integers(1, 10**9), t=st.integers(1, 10**7), k=st.integers(1, 1000))
def test_nrep_at_least_k_and_monotone(t1, t, k):
    n = nrep_from_times(t1, t, k)
    assert n >= k
    assert n == max(-(-t1 // t), k)
    assert nrep_from_times(t1, t + 1, k) <= n


def test_nrep_config_validation():
    for bad in (dict(rse_threshold_1byte=0), dict(rse_threshold_batch=1), dict(b1=0), dict(b2=-1), dict(K=0)):
        with pytest.raises(ValueError):
            NrepConfig(**bad)
    NrepConfig(b2=0)


def test_time_function_excludes_barrier():
    launcher = Launcher(8, HOCKNEY)
    s = time_function(default_function(K.ALLGATHER, DEFAULTS), 100, 3, launcher)
    want = algorithm_cost_schedule(AlgorithmId(K.ALLGATHER, "ring"), 8, 100, 1, HOCKNEY)
    assert s.latencies_ns == [want] * 3 == [7 * 101_000] * 3
    assert len(time_function(default_function(K.ALLGATHER, DEFAULTS), 100, 1, launcher).latencies_ns) == 1
    with pytest.raises(ValueError):
        time_function(default_function(K.ALLGATHER, DEFAULTS), 100, 0, launcher)


def test_time_function_for_every_default_matches_schedule():
    launcher = Launcher(6, CostModel(alpha_us=3, beta_us_per_byte=0.02, gamma_us_per_byte=0.001))
    for kind in K:
        if kind.irregular and kind is not K.REDUCE_SCATTER:
            continue
        call = call_for_msize(kind, 8, 6)
        want = algorithm_cost_schedule(DEFAULTS[kind], 6, call.n, 1, launcher.model, call.counts)
        got = time_function(default_function(kind, DEFAULTS), 8, 2, launcher).latencies_ns
        assert got == [want, want], kind


def test_estimate_t1_jitter_free_converges_in_two():
    launcher = CountingLauncher(4, HOCKNEY)
    func = default_function(K.ALLGATHER, DEFAULTS)
    cfg = NrepConfig(nmpiruns=3)
    t1 = estimate_t1(func, cfg, launcher)
    per_call = 3 * HOCKNEY.hop_ns(1)
    barrier = barrier_rounds(4) * HOCKNEY.hop_ns(0)
    assert t1 == 2 * (barrier + per_call)
    assert len(launcher.calls) == 2 * 3


def test_estimate_t1_with_jitter_is_reproducible():
    launcher = Launcher(4, CostModel(alpha_us=5, jitter_fraction=0.3, seed=11))
    func = default_function(K.BCAST, DEFAULTS)
    a = estimate_t1(func, NrepConfig(), launcher, seed=5)
    assert a == estimate_t1(func, NrepConfig(), launcher, seed=5)
    assert a > 0


def test_estimate_t1_cap():
    launcher = Launcher(4, CostModel(alpha_us=5, jitter_fraction=0.9))
    cfg = NrepConfig(rse_threshold_1byte=1e-9, max_t1_obs=5)
    with pytest.raises(NonConvergence):
        estimate_t1(default_function(K.BCAST, DEFAULTS), cfg, launcher)


def test_estimate_nrep_stops_after_first_batch_when_stable():
    launcher = CountingLauncher(4, HOCKNEY)
    func = default_function(K.ALLGATHER, DEFAULTS)
    t = 3 * HOCKNEY.hop_ns(64)
    assert estimate_nrep(func, 64, 100 * t, NrepConfig(), launcher) == 100
    assert len(launcher.calls) == 1  # one run of b1 observations, b2 skipped
    assert estimate_nrep(func, 64, 1, NrepConfig(K=7), launcher) == 7


def test_estimate_nrep_second_batch_and_b2_zero():
    model = CostModel(alpha_us=5, jitter_fraction=0.9, seed=3)
    func = default_function(K.BCAST, DEFAULTS)
    noisy = NrepConfig(rse_threshold_batch=1e-6)
    launcher = CountingLauncher(4, model)
    estimate_nrep(func, 8, 10**6, noisy, launcher)
    assert len(launcher.calls) == 2
    launcher = CountingLauncher(4, model)
    estimate_nrep(func, 8, 10**6, NrepConfig(rse_threshold_batch=1e-6, b2=0), launcher)
    assert len(launcher.calls) == 1
    with pytest.raises(ValueError):
        estimate_nrep(func, 8, 0, noisy, launcher)


def test_estimate_nrep_all_zero_samples():
    launcher = Launcher(1, HOCKNEY)  # a single process communicates nothing
    with pytest.raises(DegenerateSamples):
        estimate_nrep(default_function(K.ALLGATHER, DEFAULTS), 8, 100, NrepConfig(), launcher)


def test_run_benchmark_emits_runs():
    launcher = Launcher(4, CostModel(alpha_us=2, jitter_fraction=0.1, seed=1))
    plan = [(default_function(K.ALLGATHER, DEFAULTS), [1, 16])]
    recs = list(run_benchmark(plan, NrepConfig(nmpiruns=5), launcher, seed=9))
    assert len(recs) == 10
    assert [r.mpirun for r in recs[:5]] == [0, 1, 2, 3, 4]
    assert all(len(r.latencies_ns) >= 10 for r in recs)
    again = list(run_benchmark(plan, NrepConfig(nmpiruns=5), launcher, seed=9))
    assert recs == again
    with pytest.raises(ValueError):
        list(run_benchmark([], NrepConfig(), launcher))


def test_full_plan_covers_every_function():
    launcher = Launcher(2, HOCKNEY)
    plan = []
    for kind in {m.lhs: None for m in MockupId}:
        plan.append((default_function(kind, DEFAULTS), [8]))
        plan += [(mockup_function(m, DEFAULTS), [8]) for m in mockups_for(kind)]
    recs = list(run_benchmark(plan, NrepConfig(nmpiruns=1), launcher))
    names = {r.function for r in recs}
    assert len(names) == 9 + 22
    assert {m.value for m in MockupId} <= names


def test_format_us():
    assert format_us(707000) == "707.000"
    assert format_us(1) == "0.001"
    assert format_us(123456789) == "123456.789"
    assert parse_us("0.001") == 1 and parse_us("707.000") == 707000


def test_csv_round_trip():
    recs = [SampleSet("MPI_Allgather", 100, 8, 0, [707000, 707001]),
            SampleSet("allgather_as_allreduce", 100, 8, 1, [324000])]
    out = io.StringIO()
    write_csv(recs, out, {"nprocs": 8, "mode": "virtual"}, ["# MPI_Allgather 100 Default"])
    text = out.getvalue()
    lines = text.splitlines()
    assert lines[:3] == ["# nprocs=8", "# mode=virtual", ",".join(CSV_COLUMNS)]
    assert lines[3] == "MPI_Allgather,100,8,0,0,707.000"
    assert lines[-1] == "# MPI_Allgather 100 Default"
    data = read_csv(io.StringIO(text))
    assert data.records == recs
    assert data.header == {"nprocs": "8", "mode": "virtual"}
    assert data.footer == ["# MPI_Allgather 100 Default"]


@pytest.mark.parametrize("text,line", [
    ("function,msize_bytes\n", 1),
    ("function,msize_bytes,nprocs,mpirun_idx,rep_idx,latency_us\nMPI_Bcast,1,2,0,0\n", 2),
    ("function,msize_bytes,nprocs,mpirun_idx,rep_idx,latency_us\nMPI_Nope,1,2,0,0,1.0\n", 2),
    ("function,msize_bytes,nprocs,mpirun_idx,rep_idx,latency_us\nMPI_Bcast,x,2,0,0,1.0\n", 2),
    ("function,msize_bytes,nprocs,mpirun_idx,rep_idx,latency_us\nMPI_Bcast,1,2,0,0,1\nMPI_Bcast,1,2,0,0,1\n", 3),
])
def test_csv_errors(text, line):
    with pytest.raises(ParseError) as info:
        read_csv(io.StringIO(text), "in.csv")
    assert info.value.line == line and info.value.path == "in.csv"
