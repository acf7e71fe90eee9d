"""Latency measurement, NREP estimation and the raw-sample CSV format."""

from __future__ import annotations

import csv
import hashlib
import io
import math
import statistics
from dataclasses import dataclass, field, replace
from decimal import Decimal
from typing import Callable, Iterable, Iterator, Mapping, Sequence, TextIO

import numpy as np

from .collectives import (
    AlgorithmId,
    CollectiveCall,
    CollectiveKind,
    buffer_sizes,
    call_for_msize,
    execute_collective,
)
from .errors import DegenerateSamples, NonConvergence, ParseError, PgtuneError
from .mockups import MockupConfig, MockupId, ScratchBuffers, execute_mockup, extra_memory_required
from .runtime import Comm, CostModel, run_spmd, dissemination_barrier

CSV_COLUMNS = ("function", "msize_bytes", "nprocs", "mpirun_idx", "rep_idx", "latency_us")

# prepares one rank's buffers and returns a callable that starts one execution
Preparer = Callable[[Comm, CollectiveCall], Callable[[], Iterator]]


@dataclass(frozen=True)
class BenchFunction:
    """A measurable function: the Default of a collective, a mock-up, or a tuned call."""

    name: str
    kind: CollectiveKind
    prepare: Preparer = field(compare=False, repr=False)


@dataclass
class SampleSet:
    """Raw latencies (ns) of one function, message size and mpirun, in execution order."""

    function: str
    msize: int
    nprocs: int
    mpirun: int
    latencies_ns: list[int]

    @property
    def latencies_us(self) -> list[float]:
        return [t / 1000 for t in self.latencies_ns]

    @property
    def collective(self) -> CollectiveKind:
        return function_kind(self.function)


def function_kind(name: str) -> CollectiveKind:
    """Collective measured by a function id (MPI name or mock-up name)."""
    try:
        return CollectiveKind(name)
    except ValueError:
        return MockupId.parse(name).lhs


@dataclass(frozen=True)
class NrepConfig:
    rse_threshold_1byte: float = 0.01
    rse_threshold_batch: float = 0.05
    b1: int = 5
    b2: int = 5
    K: int = 10
    nmpiruns: int = 5
    max_t1_obs: int = 10_000

    def __post_init__(self):
        for name in ("rse_threshold_1byte", "rse_threshold_batch"):
            if not 0 < getattr(self, name) < 1:
                raise ValueError(f"{name} must lie in (0, 1)")
        if self.b1 < 1 or self.b2 < 0 or self.K < 1 or self.nmpiruns < 1 or self.max_t1_obs < 2:
            raise ValueError("need b1 >= 1, b2 >= 0, K >= 1, nmpiruns >= 1, max_t1_obs >= 2")


@dataclass(frozen=True)
class Launcher:
    """Where rank programs run: group size, cost model and clock mode."""

    nprocs: int
    model: CostModel = CostModel()
    mode: str = "virtual"

    def run(self, program, seed: int):
        return run_spmd(self.nprocs, program, replace(self.model, seed=seed), self.mode)


def derive_seed(seed: int, *parts) -> int:
    """Stable 64-bit sub-seed for one independent run."""
    key = repr((seed,) + tuple(parts)).encode()
    return int.from_bytes(hashlib.blake2b(key, digest_size=8).digest(), "little")


# ----------------------------------------------------------------------------
# measurable functions


def _payload(comm: Comm, count: int | None, dt) -> np.ndarray | None:
    if count is None:
        return None
    buf = np.arange(count, dtype=np.uint64) * 31 + comm.rank * 7 + 1
    return buf.astype(np.uint8).view(np.uint8).astype(dt.np_dtype) if count else np.zeros(0, dt.np_dtype)


def make_buffers(comm: Comm, call: CollectiveCall):
    ns, nr = buffer_sizes(call, comm.rank)
    send = _payload(comm, ns, call.datatype)
    recv = None if nr is None else np.zeros(nr, dtype=call.datatype.np_dtype)
    if call.kind is CollectiveKind.BCAST:
        recv = _payload(comm, nr, call.datatype)
    return send, recv


def default_function(kind: CollectiveKind, defaults: Mapping[CollectiveKind, AlgorithmId]) -> BenchFunction:
    def prepare(comm: Comm, call: CollectiveCall):
        send, recv = make_buffers(comm, call)
        alg = defaults.get(kind)
        return lambda: execute_collective(comm, call, alg, send, recv)

    return BenchFunction(kind.mpi_name, kind, prepare)


def mockup_function(mid: MockupId, defaults: Mapping[CollectiveKind, AlgorithmId],
                    cfg: MockupConfig = MockupConfig()) -> BenchFunction:
    """Benchmark a mock-up with arenas sized to exactly its requirement."""

    def prepare(comm: Comm, call: CollectiveCall):
        send, recv = make_buffers(comm, call)
        req = extra_memory_required(mid, call, cfg)
        scratch = ScratchBuffers(req.msg_bytes, req.int_bytes)
        return lambda: execute_mockup(comm, mid, call, send, recv, scratch, cfg, defaults)

    return BenchFunction(mid.value, mid.lhs, prepare)


# ----------------------------------------------------------------------------
# timing procedure


def _timed_program(func: BenchFunction, msize: int, nrep: int):
    def program(comm: Comm):
        call = call_for_msize(func.kind, msize, comm.size)
        start = func.prepare(comm, call)
        lat = []
        for _ in range(nrep):
            yield from dissemination_barrier(comm)
            t0 = comm.now()
            yield from start()
            lat.append(comm.now() - t0)
        return lat

    return program


def time_function(func: BenchFunction, msize: int, nrep: int, launcher: Launcher,
                  seed: int = 0, mpirun: int = 0) -> SampleSet:
    """Barrier, start clock, run, stop clock -- ``nrep`` times in one run.

    The latency of an observation is the largest per-rank elapsed time.
    """
    if nrep < 1:
        raise ValueError("nrep must be >= 1")
    res = launcher.run(_timed_program(func, msize, nrep), seed)
    per_obs = [max(col) for col in zip(*res.outputs)]
    return SampleSet(func.name, msize, launcher.nprocs, mpirun, per_obs)


def rse(samples: Sequence[float]) -> float:
    """Relative standard error of the mean."""
    if len(samples) < 2:
        raise DegenerateSamples("RSE needs at least two samples")
    mean = statistics.fmean(samples)
    if mean <= 0:
        raise DegenerateSamples("RSE undefined for nonpositive mean")
    return statistics.stdev(samples) / math.sqrt(len(samples)) / mean


def estimate_t1(func: BenchFunction, cfg: NrepConfig, launcher: Launcher, seed: int = 0) -> int:
    """Longest time (ns) any mpirun needed until the 1-byte RSE fell below threshold.

    Each observation is a fresh single-shot run; its cost (barrier included)
    adds to the cumulative time of that mpirun.
    """
    worst = 0
    for run_idx in range(cfg.nmpiruns):
        samples: list[int] = []
        spent = 0
        while True:
            if len(samples) >= cfg.max_t1_obs:
                raise NonConvergence(
                    f"{func.name}: RSE still above {cfg.rse_threshold_1byte} after {len(samples)} observations")
            res = launcher.run(_timed_program(func, 1, 1),
                               derive_seed(seed, "t1", func.name, run_idx, len(samples)))
            samples.append(max(out[0] for out in res.outputs))
            spent += res.max_elapsed_ns
            if len(samples) >= 2 and rse(samples) < cfg.rse_threshold_1byte:
                break
        worst = max(worst, spent)
    return worst


def nrep_from_times(t1: int | float, t_msize: int | float, K: int) -> int:
    """``max(ceil(t1 / t_msize), K)``."""
    if t_msize <= 0:
        raise DegenerateSamples("minimum latency must be positive")
    if isinstance(t1, int) and isinstance(t_msize, int):
        return max(-(-t1 // t_msize), K)
    return max(math.ceil(t1 / t_msize), K)


def estimate_nrep(func: BenchFunction, msize: int, t1: int, cfg: NrepConfig, launcher: Launcher,
                  seed: int = 0) -> int:
    if t1 <= 0:
        raise ValueError("t1 must be positive")
    batch = time_function(func, msize, cfg.b1, launcher, derive_seed(seed, "b1", func.name, msize))
    samples = list(batch.latencies_ns)
    if all(s == 0 for s in samples):
        raise DegenerateSamples(f"{func.name} at {msize} B: all samples are zero")
    if cfg.b2 > 0 and (len(samples) < 2 or rse(samples) >= cfg.rse_threshold_batch):
        more = time_function(func, msize, cfg.b2, launcher, derive_seed(seed, "b2", func.name, msize))
        samples += more.latencies_ns
    return nrep_from_times(t1, min(samples), cfg.K)


def run_benchmark(plan: Sequence[tuple[BenchFunction, Sequence[int]]], cfg: NrepConfig,
                  launcher: Launcher, seed: int = 0) -> Iterator[SampleSet]:
    """Estimate t1 and nrep per function, then emit ``nmpiruns`` SampleSets per size."""
    if not plan:
        raise ValueError("empty benchmark plan")
    for func, msizes in plan:
        t1 = estimate_t1(func, cfg, launcher, seed)
        for msize in msizes:
            nrep = estimate_nrep(func, msize, t1, cfg, launcher, seed)
            for run_idx in range(cfg.nmpiruns):
                yield time_function(func, msize, nrep, launcher,
                                    derive_seed(seed, "run", func.name, msize, run_idx), run_idx)


# ----------------------------------------------------------------------------
# CSV


def format_us(ns: int) -> str:
    sign = "-" if ns < 0 else ""
    ns = abs(ns)
    return f"{sign}{ns // 1000}.{ns % 1000:03d}"


def parse_us(text: str) -> int:
    return int((Decimal(text) * 1000).to_integral_value())


def write_csv(records: Iterable[SampleSet], out: TextIO, header: Mapping[str, object] | None = None,
              footer: Iterable[str] = ()) -> None:
    for key, value in (header or {}).items():
        out.write(f"# {key}={value}\n")
    out.write(",".join(CSV_COLUMNS) + "\n")
    for s in records:
        for i, ns in enumerate(s.latencies_ns):
            out.write(f"{s.function},{s.msize},{s.nprocs},{s.mpirun},{i},{format_us(ns)}\n")
    for line in footer:
        out.write(line.rstrip("\n") + "\n")


@dataclass
class BenchData:
    header: dict[str, str]
    records: list[SampleSet]
    footer: list[str]


def read_csv(source: TextIO, path: str | None = None) -> BenchData:
    """Parse a raw-sample CSV back into SampleSets (one per function/size/run)."""
    header: dict[str, str] = {}
    footer: list[str] = []
    groups: dict[tuple[str, int, int, int], dict[int, int]] = {}
    seen_columns = False
    for lineno, line in enumerate(source, 1):
        line = line.rstrip("\n")
        if not line.strip():
            continue
        if line.startswith("#"):
            if seen_columns:
                footer.append(line)
            else:
                key, sep, value = line[1:].strip().partition("=")
                if sep:
                    header[key.strip()] = value.strip()
            continue
        if not seen_columns:
            if tuple(c.strip() for c in line.split(",")) != CSV_COLUMNS:
                raise ParseError("missing CSV column header", lineno, path)
            seen_columns = True
            continue
        row = next(csv.reader(io.StringIO(line)))
        if len(row) != len(CSV_COLUMNS):
            raise ParseError(f"expected {len(CSV_COLUMNS)} fields, got {len(row)}", lineno, path)
        try:
            func = row[0].strip()
            function_kind(func)
            msize, nprocs, run, rep = (int(x) for x in row[1:5])
            latency = parse_us(row[5])
        except (ValueError, ArithmeticError, PgtuneError) as exc:
            raise ParseError(f"bad row: {exc}", lineno, path) from None
        slot = groups.setdefault((func, msize, nprocs, run), {})
        if rep in slot:
            raise ParseError(f"duplicate rep_idx {rep}", lineno, path)
        slot[rep] = latency
    if not seen_columns:
        raise ParseError("no CSV column header found", None, path)
    records = [SampleSet(f, m, p, r, [reps[i] for i in sorted(reps)])
               for (f, m, p, r), reps in groups.items()]
    return BenchData(header, records, footer)
