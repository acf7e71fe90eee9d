"""Acceptance criteria, one test per criterion.

Each test prints a single ``CRITERION <n> PASS|FAIL`` line with the measured
quantities so the log doubles as an acceptance report.
"""

from __future__ import annotations

import random
import shutil
import time

import numpy as np
import pytest

from _util import check_outputs, combos, expected, initial_buffers, make_call, run_mockup
from pgtune.bench import Launcher, NrepConfig, default_function, estimate_t1, nrep_from_times, read_csv, rse
from pgtune.cli import main
from pgtune.collectives import CollectiveCall, CollectiveKind, call_for_msize, default_table
from pgtune.dispatch import INSUFFICIENT_SCRATCH, PROFILE_HIT, dispatch, init_tuned
from pgtune.mockups import MockupConfig, MockupId, extra_memory_required, local_id, mockups_for
from pgtune.mockups import tunable_kinds
from pgtune.profile import MessageRange, Profile, format_profile, parse_profile, parse_profile_text, write_profile
from pgtune.runtime import CostModel, Datatype, ReduceOp, run_spmd

K = CollectiveKind
M = MockupId
INT = 4  # extent of MPI_INT


@pytest.fixture
def report(capsys):
    def emit(number: int, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\nCRITERION {number} {'PASS' if ok else 'FAIL'}: {detail}")
        assert ok, detail

    return emit


# ----------------------------------------------------------------------------
# 1. mock-up equivalence


def test_criterion_1_mockup_equivalence(report):
    t0 = time.perf_counter()
    alt_defaults = default_table({K.BCAST: "binomial", K.GATHER: "linear"})
    runs = failures = 0
    for mid in MockupId:
        kind = mid.lhs
        for p in (1, 2, 3, 4, 5, 8, 16):
            for n0 in sorted({0, 1, 2, 7, 16, p, 3 * p + 1}):
                for dt, op in combos(kind):
                    for seed in range(3):
                        rng = np.random.default_rng([mid.number, p, n0, dt.value, seed])
                        call = make_call(kind, n0, p, dt, op, root=int(rng.integers(0, p)))
                        sends, recvs = initial_buffers(call, rng)
                        defaults = alt_defaults if seed == 1 else None
                        cfg = MockupConfig(1 + seed * 3)
                        res, _ = run_mockup(mid, call, sends, recvs, cfg=cfg, defaults=defaults)
                        runs += 1
                        if check_outputs(call, res.outputs, expected(call, sends, recvs)):
                            failures += 1
    elapsed = time.perf_counter() - t0
    report(1, failures == 0 and elapsed < 60,
           f"{runs} mock-up runs, {failures} oracle mismatches, {elapsed:.1f} s (limit 60 s)")


# ----------------------------------------------------------------------------
# 2. Table 1 accounting


def _pad(n: int, p: int) -> int:
    """Smallest c >= 0 making n + c divisible by p."""
    return (-n) % p


def _table1(mid: MockupId, n: int, p: int, e: int, c_chunk: int) -> tuple[int, int]:
    """(message bytes, int bytes) transcribed row by row from the published table."""
    c = _pad(n, p)
    padded = (n + c) + (n + c) // p
    chunk = max(n // p + c_chunk, c_chunk)
    others = p > 1
    rows = {
        M.ALLGATHER_AS_GATHER_BCAST: (0, 0),
        M.ALLGATHER_AS_ALLTOALL: (p * n, 0),
        M.ALLGATHER_AS_ALLREDUCE: (p * n, 0),
        M.ALLGATHER_AS_ALLGATHERV: (0, 2 * p),
        M.ALLREDUCE_AS_REDUCE_BCAST: (0, 0),
        M.ALLREDUCE_AS_REDUCESCATTERBLOCK_ALLGATHER: (padded, 0),
        M.ALLREDUCE_AS_REDUCESCATTER_ALLGATHERV: (chunk, 2 * p),
        M.ALLTOALL_AS_ALLTOALLV: (0, 2 * p),
        M.BCAST_AS_ALLGATHERV: (n, 2 * p),
        M.BCAST_AS_SCATTER_ALLGATHER: (padded, 0),
        M.GATHER_AS_ALLGATHER: (p * n if others else 0, 0),
        M.GATHER_AS_GATHERV: (0, 2 * p),
        M.GATHER_AS_REDUCE: (p * n, 0),
        M.REDUCE_AS_ALLREDUCE: (n if others else 0, 0),
        M.REDUCE_AS_REDUCESCATTERBLOCK_GATHER: (padded, 0),
        M.REDUCE_AS_REDUCESCATTER_GATHERV: (chunk, 2 * p),
        M.REDUCESCATTERBLOCK_AS_REDUCE_SCATTER: (n, 0),
        M.REDUCESCATTERBLOCK_AS_REDUCESCATTER: (0, p),
        M.REDUCESCATTERBLOCK_AS_ALLREDUCE: (n, 0),
        M.SCAN_AS_EXSCAN_REDUCELOCAL: (0, 0),
        M.SCATTER_AS_BCAST: (n if others else 0, 0),
        M.SCATTER_AS_SCATTERV: (0, 2 * p),
    }
    msg, ints = rows[mid]
    return msg * e, ints * INT


def test_criterion_2_table1_accounting(report):
    t0 = time.perf_counter()
    rng = random.Random(2)
    checked = formula_bad = hw_bad = 0
    for mid in MockupId:
        kind = mid.lhs
        for _ in range(50):
            p = rng.randint(1, 16)
            n = rng.randint(0, 200)
            if kind in (K.SCATTER, K.REDUCE_SCATTER_BLOCK):
                n -= n % p  # n is the full send count and must split evenly
            dt, op = rng.choice(combos(kind))
            cfg = MockupConfig(rng.randint(1, 9))
            call = CollectiveCall(kind, n, dt, p, op, rng.randrange(p) if kind.rooted else 0)
            req = extra_memory_required(mid, call, cfg)
            want = _table1(mid, n, p, dt.extent, cfg.chunk_size)
            formula_bad += (req.msg_bytes, req.int_bytes) != want
            sends, recvs = initial_buffers(call, np.random.default_rng(checked))
            _, scratch = run_mockup(mid, call, sends, recvs, cfg=cfg)
            high = (max(s.msg_high_water for s in scratch), max(s.int_high_water for s in scratch))
            hw_bad += high != (req.msg_bytes, req.int_bytes)
            checked += 1
    elapsed = time.perf_counter() - t0
    report(2, formula_bad == 0 and hw_bad == 0 and elapsed < 10,
           f"{checked} (row, n, p) cases, {formula_bad} formula mismatches, {hw_bad} high-water mismatches, "
           f"{elapsed:.1f} s (limit 10 s)")


# ----------------------------------------------------------------------------
# 3. profile golden file

LISTING_1 = (
    "# pgtune profile\n"
    "MPI_Scatter\n"
    "1024 # nb. of. processes\n"
    "2    # nb. of mock-up impl. \n"
    "2 scatter_as_bcast\n"
    "3 scatter_as_scatterv\n"
    "8    # nb. of ranges\n"
    "1 1 2 # byte_range_start byte_range_end alg_id\n"
    "8 8 2\n"
    "32 32 2\n"
    "64 64 2\n"
    "100 100 2\n"
    "512 512 2\n"
    "1024 1024 2\n"
    "10000 10000 3  \n"
)
CANONICAL_1 = "".join(line.rstrip() + "\n" for line in LISTING_1.splitlines())


def test_criterion_3_profile_golden(report, tmp_path):
    prof = parse_profile_text(LISTING_1)
    path = tmp_path / "MPI_Scatter.1024.profile"
    write_profile(prof, path)
    checks = {
        "p=1024": prof.nprocs == 1024,
        "2 mock-ups": len(prof.mockups) == 2,
        "8 ranges": len(prof.ranges) == 8,
        "lookup(100)": prof.lookup(100) is M.SCATTER_AS_BCAST,
        "lookup(10000)": prof.lookup(10000) is M.SCATTER_AS_SCATTERV,
        "lookup(200)": prof.lookup(200) is None,
        "byte-identical": path.read_text() == CANONICAL_1 == format_profile(parse_profile(path)),
    }
    failed = [k for k, ok in checks.items() if not ok]
    report(3, not failed, "all checks hold" if not failed else f"failed: {', '.join(failed)}")


# ----------------------------------------------------------------------------
# 4. deterministic end-to-end tuning under the Hockney model

ALPHA_NS, BETA_NS = 100_000, 10  # alpha = 100 us, beta = 0.01 us/B


def _hockney_oracle(m: int) -> dict[str, int]:
    """Latencies (ns) at p=8 for m bytes per process, evaluated by hand.

    ring allgather: 7 steps of one block.
    gather (binomial) then bcast (binomial): 3 rounds gathering 1+2+4 blocks
    into the root, then 3 rounds forwarding the full 8m buffer.
    alltoall (pairwise) and allgatherv (linear): 7 exchanges of one block.
    allreduce (recursive doubling) on the 8m-byte buffer: 3 exchanges.
    """
    return {
        "MPI_Allgather": 7 * (ALPHA_NS + BETA_NS * m),
        "allgather_as_gather_bcast": 3 * ALPHA_NS + 7 * BETA_NS * m + 3 * (ALPHA_NS + BETA_NS * 8 * m),
        "allgather_as_alltoall": 7 * (ALPHA_NS + BETA_NS * m),
        "allgather_as_allreduce": 3 * (ALPHA_NS + BETA_NS * 8 * m),
        "allgather_as_allgatherv": 7 * (ALPHA_NS + BETA_NS * m),
    }


def test_criterion_4_hockney_end_to_end(report, tmp_path):
    t0 = time.perf_counter()
    pdir = tmp_path / "profiles"
    cfg = tmp_path / "hockney.cfg"
    cfg.write_text(
        "alpha_us=100\nbeta_us_per_byte=0.01\nnprocs=8\ncollectives=allgather\n"
        "default_alg.allgather=ring\ndefault_alg.bcast=binomial\ndefault_alg.gather=binomial\n"
        f"profile_dir={pdir}\n"
    )
    bench_csv, run_csv = tmp_path / "bench.csv", tmp_path / "run.csv"
    assert main(["bench", "-c", str(cfg), "-o", str(bench_csv)]) == 0
    assert main(["tune", "-c", str(cfg), "-o", str(tmp_path / "tune.txt"), str(bench_csv)]) == 0
    assert main(["run", "-c", str(cfg), "-o", str(run_csv)]) == 0

    bench = read_csv(open(bench_csv)).records
    msizes = sorted({r.msize for r in bench})
    # every benchmarked latency must equal the hand-evaluated recurrence
    model_ok = all(set(r.latencies_ns) == {_hockney_oracle(r.msize)[r.function]} for r in bench)
    want_sizes = []
    for m in msizes:
        lat = _hockney_oracle(m)
        best = min(v for k, v in lat.items() if k != "MPI_Allgather")
        if 10 * best <= 9 * lat["MPI_Allgather"]:
            want_sizes.append(m)

    prof_path = pdir / "MPI_Allgather.8.profile"
    prof = parse_profile(prof_path) if prof_path.exists() else None
    got_sizes = [r.start for r in prof.ranges] if prof else []
    tuned = {r.msize: set(r.latencies_ns) for r in read_csv(open(run_csv)).records}
    rule_ok = bool(got_sizes) and all(
        max(tuned[m]) * 10 <= 9 * _hockney_oracle(m)["MPI_Allgather"] for m in got_sizes)
    others_equal = all(tuned[m] == {_hockney_oracle(m)["MPI_Allgather"]} for m in msizes if m not in got_sizes)
    elapsed = time.perf_counter() - t0
    ok = model_ok and got_sizes == want_sizes and min(got_sizes or [10**9]) == 1 and rule_ok \
        and others_equal and elapsed < 60
    report(4, ok,
           f"bench matches hand oracle: {model_ok}; profiled sizes {got_sizes[0] if got_sizes else '-'}.."
           f"{got_sizes[-1] if got_sizes else '-'} B ({len(got_sizes)} sizes, oracle {len(want_sizes)}); "
           f"tuned <= 0.9 x Default at all profiled sizes: {rule_ok}; {elapsed:.1f} s (limit 60 s)")


# ----------------------------------------------------------------------------
# 5. NREP properties


def test_criterion_5_nrep_properties(report):
    rng = random.Random(5)
    floor_bad = formula_bad = 0
    for _ in range(10_000):
        t1, t, k = rng.randint(1, 10**9), rng.randint(1, 10**7), rng.randint(1, 1000)
        n = nrep_from_times(t1, t, k)
        floor_bad += n < k
        ceil = -(-t1 // t)
        formula_bad += ceil > k and n != ceil
    launcher = _CountingLauncher(8, CostModel(alpha_us=100, beta_us_per_byte=0.01))
    func = default_function(K.ALLGATHER, default_table())
    estimate_t1(func, NrepConfig(nmpiruns=1), launcher)
    obs = len(launcher.samples)
    rse0 = rse(launcher.samples)
    ok = floor_bad == 0 and formula_bad == 0 and obs == 2 and rse0 == 0
    report(5, ok, f"10000 random (t1, t, K): {floor_bad} below K, {formula_bad} off-formula; "
                  f"jitter-free t1 used {obs} observations with RSE {rse0}")


class _CountingLauncher(Launcher):
    def __init__(self, nprocs, model):
        super().__init__(nprocs, model)
        object.__setattr__(self, "samples", [])

    def run(self, program, seed):
        res = super().run(program, seed)
        self.samples.append(max(out[0] for out in res.outputs))
        return res


# ----------------------------------------------------------------------------
# 6. lookup equivalence


def _random_profile(rng: random.Random) -> Profile:
    kind = rng.choice(tunable_kinds())
    table = {local_id(m): m.value for m in mockups_for(kind)}
    ranges, pos = [], rng.randint(0, 10)
    for _ in range(rng.randint(0, 40)):
        start = pos + rng.randint(0, 300)
        end = start + rng.choice([0, rng.randint(0, 500)])
        ranges.append(MessageRange(start, end, rng.choice(list(table))))
        pos = end + 1
    return Profile(kind, rng.randint(1, 1024), table, tuple(ranges))


def test_criterion_6_lookup_equivalence(report):
    rng = random.Random(6)
    disagreements = 0
    for _ in range(1000):
        prof = _random_profile(rng)
        top = (prof.ranges[-1].end if prof.ranges else 0) + 50
        for _ in range(100):
            m = rng.randint(0, top)
            linear = next((M.parse(prof.mockups[r.alg_id]) for r in prof.ranges if r.start <= m <= r.end), None)
            disagreements += prof.lookup(m) != linear
    report(6, disagreements == 0, f"1000 profiles x 100 sizes, {disagreements} disagreements")


# ----------------------------------------------------------------------------
# 7. dispatch safety


def _dtype_for(kind):
    return (Datatype.INT32, ReduceOp.SUM) if kind.reduction else (Datatype.BYTE, None)


def test_criterion_7_dispatch_safety(report, tmp_path):
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    calls = wrong = bad_fallback = hits = fallbacks = 0
    for kind in tunable_kinds():
        mids = mockups_for(kind)
        dt, op = _dtype_for(kind)
        table = {local_id(m): m.value for m in mids}
        for p in (1, 2, 3, 5, 8):
            sizes = [dt.extent * k for k in (1, 3, 8, 13)]
            reqs = sorted({0} | {v for m in mids for s in sizes
                                 for r in [extra_memory_required(m, call_for_msize(kind, s, p, dt, op))]
                                 for v in (r.msg_bytes - 1, r.msg_bytes, r.int_bytes - 1, r.int_bytes) if v >= 0})
            for rot in range(len(mids)):
                prof = Profile(kind, p, table, tuple(
                    MessageRange(s, s, local_id(mids[(i + rot) % len(mids)])) for i, s in enumerate(sizes)))
                d = tmp_path / f"{kind.cli_name}_{p}_{rot}"
                d.mkdir()
                write_profile(prof, d / prof.filename)
                for cap in reqs:
                    rt = init_tuned(d, p, cap, cap, MockupConfig(2), default_table())
                    for i, s in enumerate(sizes):
                        call = call_for_msize(kind, s, p, dt, op)
                        call = call.with_(root=(i + rot) % p) if kind.rooted else call
                        sends, recvs = initial_buffers(call, rng)
                        bufs = [None if r is None else r.copy() for r in recvs]

                        def prog(comm, call=call, sends=sends, bufs=bufs, rt=rt):
                            yield from dispatch(rt, comm, call, sends[comm.rank], bufs[comm.rank])
                            return bufs[comm.rank]

                        res = run_spmd(p, prog)
                        calls += 1
                        wrong += bool(check_outputs(call, res.outputs, expected(call, sends, recvs)))
                        dec = rt.decisions[-1]
                        req = extra_memory_required(mids[(i + rot) % len(mids)], call, MockupConfig(2))
                        fits = req.msg_bytes <= cap and req.int_bytes <= cap
                        if fits:
                            hits += 1
                            bad_fallback += (dec.reason, dec.chosen) != (PROFILE_HIT, mids[(i + rot) % len(mids)])
                        else:
                            fallbacks += 1
                            bad_fallback += (dec.reason, dec.chosen) != (INSUFFICIENT_SCRATCH, None)
    elapsed = time.perf_counter() - t0
    report(7, wrong == 0 and bad_fallback == 0 and elapsed < 30,
           f"{calls} dispatched calls ({hits} mock-up, {fallbacks} degraded to Default), {wrong} oracle "
           f"mismatches, {bad_fallback} wrong decisions, {elapsed:.1f} s (limit 30 s)")


# ----------------------------------------------------------------------------
# 8. determinism


def _pipeline(root, cfg_text: str) -> dict:
    """Run bench, tune, run and report in ``root``; return {relative path: bytes}."""
    cfg = root / "run.cfg"
    cfg.write_text(cfg_text + "profile_dir=profiles\n")
    assert main(["bench", "-c", "run.cfg", "-o", "bench.csv"]) == 0
    assert main(["tune", "-c", "run.cfg", "-o", "tune.txt", "bench.csv"]) == 0
    assert main(["run", "-c", "run.cfg", "-o", "run.csv"]) == 0
    assert main(["report", "-o", "report.csv", "bench.csv", "run.csv"]) == 0
    out = {str(p.relative_to(root)): p.read_bytes() for p in root.rglob("*") if p.is_file()}
    shutil.rmtree(root / "profiles")
    for name in list(out):
        if "/" not in name:
            (root / name).unlink()
    return out


def test_criterion_8_determinism(report, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    cfg = ("alpha_us=20\nbeta_us_per_byte=0.005\njitter_fraction=0.05\nseed=42\nnprocs=6\n"
           "collectives=bcast,allgather,reduce\nmsizes=1,8,64,1024\n")
    first = _pipeline(tmp_path, cfg)
    second = _pipeline(tmp_path, cfg)
    same = first == second
    profiles = sorted(f for f in first if f.endswith(".profile"))
    report(8, same and bool(profiles),
           f"{len(first)} output files byte-identical across two invocations: {same} "
           f"(profiles: {', '.join(profiles) or 'none'})")
