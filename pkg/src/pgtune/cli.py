"""pgtune command line: bench, tune, run and report."""

from __future__ import annotations

import argparse
import os
import sys
from contextlib import contextmanager
from pathlib import Path
from typing import Iterable, Sequence, TextIO

from .bench import BenchData, BenchFunction, default_function, mockup_function, read_csv, run_benchmark, write_csv
from .collectives import CollectiveKind
from .config import RunConfig, load_config, parse_module_flag, parse_override
from .dispatch import init_tuned, replacement_footer, tuned_function
from .errors import ConfigError, KeyMismatch, ParseError, PgtuneError
from .mockups import MockupId, mockups_for
from .profile import group_records, median_of_medians, run_medians, detect_violations, write_profile

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3


def bench_plan(cfg: RunConfig, pins: Sequence[tuple[CollectiveKind, MockupId]] = ()
               ) -> list[tuple[BenchFunction, Sequence[int]]]:
    """Default plus every mock-up per collective, or only the pinned mock-ups."""
    pinned: dict[CollectiveKind, list[MockupId]] = {}
    for kind, mid in pins:
        pinned.setdefault(kind, [])
        if mid not in pinned[kind]:
            pinned[kind].append(mid)
    kinds = cfg.selected() if cfg.collectives is not None or not pinned else list(pinned)
    plan = []
    for kind in kinds:
        if kind in pinned:
            funcs = [mockup_function(m, cfg.defaults, cfg.mockup) for m in pinned[kind]]
        else:
            funcs = [default_function(kind, cfg.defaults)]
            funcs += [mockup_function(m, cfg.defaults, cfg.mockup) for m in mockups_for(kind)]
        plan += [(f, cfg.msizes) for f in funcs]
    return plan


@contextmanager
def _output(path: str | None):
    if path is None or path == "-":
        yield sys.stdout
    else:
        with open(path, "w", newline="") as fh:
            yield fh


def cmd_bench(cfg: RunConfig, pins: Sequence[tuple[CollectiveKind, MockupId]] = (),
              out: TextIO | None = None) -> None:
    records = run_benchmark(bench_plan(cfg, pins), cfg.nrep, cfg.launcher, cfg.seed)
    header = cfg.header()
    for kind, mid in pins:
        header[f"module.{kind.cli_name}"] = mid.value
    write_csv(records, out or sys.stdout, header)


def _read_inputs(paths: Iterable[str]) -> list[BenchData]:
    out = []
    for p in paths:
        try:
            with open(p, newline="") as fh:
                out.append(read_csv(fh, p))
        except OSError as exc:
            raise ParseError(f"cannot read: {exc.strerror}", None, p) from None
    return out


def cmd_tune(cfg: RunConfig, inputs: Sequence[str], out: TextIO | None = None) -> list[Path]:
    """Detect violations in benchmark CSVs and write one profile per affected collective."""
    records = [r for data in _read_inputs(inputs) for r in data.records]
    report, profiles = detect_violations(records, cfg.replacement_threshold)
    written = []
    if profiles:
        d = Path(cfg.profile_dir)
        d.mkdir(parents=True, exist_ok=True)
        for prof in profiles:
            path = d / prof.filename
            write_profile(prof, path)
            written.append(path)
    out = out or sys.stdout
    out.write(report.summary())
    for path in written:
        out.write(f"wrote {path}\n")
    return written


def cmd_run(cfg: RunConfig, out: TextIO | None = None) -> None:
    """Re-run the Default benchmark plan through the tuned runtime."""
    rt = init_tuned(cfg.profile_dir, cfg.nprocs, cfg.size_msg_buffer_bytes, cfg.size_int_buffer_bytes,
                    cfg.mockup, cfg.defaults)
    plan = [(tuned_function(rt, kind), cfg.msizes) for kind in cfg.selected()]
    records = list(run_benchmark(plan, cfg.nrep, cfg.launcher, cfg.seed))
    header = cfg.header()
    header["tuned"] = "yes"
    header["profile_dir"] = cfg.profile_dir
    write_csv(records, out or sys.stdout, header, replacement_footer(rt))


REPORT_COLUMNS = ("collective", "nprocs", "msize_bytes", "source", "function", "median_us",
                  "relative_to_default", "min_run_median_us", "max_run_median_us")


def _us(value) -> str:
    return f"{float(value) / 1000:.3f}"


def cmd_report(default_csv: str, others: Sequence[str], out: TextIO | None = None) -> None:
    """Median-of-medians of every function relative to the Default, with run-median extremes."""
    default_data, *other_data = _read_inputs([default_csv, *others])
    ref_groups = group_records(default_data.records)
    reference = {}
    for key, funcs in ref_groups.items():
        kind = key[0]
        if kind.mpi_name in funcs:
            reference[key] = median_of_medians(funcs[kind.mpi_name])

    out = out or sys.stdout
    out.write(",".join(REPORT_COLUMNS) + "\n")
    sources = [(default_csv, default_data)] + list(zip(others, other_data))
    for path, data in sources:
        tuned = data.header.get("tuned") == "yes"
        for key, funcs in sorted(group_records(data.records).items(),
                                 key=lambda kv: (kv[0][0].mpi_name, kv[0][1], kv[0][2])):
            kind, p, msize = key
            if key not in reference:
                raise KeyMismatch(f"{path}: no Default reference for {kind.mpi_name} p={p} at {msize} B")
            ref = reference[key]
            for fname in sorted(funcs, key=lambda f: (f != kind.mpi_name, f)):
                runs = funcs[fname]
                med = median_of_medians(runs)
                per_run = run_medians(runs)
                label = ("Tuned" if tuned else "Default") if fname == kind.mpi_name else fname
                rel = f"{float(med / ref):.6f}" if ref else "nan"
                out.write(f"{kind.mpi_name},{p},{msize},{os.path.basename(path)},{label},{_us(med)},"
                          f"{rel},{_us(min(per_run))},{_us(max(per_run))}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pgtune", description=__doc__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-c", "--config", help="key=value configuration file (default: $PGTUNE_CONFIG)")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a configuration key (repeatable)")
    common.add_argument("-o", "--output", help="output file (default: stdout)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("bench", parents=[common], help="benchmark Defaults and mock-ups, emit raw CSV")
    p.add_argument("--module", action="append", default=[], metavar="COLL:alg=NAME",
                   help="benchmark only this mock-up for COLL (repeatable)")

    p = sub.add_parser("tune", parents=[common], help="detect violations and write profiles")
    p.add_argument("inputs", nargs="+", help="benchmark CSV files")

    sub.add_parser("run", parents=[common], help="benchmark through the tuned runtime")

    p = sub.add_parser("report", parents=[common], help="latencies relative to the Default")
    p.add_argument("default_csv", help="CSV holding the Default measurements")
    p.add_argument("others", nargs="*", help="tuned or mock-up CSVs")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        overrides = dict(parse_override(s) for s in args.set)
        cfg = load_config(args.config, overrides)
        if args.command == "bench":
            pins = [parse_module_flag(m) for m in args.module]
            with _output(args.output) as out:
                cmd_bench(cfg, pins, out)
        elif args.command == "tune":
            with _output(args.output) as out:
                cmd_tune(cfg, args.inputs, out)
        elif args.command == "run":
            with _output(args.output) as out:
                cmd_run(cfg, out)
        else:
            with _output(args.output) as out:
                cmd_report(args.default_csv, args.others, out)
    except ConfigError as exc:
        print(f"pgtune: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (PgtuneError, OSError) as exc:
        print(f"pgtune: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
