"""Violation detection and the performance-profile text format."""

from __future__ import annotations

import bisect
import os
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .bench import SampleSet, function_kind
from .collectives import CollectiveKind
from .errors import EmptyInput, InvariantViolation, MissingDefault, ParseError, PgtuneError
from .mockups import MockupId, local_id, mockups_for

PROFILE_MAGIC = "# pgtune profile"
DEFAULT_THRESHOLD = 0.10


@dataclass(frozen=True)
class MessageRange:
    start: int
    end: int
    alg_id: int

    def __post_init__(self):
        if self.start < 0 or self.start > self.end:
            raise InvariantViolation(f"bad range {self.start}..{self.end}")


@dataclass(frozen=True, eq=True)
class Profile:
    """Replacement mock-ups per message range for one collective and process count."""

    collective: CollectiveKind
    nprocs: int
    mockups: Mapping[int, str]
    ranges: tuple[MessageRange, ...]
    _starts: tuple[int, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "mockups", dict(sorted(self.mockups.items())))
        object.__setattr__(self, "ranges", tuple(self.ranges))
        if self.nprocs < 1:
            raise InvariantViolation("nprocs must be >= 1")
        for lid, name in self.mockups.items():
            mid = MockupId.parse(name)
            if mid.lhs is not self.collective:
                raise InvariantViolation(f"{name} does not implement {self.collective.mpi_name}")
            if lid < 2:
                raise InvariantViolation(f"mock-up id {lid} clashes with the Default id 1")
        prev_end = -1
        for r in self.ranges:
            if r.start <= prev_end:
                raise InvariantViolation(f"range {r.start}..{r.end} overlaps or is out of order")
            if r.alg_id not in self.mockups:
                raise InvariantViolation(f"range {r.start}..{r.end} uses unknown alg_id {r.alg_id}")
            prev_end = r.end
        object.__setattr__(self, "_starts", tuple(r.start for r in self.ranges))

    @property
    def filename(self) -> str:
        return profile_filename(self.collective, self.nprocs)

    def lookup(self, msize: int) -> MockupId | None:
        """Mock-up whose range contains ``msize``, by binary search."""
        i = bisect.bisect_right(self._starts, msize) - 1
        if i < 0:
            return None
        r = self.ranges[i]
        if msize > r.end:
            return None
        return MockupId.parse(self.mockups[r.alg_id])


def lookup(profile: Profile, msize: int) -> MockupId | None:
    return profile.lookup(msize)


def profile_filename(kind: CollectiveKind, nprocs: int) -> str:
    return f"{kind.mpi_name}.{nprocs}.profile"


def format_profile(profile: Profile) -> str:
    lines = [PROFILE_MAGIC, profile.collective.mpi_name,
             f"{profile.nprocs:<4} # nb. of. processes",
             f"{len(profile.mockups):<4} # nb. of mock-up impl."]
    lines += [f"{lid} {name}" for lid, name in profile.mockups.items()]
    lines.append(f"{len(profile.ranges):<4} # nb. of ranges")
    for i, r in enumerate(profile.ranges):
        line = f"{r.start} {r.end} {r.alg_id}"
        if i == 0:
            line += " # byte_range_start byte_range_end alg_id"
        lines.append(line)
    return "\n".join(lines) + "\n"


def write_profile(profile: Profile, path: str | os.PathLike) -> None:
    Path(path).write_text(format_profile(profile))


def parse_profile_text(text: str, path: str | None = None) -> Profile:
    """Parse the profile format; whitespace is free and ``#`` starts a comment."""
    lines = text.splitlines()
    if not lines or lines[0].strip() != PROFILE_MAGIC:
        raise ParseError(f"first line must be '{PROFILE_MAGIC}'", 1, path)
    # strip comments, keep line numbers of content lines
    content = []
    for no, raw in enumerate(lines[1:], 2):
        body = raw.split("#", 1)[0].split()
        if body:
            content.append((no, body))
    it = iter(content)

    def take(what: str, nfields: int):
        try:
            no, fields = next(it)
        except StopIteration:
            raise ParseError(f"unexpected end of file, expected {what}", len(lines), path) from None
        if len(fields) != nfields:
            raise ParseError(f"expected {what} ({nfields} field(s)), got {' '.join(fields)!r}", no, path)
        return no, fields

    def integer(tok: str, no: int) -> int:
        try:
            v = int(tok)
        except ValueError:
            raise ParseError(f"expected an integer, got {tok!r}", no, path) from None
        if v < 0:
            raise ParseError(f"negative value {v}", no, path)
        return v

    no, (name,) = take("collective name", 1)
    try:
        kind = CollectiveKind.parse(name)
    except PgtuneError as exc:
        raise ParseError(str(exc), no, path) from None
    no, (tok,) = take("number of processes", 1)
    nprocs = integer(tok, no)
    no, (tok,) = take("number of mock-up implementations", 1)
    k = integer(tok, no)
    table: dict[int, str] = {}
    for _ in range(k):
        no, (tid, mname) = take("'<id> <mockup_name>'", 2)
        lid = integer(tid, no)
        try:
            MockupId.parse(mname)
        except PgtuneError as exc:
            raise ParseError(str(exc), no, path) from None
        if lid in table:
            raise ParseError(f"duplicate mock-up id {lid}", no, path)
        table[lid] = mname
    no, (tok,) = take("number of ranges", 1)
    m = integer(tok, no)
    ranges = []
    for _ in range(m):
        no, fields = take("'<start> <end> <alg_id>'", 3)
        s, e, a = (integer(f, no) for f in fields)
        if s > e:
            raise InvariantViolation(f"{path or 'profile'}:{no}: range start {s} exceeds end {e}")
        ranges.append(MessageRange(s, e, a))
    extra = next(it, None)
    if extra is not None:
        raise ParseError("trailing content after the declared ranges", extra[0], path)
    return Profile(kind, nprocs, table, tuple(ranges))


def parse_profile(path: str | os.PathLike) -> Profile:
    p = Path(path)
    return parse_profile_text(p.read_text(), str(p))


# ----------------------------------------------------------------------------
# statistics and violation detection


def median(values: Sequence) -> Fraction:
    """Exact median; even-length lists average the two central values."""
    if not values:
        raise EmptyInput("median of an empty list")
    s = sorted(Fraction(v) for v in values)
    mid = len(s) // 2
    return s[mid] if len(s) % 2 else (s[mid - 1] + s[mid]) / 2


def run_medians(runs: Iterable[SampleSet]) -> list[Fraction]:
    out = []
    for s in runs:
        if not s.latencies_ns:
            raise EmptyInput(f"{s.function} at {s.msize} B: run {s.mpirun} has no samples")
        out.append(median(s.latencies_ns))
    return out


def median_of_medians(runs: Sequence[SampleSet]) -> Fraction:
    """Median over the per-run medians (ns)."""
    if not runs:
        raise EmptyInput("no runs given")
    return median(run_medians(runs))


def group_records(records: Iterable[SampleSet]) -> dict[tuple[CollectiveKind, int, int], dict[str, list[SampleSet]]]:
    """(collective, nprocs, msize) -> function id -> runs."""
    groups: dict = {}
    for s in records:
        key = (s.collective, s.nprocs, s.msize)
        groups.setdefault(key, {}).setdefault(s.function, []).append(s)
    return groups


@dataclass(frozen=True)
class ViolationEntry:
    collective: CollectiveKind
    nprocs: int
    msize: int
    default_ns: Fraction
    mockups_ns: Mapping[MockupId, Fraction]
    winner: MockupId | None
    improvement: Fraction | None


@dataclass
class ViolationReport:
    threshold: float
    entries: list[ViolationEntry]

    def violations(self) -> list[ViolationEntry]:
        return [e for e in self.entries if e.winner is not None]

    def summary(self) -> str:
        lines = []
        keys = sorted({(e.collective.mpi_name, e.nprocs) for e in self.entries})
        for name, p in keys:
            hits = [e for e in self.violations() if (e.collective.mpi_name, e.nprocs) == (name, p)]
            if not hits:
                lines.append(f"{name} p={p}: no violations")
                continue
            lines.append(f"{name} p={p}: {len(hits)} violation(s)")
            for e in hits:
                lines.append(f"  {e.msize} B: {e.winner.value} {float(e.mockups_ns[e.winner]) / 1000:.3f} us"
                             f" vs Default {float(e.default_ns) / 1000:.3f} us"
                             f" ({float(e.improvement) * 100:.1f}% faster)")
        if not lines:
            lines.append("no violations")
        return "\n".join(lines) + "\n"


def detect_violations(records: Iterable[SampleSet], threshold: float = DEFAULT_THRESHOLD
                      ) -> tuple[ViolationReport, list[Profile]]:
    """Select, per message size, the fastest mock-up beating the Default by ``threshold``."""
    if not 0 <= threshold < 1:
        raise ValueError("threshold must lie in [0, 1)")
    limit = 1 - Fraction(str(threshold))
    entries = []
    for (kind, p, msize), funcs in sorted(group_records(records).items(),
                                          key=lambda kv: (kv[0][0].mpi_name, kv[0][1], kv[0][2])):
        if kind.mpi_name not in funcs:
            raise MissingDefault(f"no {kind.mpi_name} Default samples at p={p}, {msize} B")
        default = median_of_medians(funcs[kind.mpi_name])
        cands = {}
        for mid in mockups_for(kind):
            if mid.value in funcs:
                cands[mid] = median_of_medians(funcs[mid.value])
        winner = improvement = None
        if cands:
            # min() keeps the first of equal values, i.e. enumeration order
            best = min(cands, key=lambda mid: cands[mid])
            if cands[best] <= limit * default:
                winner = best
                improvement = 1 - cands[best] / default if default else Fraction(0)
        entries.append(ViolationEntry(kind, p, msize, default, cands, winner, improvement))

    profiles = []
    by_key: dict[tuple[CollectiveKind, int], list[ViolationEntry]] = {}
    for e in entries:
        if e.winner is not None:
            by_key.setdefault((e.collective, e.nprocs), []).append(e)
    for (kind, p), hits in by_key.items():
        table = {local_id(mid): mid.value for mid in mockups_for(kind)}
        ranges = tuple(MessageRange(e.msize, e.msize, local_id(e.winner)) for e in hits)
        profiles.append(Profile(kind, p, table, ranges))
    return ViolationReport(threshold, entries), profiles
