"""key=value run configuration with command-line overrides."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

from .bench import Launcher, NrepConfig
from .collectives import AlgorithmId, CollectiveKind, default_table
from .errors import ConfigError, PgtuneError
from .mockups import MockupConfig, MockupId, tunable_kinds
from .runtime import CostModel

CONFIG_ENV = "PGTUNE_CONFIG"

DEFAULT_MSIZES = tuple(sorted({1 << i for i in range(17)} | {100, 10000}))

_FLOAT_KEYS = {"alpha_us", "beta_us_per_byte", "gamma_us_per_byte", "jitter_fraction",
               "rse_threshold_1byte", "rse_threshold_batch", "replacement_threshold"}
_INT_KEYS = {"seed", "nprocs", "b1", "b2", "K", "nmpiruns", "max_t1_obs",
             "size_msg_buffer_bytes", "size_int_buffer_bytes", "chunk_size_C"}
_STR_KEYS = {"mode", "msizes", "profile_dir", "collectives"}
KNOWN_KEYS = _FLOAT_KEYS | _INT_KEYS | _STR_KEYS


@dataclass(frozen=True)
class RunConfig:
    model: CostModel = CostModel()
    mode: str = "virtual"
    seed: int = 0
    nprocs: int = 8
    msizes: tuple[int, ...] = DEFAULT_MSIZES
    nrep: NrepConfig = NrepConfig()
    size_msg_buffer_bytes: int = 104857600
    size_int_buffer_bytes: int = 10240
    mockup: MockupConfig = MockupConfig()
    profile_dir: str = "profiles"
    defaults: Mapping[CollectiveKind, AlgorithmId] = field(default_factory=default_table)
    replacement_threshold: float = 0.10
    collectives: tuple[CollectiveKind, ...] | None = None  # None: every tunable collective

    @property
    def launcher(self) -> Launcher:
        return Launcher(self.nprocs, self.model, self.mode)

    def selected(self) -> list[CollectiveKind]:
        return list(self.collectives) if self.collectives is not None else tunable_kinds()

    def header(self) -> dict[str, object]:
        """Metadata lines written at the top of every CSV."""
        h: dict[str, object] = {
            "nprocs": self.nprocs,
            "mode": self.mode,
            "seed": self.seed,
            "clock": "virtual_ns" if self.mode == "virtual" else "perf_counter_ns",
            "barrier": "dissemination",
            "alpha_us": self.model.alpha_us,
            "beta_us_per_byte": self.model.beta_us_per_byte,
            "gamma_us_per_byte": self.model.gamma_us_per_byte,
            "jitter_fraction": self.model.jitter_fraction,
        }
        for kind in sorted(self.defaults, key=lambda k: k.cli_name):
            h[f"default_alg.{kind.cli_name}"] = self.defaults[kind].variant
        return h


def read_config_file(path: str | os.PathLike) -> dict[str, str]:
    values: dict[str, str] = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc.strerror}") from None
    for no, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{path}:{no}: expected key=value, got {raw.strip()!r}")
        values[key.strip()] = value.strip()
    return values


def parse_override(text: str) -> tuple[str, str]:
    key, sep, value = text.partition("=")
    if not sep or not key.strip():
        raise ConfigError(f"override must be key=value, got {text!r}")
    return key.strip(), value.strip()


def _int_list(value: str, key: str) -> tuple[int, ...]:
    try:
        out = tuple(sorted({int(v) for v in value.replace(",", " ").split()}))
    except ValueError:
        raise ConfigError(f"{key}: expected a list of integers, got {value!r}") from None
    if not out or out[0] < 0:
        raise ConfigError(f"{key}: need at least one nonnegative size")
    return out


def build_config(values: Mapping[str, str]) -> RunConfig:
    """Validate raw key=value pairs into a :class:`RunConfig`."""
    typed: dict[str, object] = {}
    alg_overrides: dict[CollectiveKind, str] = {}
    for key, value in values.items():
        if key.startswith("default_alg."):
            try:
                kind = CollectiveKind.parse(key.split(".", 1)[1])
            except PgtuneError as exc:
                raise ConfigError(f"{key}: {exc}") from None
            alg_overrides[kind] = value
            continue
        if key not in KNOWN_KEYS:
            raise ConfigError(f"unknown configuration key {key!r}")
        try:
            if key in _FLOAT_KEYS:
                typed[key] = float(value)
            elif key in _INT_KEYS:
                typed[key] = int(value)
            else:
                typed[key] = value
        except ValueError:
            raise ConfigError(f"{key}: cannot parse {value!r}") from None

    try:
        model = CostModel(
            alpha_us=typed.get("alpha_us", CostModel.alpha_us),
            beta_us_per_byte=typed.get("beta_us_per_byte", CostModel.beta_us_per_byte),
            gamma_us_per_byte=typed.get("gamma_us_per_byte", CostModel.gamma_us_per_byte),
            jitter_fraction=typed.get("jitter_fraction", CostModel.jitter_fraction),
        )
        nrep_fields = {k: typed[k] for k in ("rse_threshold_1byte", "rse_threshold_batch", "b1", "b2",
                                             "K", "nmpiruns", "max_t1_obs") if k in typed}
        nrep = NrepConfig(**nrep_fields)
        mockup = MockupConfig(typed.get("chunk_size_C", 1))
        defaults = default_table(alg_overrides)
    except (ValueError, PgtuneError) as exc:
        raise ConfigError(str(exc)) from None

    mode = typed.get("mode", "virtual")
    if mode not in ("virtual", "wallclock"):
        raise ConfigError(f"mode must be 'virtual' or 'wallclock', got {mode!r}")
    nprocs = typed.get("nprocs", 8)
    if nprocs < 1:
        raise ConfigError("nprocs must be >= 1")
    for k in ("size_msg_buffer_bytes", "size_int_buffer_bytes"):
        if typed.get(k, 0) < 0:
            raise ConfigError(f"{k} must be nonnegative")
    thr = typed.get("replacement_threshold", 0.10)
    if not 0 <= thr < 1:
        raise ConfigError("replacement_threshold must lie in [0, 1)")
    collectives = None
    if "collectives" in typed:
        names = [c for c in str(typed["collectives"]).replace(",", " ").split()]
        if not names:
            raise ConfigError("collectives: empty selection")
        try:
            collectives = tuple(dict.fromkeys(CollectiveKind.parse(c) for c in names))
        except PgtuneError as exc:
            raise ConfigError(f"collectives: {exc}") from None
    msizes = _int_list(typed["msizes"], "msizes") if "msizes" in typed else DEFAULT_MSIZES
    if 0 in msizes:
        raise ConfigError("msizes: 0-byte messages cannot be timed (NREP needs a positive latency)")

    return RunConfig(
        model=model,
        mode=mode,
        seed=typed.get("seed", 0),
        nprocs=nprocs,
        msizes=msizes,
        nrep=nrep,
        size_msg_buffer_bytes=typed.get("size_msg_buffer_bytes", 104857600),
        size_int_buffer_bytes=typed.get("size_int_buffer_bytes", 10240),
        mockup=mockup,
        profile_dir=str(typed.get("profile_dir", "profiles")),
        defaults=defaults,
        replacement_threshold=thr,
        collectives=collectives,
    )


def load_config(path: str | os.PathLike | None = None, overrides: Mapping[str, str] | None = None,
                env: Mapping[str, str] | None = None) -> RunConfig:
    """File values (``path`` or ``$PGTUNE_CONFIG``) overlaid by ``overrides``."""
    env = os.environ if env is None else env
    if path is None:
        path = env.get(CONFIG_ENV) or None
    values = read_config_file(path) if path is not None else {}
    values.update(overrides or {})
    return build_config(values)


def parse_module_flag(text: str) -> tuple[CollectiveKind, MockupId]:
    """``<coll>:alg=<mockup_name>`` as accepted by ``--module``."""
    coll, sep, rest = text.partition(":")
    key, sep2, name = rest.partition("=")
    if not sep or not sep2 or key.strip() != "alg":
        raise ConfigError(f"--module expects <collective>:alg=<mockup_name>, got {text!r}")
    kind = CollectiveKind.parse(coll)
    mid = MockupId.parse(name)
    if mid.lhs is not kind:
        raise ConfigError(f"{mid.value} does not implement {kind.cli_name}")
    return kind, mid
