"""Experiment configuration and its flat ``section.key = value`` text format.

Example file::

    # comments start with '#'
    seed = 7
    signal.duration_s = 600
    tsa.experts = T,2T,4T,T/2,T/4
    encoder.scope = windowed
    train.epochs = 20
"""

from __future__ import annotations

import dataclasses
import re
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .encoder import EncoderConfig
from .errors import ConfigError
from .moe import ExpertSpec, DEFAULT_MULTIPLIERS, expert_problems
from .signal import TARGET_FS, ClassParams
from .tsa import DEFAULT_T, TABLE_LENGTHS_S


@dataclass
class SignalConfig:
    duration_s: int = 600  # segment length
    record_s: int = 600  # synthetic record length
    synth_fs: int = 125
    denoise_window: int = 5
    n_subjects: int = 40
    pos_bpm: float = 85.0
    neg_bpm: float = 60.0
    bpm_spread: float = 2.0
    pos_hrv: float = 0.02
    neg_hrv: float = 0.10
    noise: float = 0.05

    @property
    def L(self) -> int:
        return int(self.duration_s * TARGET_FS)

    def class_params(self, label: int) -> ClassParams:
        if label:
            return ClassParams(self.pos_bpm, self.pos_hrv, self.noise)
        return ClassParams(self.neg_bpm, self.neg_hrv, self.noise)


@dataclass
class TSAConfig:
    T: int = DEFAULT_T
    experts: list[str] = field(default_factory=lambda: ["T", "2T", "4T", "T/2", "T/4"])
    # "auto", one size for every expert, or one per expert
    k: list[str] = field(default_factory=lambda: ["auto"])
    k_max: int = 8
    stats_k: list[int] = field(default_factory=lambda: [2, 3, 4, 5])
    stats_lengths_s: list[int] = field(default_factory=lambda: list(TABLE_LENGTHS_S))
    stats_block: int = 64
    stats_budget: int = 64


@dataclass
class MoEConfig:
    enabled: bool = True
    gate_input: str = "summary"


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 8
    lr: float = 1e-3
    optimizer: str = "adam"
    split: list[float] = field(default_factory=lambda: [0.6, 0.2, 0.2])
    threshold: float = 0.5
    aggregation: str = "mean"
    dtype: str = "float32"


@dataclass
class ExperimentConfig:
    seed: int = 0
    out_dir: str = "runs/default"
    data: str = ""  # manifest or preprocessed .npz; empty -> synthesise from signal.*
    signal: SignalConfig = field(default_factory=SignalConfig)
    tsa: TSAConfig = field(default_factory=TSAConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    moe: MoEConfig = field(default_factory=MoEConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def expert_sizes(self) -> list[int]:
        return [parse_patch_size(e, self.tsa.T) for e in self.tsa.experts]

    def expert_specs(self) -> list[ExpertSpec]:
        specs, problems = self._resolve_experts()
        if problems:
            raise ConfigError(problems)
        return specs

    def _resolve_experts(self) -> tuple[list[ExpertSpec], list[str]]:
        problems = []
        try:
            sizes = self.expert_sizes()
        except ConfigError as e:
            return [], e.problems
        ks = list(self.tsa.k)
        if len(ks) == 1:
            ks = ks * len(sizes)
        if len(ks) != len(sizes):
            return [], [f"tsa.k lists {len(ks)} sizes for {len(sizes)} experts"]
        specs = []
        L = self.signal.L
        for D, k in zip(sizes, ks):
            if str(k).strip().lower() == "auto":
                k_val = auto_square_size(D, L, self.tsa.T, self.encoder, self.tsa.k_max)
                if k_val is None:
                    # k=1 gives the largest token grid, so its problems are the root cause
                    problems += expert_problems(ExpertSpec(D, 1, self.encoder), L, self.tsa.T)
                    continue
            else:
                try:
                    k_val = int(k)
                except ValueError:
                    problems.append(f"tsa.k entry {k!r} is not an integer or 'auto'")
                    continue
            spec = ExpertSpec(D, k_val, self.encoder)
            problems += expert_problems(spec, L, self.tsa.T)
            specs.append(spec)
        return specs, problems

    def problems(self) -> list[str]:
        out = []
        s, tr = self.signal, self.train
        if s.duration_s <= 0:
            out.append(f"signal.duration_s must be > 0, got {s.duration_s}")
        if s.record_s < s.duration_s:
            out.append(f"signal.record_s={s.record_s} is shorter than one {s.duration_s}s segment")
        if s.synth_fs <= 0:
            out.append(f"signal.synth_fs must be > 0, got {s.synth_fs}")
        if s.denoise_window < 1 or s.denoise_window % 2 == 0:
            out.append(f"signal.denoise_window must be odd and >= 1, got {s.denoise_window}")
        if s.n_subjects < 2:
            out.append(f"signal.n_subjects must be >= 2, got {s.n_subjects}")
        for name in ("pos_bpm", "neg_bpm"):
            if getattr(s, name) - s.bpm_spread <= 0:
                out.append(f"signal.{name} minus bpm_spread must stay > 0")
        if self.tsa.T < 1:
            out.append(f"tsa.T must be >= 1, got {self.tsa.T}")
        out += self.encoder.problems()
        if not out:
            _, expert_errs = self._resolve_experts()
            out += expert_errs
            if not self.moe.enabled and len(self.tsa.experts) != 1:
                out.append(f"moe.enabled=false needs exactly one expert, got {len(self.tsa.experts)}")
        if self.moe.gate_input not in ("summary", "raw"):
            out.append(f"moe.gate_input must be 'summary' or 'raw', got {self.moe.gate_input!r}")
        if tr.epochs < 0:
            out.append(f"train.epochs must be >= 0, got {tr.epochs}")
        if tr.batch_size < 1:
            out.append(f"train.batch_size must be >= 1, got {tr.batch_size}")
        if tr.lr < 0:
            out.append(f"train.lr must be >= 0, got {tr.lr}")
        if tr.optimizer not in ("adam", "sgd_momentum"):
            out.append(f"train.optimizer must be 'adam' or 'sgd_momentum', got {tr.optimizer!r}")
        if len(tr.split) != 3 or any(f < 0 for f in tr.split) or abs(sum(tr.split) - 1) > 1e-9 or tr.split[0] <= 0:
            out.append(f"train.split must be three non-negative fractions summing to 1 with train > 0, got {tr.split}")
        if not 0 < tr.threshold < 1:
            out.append(f"train.threshold must be in (0, 1), got {tr.threshold}")
        if tr.aggregation not in ("mean", "vote"):
            out.append(f"train.aggregation must be 'mean' or 'vote', got {tr.aggregation!r}")
        if tr.dtype not in ("float32", "float64"):
            out.append(f"train.dtype must be float32 or float64, got {tr.dtype!r}")
        return out

    def validate(self) -> "ExperimentConfig":
        problems = self.problems()
        if problems:
            raise ConfigError(problems)
        return self


def auto_square_size(D: int, L: int, T: int, encoder: EncoderConfig, k_max: int) -> int | None:
    """Largest k <= k_max whose token grid the encoder can tile."""
    for k in range(k_max, 0, -1):
        if not expert_problems(ExpertSpec(D, k, encoder), L, T):
            return k
    return None


_PATCH_RE = re.compile(r"^\s*(\d*(?:\.\d+)?)\s*T\s*(?:/\s*(\d+))?\s*$")


def parse_patch_size(text: str, T: int) -> int:
    """``"T"``, ``"2T"``, ``"T/4"`` or a raw sample count such as ``"768"``."""
    text = str(text).strip()
    if text.isdigit():
        return int(text)
    m = _PATCH_RE.match(text)
    if not m:
        raise ConfigError(f"cannot parse patch size {text!r}; use forms like T, 2T, T/4 or 768")
    mult = float(m.group(1)) if m.group(1) else 1.0
    div = int(m.group(2)) if m.group(2) else 1
    D = mult * T / div
    if D != int(D) or D < 1:
        raise ConfigError(f"patch size {text!r} is not a whole number of samples for T={T}")
    return int(D)


def parse_experts_flag(text: str) -> tuple[list[str], bool]:
    """``moe`` -> the five default sizes; ``single:2T`` -> one expert, gate off; else a list."""
    text = text.strip()
    if text == "moe":
        return [_mult_name(m) for m in DEFAULT_MULTIPLIERS], True
    if text.startswith("single:"):
        return [text.split(":", 1)[1]], False
    items = [t for t in text.split(",") if t.strip()]
    return items, True


def _mult_name(m: float) -> str:
    if m >= 1:
        return "T" if m == 1 else f"{int(m)}T"
    return f"T/{int(round(1 / m))}"


# ---- flat text format -------------------------------------------------------


def _field_types(cls) -> dict:
    return typing.get_type_hints(cls)


def _coerce(value: str, tp, key: str):
    origin = typing.get_origin(tp)
    if origin is list:
        (inner,) = typing.get_args(tp)
        items = [v.strip() for v in value.split(",") if v.strip()]
        return [_coerce(v, inner, key) for v in items]
    if typing.get_origin(tp) is typing.Union or isinstance(tp, types.UnionType):
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        tp = args[0]
    try:
        if tp is bool:
            low = value.strip().lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(value)
        if tp is int:
            f = float(value)
            if f != int(f):
                raise ValueError(value)
            return int(f)
        if tp is float:
            return float(value)
        return value.strip().strip('"')
    except ValueError:
        raise ConfigError(f"{key}: cannot read {value!r} as {getattr(tp, '__name__', tp)}") from None


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, list):
        return ",".join(_format(v) for v in value)
    return str(value)


def set_value(cfg: ExperimentConfig, key: str, value: str) -> None:
    parts = key.strip().split(".")
    target = cfg
    for p in parts[:-1]:
        if not dataclasses.is_dataclass(target) or not hasattr(target, p):
            raise ConfigError(f"unknown config key {key!r}")
        target = getattr(target, p)
    name = parts[-1]
    types = _field_types(type(target)) if dataclasses.is_dataclass(target) else {}
    if name not in types or dataclasses.is_dataclass(getattr(target, name)):
        raise ConfigError(f"unknown config key {key!r}")
    setattr(target, name, _coerce(value, types[name], key))


def apply_overrides(cfg: ExperimentConfig, pairs) -> ExperimentConfig:
    problems = []
    for pair in pairs:
        if "=" not in pair:
            problems.append(f"override {pair!r} is not key=value")
            continue
        k, v = pair.split("=", 1)
        try:
            set_value(cfg, k, v)
        except ConfigError as e:
            problems += e.problems
    if problems:
        raise ConfigError(problems)
    return cfg


def parse_config_text(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    cfg = base or ExperimentConfig()
    pairs = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        pairs.append(line)
    return apply_overrides(cfg, pairs)


def load_config(path) -> ExperimentConfig:
    return parse_config_text(Path(path).read_text())


def flatten(cfg, prefix: str = "") -> list[tuple[str, str]]:
    out = []
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        key = prefix + f.name
        if dataclasses.is_dataclass(v):
            out += flatten(v, key + ".")
        else:
            out.append((key, _format(v)))
    return out


def dump_config(cfg: ExperimentConfig) -> str:
    return "".join(f"{k} = {v}\n" for k, v in flatten(cfg))


def config_from_flat(pairs) -> ExperimentConfig:
    """Inverse of :func:`flatten`; accepts its pair list or a dict."""
    return apply_overrides(ExperimentConfig(), [f"{k}={v}" for k, v in dict(pairs).items()])
