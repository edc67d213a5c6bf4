"""Run configuration: an INI file with [run], [data], [train] and [penalty] sections.

Every error message is anchored to ``path:line`` so a user can jump to the
offending entry. ``effective_text`` renders the config with all defaults
filled in; it is echoed into the output directory.
"""

import configparser
import os
from dataclasses import dataclass, field
from typing import Optional

from vcr.model import UNIT_KINDS, VC_KINDS
from vcr.training import PENALTY_MODES, PenaltyConfig, TrainConfig

SCHEMA = {
    "run": {"unit": None, "hidden": None, "seed": "0", "output_dir": "run"},
    "data": {"path": None, "level": None, "encoding": "bytes", "buffer_k": "0",
             "min_count": "1", "splits": "0.9, 0.05, 0.05", "annotations": ""},
    "train": {"learning_rate": "0.5", "grad_clip": "5.0", "epochs": "10", "bptt_len": "64",
              "batch_size": "32", "lambda_start": "0.1", "lambda_step_per_epoch": "0.1",
              "lambda_max": "1.0", "epsilon": "0.01", "init_scale": "", "scheduler_bias": "0.0",
              "elman_bias": "false"},
    "penalty": {"m_bar": None, "weight": None, "mode": "l1_symmetric",
                "guide_flag": "", "guide_weight": "1.0"},
}


class ConfigError(ValueError):
    pass


@dataclass
class DataSpec:
    path: str
    level: str
    encoding: str = "bytes"
    buffer_k: int = 0
    min_count: int = 1
    splits: tuple = (0.9, 0.05, 0.05)
    annotations: str = ""


@dataclass
class RunConfig:
    unit: str
    hidden: int
    data: DataSpec
    train: TrainConfig
    penalty: Optional[PenaltyConfig]
    output_dir: str
    seed: int = 0
    epsilon: float = 0.01
    init_scale: Optional[float] = None
    scheduler_bias: float = 0.0
    elman_bias: bool = False
    guide_flag: str = ""
    guide_weight: float = 1.0
    source: str = ""
    raw: dict = field(default_factory=dict)


def _line_index(text):
    """Map (section, key) and section headers to 1-based line numbers."""
    where = {}
    section = None
    for no, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if s.startswith("[") and s.endswith("]"):
            section = s[1:-1].strip()
            where.setdefault((section, None), no)
        elif section and s and not s.startswith(("#", ";")) and ("=" in s or ":" in s):
            key = s.replace(":", "=", 1).split("=", 1)[0].strip().lower()
            where.setdefault((section, key), no)
    return where


def load(path, seed_override=None) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config: {exc.strerror}") from exc
    return parse(text, path, seed_override)


def parse(text, path="<config>", seed_override=None) -> RunConfig:
    lines = _line_index(text)

    def fail(section, key, msg):
        no = lines.get((section, key)) or lines.get((section, None)) or 1
        raise ConfigError(f"{path}:{no}: {msg}")

    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text, source=path)
    except configparser.Error as exc:
        raise ConfigError(f"{path}:{getattr(exc, 'lineno', 1)}: {exc.message}") from exc

    raw = {}
    for section in cp.sections():
        if section not in SCHEMA:
            fail(section, None, f"unknown section [{section}]")
        for key in cp[section]:
            if key not in SCHEMA[section]:
                fail(section, key, f"unknown key {key!r} in [{section}]")
    for section in ("run", "data"):
        if section not in cp:
            raise ConfigError(f"{path}:1: missing required section [{section}]")

    for section, keys in SCHEMA.items():
        if section == "penalty" and "penalty" not in cp:
            continue
        raw[section] = {}
        for key, default in keys.items():
            value = cp[section].get(key) if section in cp else None
            if value is None:
                if default is None:
                    fail(section, None, f"missing required key {key!r} in [{section}]")
                value = default
            raw[section][key] = value.strip()

    def num(section, key, kind):
        try:
            return kind(raw[section][key])
        except ValueError:
            fail(section, key, f"{key} must be {kind.__name__}, got {raw[section][key]!r}")

    def flag(section, key):
        v = raw[section][key].lower()
        if v not in ("true", "false", "1", "0", "yes", "no"):
            fail(section, key, f"{key} must be a boolean, got {v!r}")
        return v in ("true", "1", "yes")

    unit = raw["run"]["unit"]
    if unit not in UNIT_KINDS:
        fail("run", "unit", f"unit must be one of {UNIT_KINDS}, got {unit!r}")
    hidden = num("run", "hidden", int)
    if hidden < 1:
        fail("run", "hidden", "hidden must be positive")
    seed = num("run", "seed", int)
    if seed_override is not None:
        seed = int(seed_override)

    base = os.path.dirname(os.path.abspath(path)) if path != "<config>" else os.getcwd()
    data_path = os.path.join(base, raw["data"]["path"])
    if not os.path.exists(data_path):
        fail("data", "path", f"data file {data_path} does not exist")
    level = raw["data"]["level"]
    if level not in ("bit", "char", "generic"):
        fail("data", "level", f"level must be bit, char or generic, got {level!r}")
    encoding = raw["data"]["encoding"]
    if encoding not in ("bytes", "bitstring"):
        fail("data", "encoding", f"encoding must be bytes or bitstring, got {encoding!r}")
    buffer_k = num("data", "buffer_k", int)
    if buffer_k < 0:
        fail("data", "buffer_k", "buffer_k must be non-negative")
    if buffer_k and level != "bit":
        fail("data", "buffer_k", "buffer bits only apply to level = bit")
    try:
        splits = tuple(float(s) for s in raw["data"]["splits"].split(","))
    except ValueError:
        fail("data", "splits", "splits must be three comma-separated fractions")
    if len(splits) != 3 or any(s <= 0 for s in splits) or sum(splits) > 1 + 1e-12:
        fail("data", "splits", "splits must be three positive fractions summing to at most 1")
    ann = raw["data"]["annotations"]
    if ann:
        ann = os.path.join(base, ann)
        if not os.path.exists(ann):
            fail("data", "annotations", f"annotation file {ann} does not exist")
    data = DataSpec(data_path, level, encoding, buffer_k, num("data", "min_count", int), splits, ann)

    try:
        train = TrainConfig(
            learning_rate=num("train", "learning_rate", float),
            grad_clip=num("train", "grad_clip", float),
            epochs=num("train", "epochs", int),
            bptt_len=num("train", "bptt_len", int),
            batch_size=num("train", "batch_size", int),
            lambda_start=num("train", "lambda_start", float),
            lambda_step_per_epoch=num("train", "lambda_step_per_epoch", float),
            lambda_max=num("train", "lambda_max", float),
            seed=seed,
        )
    except ValueError as exc:
        fail("train", None, str(exc))
    epsilon = num("train", "epsilon", float)
    if not 0 < epsilon < 0.5:
        fail("train", "epsilon", "epsilon must lie in (0, 0.5)")
    init_scale = num("train", "init_scale", float) if raw["train"]["init_scale"] else None
    if init_scale is not None and init_scale <= 0:
        fail("train", "init_scale", "init_scale must be positive")
    elman_bias = flag("train", "elman_bias")
    if elman_bias and unit not in ("elman", "vcrnn"):
        fail("train", "elman_bias", "elman_bias only applies to elman and vcrnn units")

    penalty = None
    guide_flag, guide_weight = "", 1.0
    if "penalty" in raw:
        if unit not in VC_KINDS:
            fail("penalty", None, f"a [penalty] section requires a variable-computation unit, not {unit!r}")
        mode = raw["penalty"]["mode"]
        if mode not in PENALTY_MODES:
            fail("penalty", "mode", f"mode must be one of {PENALTY_MODES}, got {mode!r}")
        m_bar, weight = num("penalty", "m_bar", float), num("penalty", "weight", float)
        if not 0.0 <= m_bar <= 1.0:
            fail("penalty", "m_bar", f"m_bar must lie in [0, 1], got {m_bar}")
        if not (weight >= 0 and weight < float("inf")):
            fail("penalty", "weight", f"weight must be finite and non-negative, got {weight}")
        penalty = PenaltyConfig(m_bar, weight, mode)
        guide_flag = raw["penalty"]["guide_flag"]
        guide_weight = num("penalty", "guide_weight", float)
        if guide_weight < 0:
            fail("penalty", "guide_weight", "guide_weight must be non-negative")
    elif unit in VC_KINDS:
        raise ConfigError(f"{path}:1: unit {unit!r} requires a [penalty] section with m_bar and weight")

    raw["run"]["seed"] = str(seed)
    raw["data"]["path"] = data_path
    raw["data"]["annotations"] = ann
    out = os.path.join(base, raw["run"]["output_dir"])
    raw["run"]["output_dir"] = out
    return RunConfig(unit, hidden, data, train, penalty, out, seed, epsilon, init_scale,
                     num("train", "scheduler_bias", float), elman_bias, guide_flag, guide_weight,
                     path, raw)


def effective_text(cfg: RunConfig):
    """The config with every default written out; re-parsing it gives the same run."""
    parts = []
    for section in ("run", "data", "train", "penalty"):
        if section not in cfg.raw:
            continue
        parts.append(f"[{section}]")
        parts += [f"{k} = {v}" for k, v in cfg.raw[section].items()]
        parts.append("")
    return "\n".join(parts)
