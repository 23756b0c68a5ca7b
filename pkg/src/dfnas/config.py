"""Experiment configuration: flat key=value files with dotted section prefixes.

Every key has a documented default; parsing validates the whole file and
reports every violation, not just the first. `serialize_config` writes a file
that parses back to an equal config.
"""

from __future__ import annotations

import difflib
from dataclasses import dataclass, fields, replace
from pathlib import Path

from .errors import ConfigurationError


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: str = "experiment"
    master_seed: int = 0
    mode: str = "dfnas"  # dfnas | baseline
    output_dir: str = ""  # default: runs/<scenario>

    data_kind: str = "patches"  # blobs | rings | patches
    data_train_samples: int = 4000
    data_test_samples: int = 1000
    data_classes: int = 4
    data_noise: float = 0.1
    data_feature_dim: int = 8
    data_image_channels: int = 1
    data_image_size: int = 8

    partition_kind: str = "dirichlet"  # iid | dirichlet
    partition_concentration: float = 0.5
    partition_resplit_each_round: bool = False

    space_blocks: int = 4
    space_candidates: tuple[str, ...] = ("conv3", "conv5", "identity")
    space_channels: int = 8
    space_hidden_width: int = 16
    space_fixed_path: tuple[int, ...] | None = None

    federation_rounds: int = 40
    federation_client_pool: int = 4
    federation_clients_per_round: int = 4
    federation_weighting: str = "proportional"  # uniform | proportional
    federation_server_alpha_threshold: float = float("-inf")
    federation_workers: int = 1
    federation_checkpoints: bool = False

    local_epochs: int = 2
    local_batch_size: int = 32
    local_lr_w: float = 0.05
    local_lr_alpha: float = 0.003
    local_momentum_w: float = 0.9
    local_alpha_threshold: float = float("-inf")
    local_clip_norm: float | None = None

    def resolved_output_dir(self) -> str:
        return self.output_dir or f"runs/{self.scenario}"


def _parse_bool(text: str) -> bool:
    if text.lower() in ("true", "1", "yes", "on"):
        return True
    if text.lower() in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _parse_tokens(text: str) -> tuple[str, ...]:
    tokens = tuple(t.strip() for t in text.split(",") if t.strip())
    if not tokens:
        raise ValueError("expected a comma-separated list")
    return tokens


def _parse_path(text: str) -> tuple[int, ...] | None:
    if not text.strip():
        return None
    return tuple(int(t.strip()) for t in text.split(","))


def _parse_optional_float(text: str) -> float | None:
    if not text.strip() or text.strip().lower() == "none":
        return None
    return float(text)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


# key in the file -> (attribute, parser)
KEY_TABLE: dict[str, tuple[str, object]] = {
    "scenario": ("scenario", str),
    "master_seed": ("master_seed", int),
    "mode": ("mode", str),
    "output_dir": ("output_dir", str),
    "data.kind": ("data_kind", str),
    "data.train_samples": ("data_train_samples", int),
    "data.test_samples": ("data_test_samples", int),
    "data.classes": ("data_classes", int),
    "data.noise": ("data_noise", float),
    "data.feature_dim": ("data_feature_dim", int),
    "data.image_channels": ("data_image_channels", int),
    "data.image_size": ("data_image_size", int),
    "partition.kind": ("partition_kind", str),
    "partition.concentration": ("partition_concentration", float),
    "partition.resplit_each_round": ("partition_resplit_each_round", _parse_bool),
    "space.blocks": ("space_blocks", int),
    "space.candidates": ("space_candidates", _parse_tokens),
    "space.channels": ("space_channels", int),
    "space.hidden_width": ("space_hidden_width", int),
    "space.fixed_path": ("space_fixed_path", _parse_path),
    "federation.rounds": ("federation_rounds", int),
    "federation.client_pool": ("federation_client_pool", int),
    "federation.clients_per_round": ("federation_clients_per_round", int),
    "federation.weighting": ("federation_weighting", str),
    "federation.server_alpha_threshold": ("federation_server_alpha_threshold", float),
    "federation.workers": ("federation_workers", int),
    "federation.checkpoints": ("federation_checkpoints", _parse_bool),
    "local.epochs": ("local_epochs", int),
    "local.batch_size": ("local_batch_size", int),
    "local.lr_w": ("local_lr_w", float),
    "local.lr_alpha": ("local_lr_alpha", float),
    "local.momentum_w": ("local_momentum_w", float),
    "local.alpha_threshold": ("local_alpha_threshold", float),
    "local.clip_norm": ("local_clip_norm", _parse_optional_float),
}

_ATTR_TO_KEY = {attr: key for key, (attr, _) in KEY_TABLE.items()}


def validate_config(config: ExperimentConfig) -> list[str]:
    """Every violation in one pass; empty list means valid."""
    problems: list[str] = []
    if config.mode not in ("dfnas", "baseline"):
        problems.append(f"mode must be dfnas or baseline, got {config.mode!r}")
    if config.data_kind not in ("blobs", "rings", "patches"):
        problems.append(f"data.kind must be blobs, rings or patches, got {config.data_kind!r}")
    if config.data_train_samples < 1 or config.data_test_samples < 1:
        problems.append("data.train_samples and data.test_samples must be >= 1")
    if config.data_classes < 2:
        problems.append(f"data.classes must be >= 2, got {config.data_classes}")
    if config.data_noise < 0:
        problems.append(f"data.noise must be >= 0, got {config.data_noise}")
    if config.partition_kind not in ("iid", "dirichlet"):
        problems.append(f"partition.kind must be iid or dirichlet, got {config.partition_kind!r}")
    if config.partition_kind == "dirichlet" and config.partition_concentration <= 0:
        problems.append(
            f"partition.concentration must be > 0, got {config.partition_concentration}"
        )
    if config.partition_resplit_each_round and config.partition_kind != "iid":
        problems.append("partition.resplit_each_round is only available for iid partitions")
    if config.space_blocks < 1:
        problems.append(f"space.blocks must be >= 1, got {config.space_blocks}")
    if not config.space_candidates:
        problems.append("space.candidates must list at least one candidate")
    if config.federation_rounds < 1:
        problems.append(f"federation.rounds must be >= 1, got {config.federation_rounds}")
    if config.federation_client_pool < 1:
        problems.append("federation.client_pool must be >= 1")
    if not 1 <= config.federation_clients_per_round <= config.federation_client_pool:
        problems.append(
            f"federation.clients_per_round must be in [1, {config.federation_client_pool}], "
            f"got {config.federation_clients_per_round}"
        )
    if config.federation_weighting not in ("uniform", "proportional"):
        problems.append(
            f"federation.weighting must be uniform or proportional, "
            f"got {config.federation_weighting!r}"
        )
    if config.federation_workers < 1:
        problems.append("federation.workers must be >= 1")
    if config.local_epochs < 1:
        problems.append(f"local.epochs must be >= 1, got {config.local_epochs}")
    if config.local_batch_size < 1:
        problems.append("local.batch_size must be >= 1")
    if config.local_lr_w < 0 or config.local_lr_alpha < 0:
        problems.append("local learning rates must be >= 0")
    if not 0 <= config.local_momentum_w < 1:
        problems.append(f"local.momentum_w must be in [0, 1), got {config.local_momentum_w}")
    if config.local_clip_norm is not None and config.local_clip_norm <= 0:
        problems.append(f"local.clip_norm must be > 0, got {config.local_clip_norm}")
    if config.mode == "baseline":
        if config.space_fixed_path is None:
            problems.append("baseline mode requires space.fixed_path")
        else:
            if len(config.space_fixed_path) != config.space_blocks:
                problems.append(
                    f"space.fixed_path has {len(config.space_fixed_path)} entries, "
                    f"space.blocks is {config.space_blocks}"
                )
            bad = [i for i in config.space_fixed_path
                   if not 0 <= i < len(config.space_candidates)]
            if bad:
                problems.append(f"space.fixed_path indices out of range: {bad}")
    return problems


def parse_config_text(text: str, source: str = "<config>") -> ExperimentConfig:
    problems: list[str] = []
    values: dict[str, object] = {}
    seen: set[str] = set()
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            problems.append(f"line {line_no}: expected 'key = value', got {raw.strip()!r}")
            continue
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in KEY_TABLE:
            hint = difflib.get_close_matches(key, KEY_TABLE, n=1)
            suffix = f" (did you mean {hint[0]!r}?)" if hint else ""
            problems.append(f"line {line_no}: unknown key {key!r}{suffix}")
            continue
        if key in seen:
            problems.append(f"line {line_no}: duplicate key {key!r}")
            continue
        seen.add(key)
        attr, parser = KEY_TABLE[key]
        try:
            values[attr] = parser(value)
        except ValueError as err:
            problems.append(f"line {line_no}: bad value for {key!r}: {err}")
    if problems:
        raise ConfigurationError(
            f"{source}: {len(problems)} problem(s):\n  " + "\n  ".join(problems)
        )
    config = ExperimentConfig(**values)
    problems = validate_config(config)
    if problems:
        raise ConfigurationError(
            f"{source}: {len(problems)} problem(s):\n  " + "\n  ".join(problems)
        )
    return config


def parse_config(path) -> ExperimentConfig:
    return parse_config_text(Path(path).read_text(encoding="utf-8"), source=str(path))


def serialize_config(config: ExperimentConfig) -> str:
    lines = []
    for f in fields(ExperimentConfig):
        key = _ATTR_TO_KEY[f.name]
        lines.append(f"{key} = {_fmt(getattr(config, f.name))}")
    return "\n".join(lines) + "\n"


def override(config: ExperimentConfig, **changes) -> ExperimentConfig:
    updated = replace(config, **changes)
    problems = validate_config(updated)
    if problems:
        raise ConfigurationError("invalid override:\n  " + "\n  ".join(problems))
    return updated
