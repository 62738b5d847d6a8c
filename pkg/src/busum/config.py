"""Run configuration: profiles, flat key=value files, precedence resolution.

Precedence: command-line flags > config file > profile defaults.  A run's
resolved config is echoed verbatim into its output directory, and re-running
from the echoed file reproduces the run.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass


@dataclass
class RunConfig:
    profile: str = "desk"
    seed: int = 0
    threads: int = 1
    command: str = ""
    # data paths
    data_train: str = ""
    data_val: str = ""
    data_input: str = ""
    data_output: str = ""
    data_vocab: str = ""
    vectors: str = ""
    checkpoint: str = ""
    selector_checkpoint: str = ""
    q_file: str = ""
    q_out: str = ""
    candidates: str = ""
    references: str = ""
    csv_out: str = ""
    out_dir: str = ""
    # corpus
    max_src_tokens: int = 400
    max_tgt_tokens: int = 100
    max_vocab: int = 5000
    # content selector
    sel_static_dim: int = 32
    sel_ctx_dim: int = 32
    sel_hidden: int = 64
    sel_dropout: float = 0.5
    sel_epochs: int = 5
    sel_batch: int = 16
    sel_lr: float = 0.15
    sel_accum: float = 0.1
    sel_max_examples: int = 100_000
    # summarizer
    pg_emb_dim: int = 32
    pg_enc_hidden: int = 32
    pg_dec_hidden: int = 64
    pg_attention: str = "bilinear"
    pg_epochs: int = 10
    pg_batch: int = 8
    pg_lr: float = 0.15
    pg_accum: float = 0.1
    pg_clip_norm: float = 2.0
    pg_mode: str = "baseline"
    pg_multitask_weight: float = 1.0
    # bottom-up mask
    mask_enabled: bool = False
    mask_epsilon: float = 0.15
    mask_lambda: float = 2.0
    # inference
    beam_size: int = 5
    beam_size_masked: int = 10
    alpha: float = 0.0
    beta: float = 0.0
    min_length: int = 1
    max_length: int = 40
    trigram_block: bool = True

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}

PROFILES: dict[str, dict] = {
    "desk": {},
    "cnn-dm": {
        "max_vocab": 50_000,
        "sel_static_dim": 100,
        "sel_ctx_dim": 1024,
        "sel_hidden": 256,
        "pg_emb_dim": 128,
        "pg_enc_hidden": 256,
        "pg_dec_hidden": 512,
        "alpha": 1.0,
        "beta": 10.0,
        "mask_epsilon": 0.15,
        "mask_lambda": 2.0,
        "beam_size": 5,
        "beam_size_masked": 10,
        "min_length": 35,
        "max_length": 120,
    },
    "nyt": {
        "max_vocab": 50_000,
        "sel_static_dim": 100,
        "sel_ctx_dim": 1024,
        "sel_hidden": 256,
        "pg_emb_dim": 128,
        "pg_enc_hidden": 256,
        "pg_dec_hidden": 512,
        "alpha": 1.0,
        "beta": 10.0,
        "mask_epsilon": 0.15,
        "mask_lambda": 2.0,
        "beam_size": 5,
        "beam_size_masked": 10,
        "min_length": 6,
        "max_length": 120,
    },
}


def profile_defaults(name: str) -> dict:
    """Profile override fragment; errors list the valid profile names."""
    if name not in PROFILES:
        raise ValueError(f"unknown profile {name!r}; valid profiles: {sorted(PROFILES)}")
    return dict(PROFILES[name])


def _coerce(name: str, raw: str):
    f = _FIELDS[name]
    if f.type in ("int", int):
        return int(raw)
    if f.type in ("float", float):
        return float(raw)
    if f.type in ("bool", bool):
        low = raw.strip().lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ValueError(f"config key {name}: expected true/false, got {raw!r}")
    return raw


def parse_config_file(path: str) -> dict:
    """Flat key=value text; '#' starts a comment; unknown keys are rejected."""
    values: dict = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise ValueError(f"{path}:{lineno}: expected key=value")
            key, raw = (part.strip() for part in stripped.split("=", 1))
            if key not in _FIELDS:
                raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
            values[key] = _coerce(key, raw)
    return values


def write_config(cfg: RunConfig, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for key in sorted(_FIELDS):
            value = getattr(cfg, key)
            if isinstance(value, bool):
                value = "true" if value else "false"
            fh.write(f"{key}={value}\n")


def resolve_config(flag_values: dict, config_path: str | None = None) -> tuple[RunConfig, set[str]]:
    """Merge profile < file < flags; returns the config and explicitly-set keys."""
    file_values = parse_config_file(config_path) if config_path else {}
    profile = flag_values.get("profile") or file_values.get("profile") or "desk"
    merged = profile_defaults(profile)
    merged["profile"] = profile
    merged.update(file_values)
    explicit = set(file_values)
    for key, value in flag_values.items():
        if value is None:
            continue
        merged[key] = value
        explicit.add(key)
    if "seed" not in explicit and os.environ.get("BUSM_SEED"):
        merged["seed"] = int(os.environ["BUSM_SEED"])
    known = {k: v for k, v in merged.items() if k in _FIELDS}
    return RunConfig(**known), explicit
