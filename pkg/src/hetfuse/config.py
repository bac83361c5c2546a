"""Run configuration: one flat dataclass, loadable from ``key = value`` or JSON files."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any

LR_SCHEDULES = ("constant", "cosine")
NORMALIZATION_SCHEMES = ("log1p", "log_minmax", "minmax", "zscore")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    # window / horizon
    T: int = 4
    H: int = 4
    # objective weights
    lambda1: float = 0.1
    lambda2: float = 5e-4
    # decoder blend
    lambda_o: float = 0.1
    lambda_p: float = 0.3
    hidden_mix: float = 0.5
    # architecture
    K: int = 3
    L: int = 2
    decoder_layers: int | None = None
    d: int = 8
    d_gen: int = 8
    heads: int = 2
    # fusion sampler
    B: int = 10
    M_max: int = 1000
    tau_h: int = 1
    p_keep: float = 0.5
    # graph construction
    sigma: float = 10.0
    sigma_g: float | None = None
    w_min: float = 1e-3
    weighted_messages: bool = True
    # spectral regularizer
    k: int = 8
    # data
    normalization: str = "log1p"
    log_delta: float = 1.0
    outbreak_threshold: float = 1.0
    # optimisation
    lr: float = 1e-5
    momentum: float = 0.0
    clip_norm: float | None = None  # global gradient-norm cap per step; None disables
    lr_schedule: str = "constant"  # or "cosine": decay to 0 over the step budget
    epochs: int = 100
    max_steps: int | None = None
    batch_size: int = 1
    dropout: float = 0.3
    init_scale: float = 1.0
    folds: int = 5
    seed: int = 0
    # ablation switches
    use_smoothing: bool = True
    use_genetic: bool = True
    use_spec: bool = True

    def __post_init__(self):
        self.validate()

    @property
    def n_decoder_layers(self) -> int:
        return self.L if self.decoder_layers is None else self.decoder_layers

    @property
    def effective_lambda1(self) -> float:
        return self.lambda1 if self.use_spec else 0.0

    def validate(self) -> None:
        if self.T < 1 or self.H < 1:
            raise ConfigError("T and H must be >= 1")
        for name in ("lambda_o", "lambda_p", "hidden_mix", "p_keep"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name}={v} must lie in [0, 1]")
        if self.lambda_o + self.lambda_p > 1.0 + 1e-12:
            raise ConfigError(f"lambda_o + lambda_p = {self.lambda_o + self.lambda_p} exceeds 1")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ConfigError("lambda1 and lambda2 must be non-negative")
        if self.K < 0 or self.L < 0 or (self.decoder_layers is not None and self.decoder_layers < 0):
            raise ConfigError("layer counts must be non-negative")
        if self.d < 1 or self.d_gen < 1 or self.B < 1 or self.M_max < 0 or self.k < 1:
            raise ConfigError("d, d_gen, B, k must be positive and M_max non-negative")
        if self.heads < 1 or self.d % self.heads:
            raise ConfigError(f"heads={self.heads} must divide d={self.d}")
        if self.tau_h < 0:
            raise ConfigError("tau_h must be non-negative")
        if self.sigma <= 0 or (self.sigma_g is not None and self.sigma_g <= 0):
            raise ConfigError("kernel widths must be positive")
        if not 0.0 < self.w_min <= 1.0:
            raise ConfigError("w_min must lie in (0, 1]")
        if self.normalization not in NORMALIZATION_SCHEMES:
            raise ConfigError(f"unknown normalization {self.normalization!r}; use one of {NORMALIZATION_SCHEMES}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        if self.lr <= 0 or not 0.0 <= self.momentum < 1.0:
            raise ConfigError("lr must be positive and momentum in [0, 1)")
        if self.lr_schedule not in LR_SCHEDULES:
            raise ConfigError(f"lr_schedule must be one of {LR_SCHEDULES}")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ConfigError("clip_norm must be positive")
        if self.epochs < 0 or self.batch_size < 1 or self.folds < 2:
            raise ConfigError("epochs >= 0, batch_size >= 1, folds >= 2 required")

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def coerce(name: str, raw: Any) -> Any:
    """Convert a textual (or JSON) value to the type of ``RunConfig.<name>``."""
    if name not in _FIELD_TYPES:
        raise ConfigError(f"unknown config key {name!r}")
    kind = _FIELD_TYPES[name]
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    if "None" in kind and text.lower() in ("none", "null", ""):
        return None
    try:
        if kind.startswith("bool"):
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if kind.startswith("int"):
            return int(text)
        if kind.startswith("float"):
            return float(text)
    except ValueError as exc:
        raise ConfigError(f"bad value {raw!r} for {name} ({kind})") from exc
    return text


def load_config(path: str | Path | None = None, **overrides) -> RunConfig:
    values: dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        text = path.read_text()
        if path.suffix == ".json":
            values = {k: coerce(k, v) for k, v in json.loads(text).items()}
        else:
            for lineno, line in enumerate(text.splitlines(), 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected key = value")
                key, raw = (s.strip() for s in line.split("=", 1))
                values[key] = coerce(key, raw)
    values.update({k: coerce(k, v) for k, v in overrides.items() if v is not None})
    return RunConfig(**values)


def dump_config(cfg: RunConfig, path: str | Path) -> None:
    lines = [f"{k} = {v}" for k, v in cfg.to_dict().items()]
    Path(path).write_text("\n".join(lines) + "\n")
