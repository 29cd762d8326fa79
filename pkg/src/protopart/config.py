"""Run configuration: a flat ``key = value`` text format plus CLI overrides.

Every key can also be supplied as a command-line flag of the same name
(dashes for underscores); flags win over the file. The canonical text form
is embedded into saved model bundles so a run can be reproduced from its
artifact alone.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

from .errors import ConfigError
from .head import Stage2Config
from .sinkhorn import SinkhornConfig
from .stage1 import FgMethod, Stage1Config

_FG_NAMES = {"pca": FgMethod.PCA_THRESHOLD, "gt": FgMethod.GROUND_TRUTH_MASK, "none": FgMethod.NONE}


@dataclass(frozen=True)
class RunConfig:
    """Everything the pipeline needs for one run."""

    train: str = ""
    test: str = ""
    out: str = "out"
    k: int = 3
    kappa: float = 0.05
    max_iters: int = 100
    marginal_tol: float = 1e-6
    beta: float = 0.99
    epochs1: int = 1
    batch_size: int = 128
    fg_method: str = "pca"
    lambda_ppc: float = 0.8
    epochs2: int = 5
    lr_adapter: float = 1e-4
    lr_w: float = 1e-6
    seed: int = 0
    box_frac: float = 0.25
    tau: float = 0.5
    no_constraints: bool = False
    no_foreground: bool = False
    no_finetune: bool = False
    no_ppc: bool = False

    def __post_init__(self):
        if self.fg_method not in _FG_NAMES:
            raise ConfigError(
                f"fg_method must be one of {sorted(_FG_NAMES)}, got {self.fg_method!r}"
            )
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")

    # -- derived sub-configs, with ablation flags applied ------------------

    def sinkhorn(self) -> SinkhornConfig:
        return SinkhornConfig(
            kappa=self.kappa, max_iters=self.max_iters, marginal_tol=self.marginal_tol
        )

    def effective_fg(self) -> FgMethod:
        return FgMethod.NONE if self.no_foreground else _FG_NAMES[self.fg_method]

    def stage1(self) -> Stage1Config:
        return Stage1Config(
            beta=self.beta,
            epochs=self.epochs1,
            batch_size=self.batch_size,
            seed=self.seed,
            fg_method=self.effective_fg(),
        )

    def stage2(self) -> Stage2Config:
        return Stage2Config(
            lambda_ppc=0.0 if self.no_ppc else self.lambda_ppc,
            epochs=self.epochs2,
            lr_adapter=self.lr_adapter,
            lr_w=self.lr_w,
            seed=self.seed,
        )

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"{f.name} = {value}")
        return "\n".join(lines) + "\n"


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _convert(key: str, raw: str):
    kind = _FIELD_TYPES[key]
    raw = raw.strip()
    try:
        if kind == "bool":
            low = raw.lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {key!r}: {exc}") from exc


def parse_config_text(text: str) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out: dict = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = line.split("=", 1)
        key = key.strip()
        if key not in _FIELD_TYPES:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        out[key] = _convert(key, raw)
    return out


def load_config(path: str | None, overrides: dict) -> RunConfig:
    """Build a RunConfig from an optional file plus override values."""
    values: dict = {}
    if path:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                values.update(parse_config_text(fh.read()))
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path!r}: {exc}") from exc
    for key, value in overrides.items():
        if value is None:
            continue
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = value
    try:
        return RunConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
