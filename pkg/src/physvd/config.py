"""``key = value`` run configuration with a closed schema."""
from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigError, FormatError
from .io import parse_kv
from .losses import FAMILY_ORDER, LossConfig


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _ints(s: str) -> tuple[int, ...]:
    return tuple(int(x) for x in s.split(",") if x.strip())


def _floats(s: str) -> tuple[float, ...]:
    return tuple(float(x) for x in s.split(",") if x.strip())


def _strs(s: str) -> tuple[str, ...]:
    return tuple(x.strip() for x in s.split(",") if x.strip())


def _choice(*options):
    def parse(s: str) -> str:
        if s not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {s!r}")
        return s

    return parse


def _opt_int(s: str):
    return None if s.strip().lower() in ("", "auto", "none") else int(s)


def _scale(s: str):
    return "auto" if s.strip().lower() == "auto" else float(s)


_PARSERS = {
    "channels": int,
    "height": int,
    "width": int,
    "n_calib": int,
    "n_test": int,
    "tags": _strs,
    "tag_scales": _floats,
    "num_modes": int,
    "decay": float,
    "inputs": _choice("auto", "grf", "divfree"),
    "target_source": _choice("auto", "heat", "model"),
    "label_noise": float,
    "hidden_widths": _ints,
    "activation": _choice("tanh", "identity"),
    "model_init": _choice("random", "trained"),
    "train_steps": int,
    "learning_rate": float,
    "family": _choice(*FAMILY_ORDER),
    "base_loss": _choice("mse", "relative_l1"),
    "sobolev_norm": _choice("l1", "l2"),
    "sobolev_order": _opt_int,
    "sobolev_scale": _scale,
    "sobolev_pilot": int,
    "alpha": float,
    "ratio": float,
    "fisher_mode": _choice("fisher", "identity"),
    "balance": _bool,
    "rank_mode": _choice("greedy", "uniform"),
    "seed": int,
    "workers": int,
}


@dataclass(frozen=True)
class RunConfig:
    channels: int = 2
    height: int = 8
    width: int = 8
    n_calib: int = 256
    n_test: int = 256
    tags: tuple[str, ...] = ("main",)
    tag_scales: tuple[float, ...] = ()
    num_modes: int = 8
    decay: float = 2.0
    inputs: str = "auto"
    target_source: str = "auto"
    label_noise: float = 0.05
    hidden_widths: tuple[int, ...] = (64, 64)
    activation: str = "tanh"
    model_init: str = "random"
    train_steps: int = 200
    learning_rate: float = 0.05
    family: str = "incompressible_ns"
    base_loss: str = "mse"
    sobolev_norm: str = "l1"
    sobolev_order: int | None = None
    sobolev_scale: object = "auto"
    sobolev_pilot: int = 32
    alpha: float = 0.7
    ratio: float = 0.5
    fisher_mode: str = "fisher"
    balance: bool = False
    rank_mode: str = "greedy"
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        def bad(key, why):
            raise ConfigError(f"{key}: {why}")

        for key in ("channels", "height", "width", "num_modes", "sobolev_pilot", "workers"):
            if getattr(self, key) < 1:
                bad(key, "must be >= 1")
        if self.height < 4 or self.width < 4:
            bad("height" if self.height < 4 else "width", "grid must be at least 4x4")
        for key in ("n_calib", "n_test", "train_steps"):
            if getattr(self, key) < 0:
                bad(key, "must be >= 0")
        if not self.tags:
            bad("tags", "at least one tag required")
        if len(set(self.tags)) != len(self.tags):
            bad("tags", "duplicate tag")
        if any("/" in t or "\n" in t for t in self.tags):
            bad("tags", "tags may not contain '/'")
        if self.tag_scales and len(self.tag_scales) != len(self.tags):
            bad("tag_scales", "needs one scale per tag")
        if any(s <= 0 for s in self.tag_scales):
            bad("tag_scales", "scales must be positive")
        if not self.decay > 0:
            bad("decay", "must be positive")
        if self.label_noise < 0:
            bad("label_noise", "must be >= 0")
        if any(w < 1 for w in self.hidden_widths):
            bad("hidden_widths", "widths must be >= 1")
        if not 0.0 <= self.alpha <= 1.0:
            bad("alpha", f"must be in [0, 1], got {self.alpha}")
        if not 0.0 < self.ratio <= 1.0:
            bad("ratio", f"must be in (0, 1], got {self.ratio}")
        if self.sobolev_order is not None and self.sobolev_order != FAMILY_ORDER[self.family]:
            bad("sobolev_order", f"family {self.family} requires order {FAMILY_ORDER[self.family]}")
        if self.sobolev_scale != "auto" and self.sobolev_scale < 0:
            bad("sobolev_scale", "must be >= 0 or 'auto'")
        if self.inputs == "divfree" and self.channels != 2:
            bad("inputs", "divfree inputs need channels = 2")
        if self.seed < 0:
            bad("seed", "must be >= 0")

    @property
    def spacing(self) -> float:
        return 1.0 / self.width

    @property
    def dim(self) -> int:
        return self.channels * self.height * self.width

    @property
    def widths(self) -> tuple[int, ...]:
        return (self.dim, *self.hidden_widths, self.dim)

    @property
    def scales(self) -> tuple[float, ...]:
        return self.tag_scales or tuple(1.0 for _ in self.tags)

    @property
    def divfree_inputs(self) -> bool:
        if self.inputs == "auto":
            return self.channels == 2 and self.family == "incompressible_ns"
        return self.inputs == "divfree"

    def loss_config(self, scale: float = 0.0) -> LossConfig:
        return LossConfig.for_family(
            self.family,
            base_kind=self.base_loss,
            sobolev_norm=self.sobolev_norm,
            sobolev_scale=scale,
            grid=(self.channels, self.height, self.width, self.spacing),
        )

    @classmethod
    def from_mapping(cls, kv: dict[str, str]) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        values = {}
        for key, raw_value in kv.items():
            if key not in known:
                raise ConfigError(f"{key}: unknown configuration key")
            try:
                values[key] = _PARSERS[key](raw_value)
            except ValueError as exc:
                raise ConfigError(f"{key}: {exc}") from exc
        return cls(**values)

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            textblob = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"config: cannot read {path}: {exc}") from exc
        try:
            return cls.from_mapping(parse_kv(textblob, str(path)))
        except FormatError as exc:
            raise ConfigError(str(exc)) from exc
