"""Training configuration, ablation switches, and the flat config-file format.

Config files are plain text, one ``key = value`` per line, ``#`` comments.
Unknown keys are errors so that sweep manifests stay reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Any

from .errors import ConfigError

MODALITIES = ("text", "visual")

ABLATION_FLAGS = (
    "no_char_encoder",   # drop the characteristic (multi-modal attention) path
    "no_graph_encoder",  # drop the co-purchase graph attention path
    "no_hypergraph",     # drop hyperedge propagation from scores and alignment
    "no_alignment",      # drop the contrastive alignment loss
    "no_text",
    "no_visual",
)


@dataclass
class TrainConfig:
    # capacity
    embed_dim: int = 64
    item_attn_layers: int = 1    # self-attention depth over per-item feature rows
    bundle_attn_layers: int = 1  # self-attention depth over bundle members
    graph_attn_layers: int = 1   # attention rounds on the co-purchase graph
    hypergraph_layers: int = 1   # hyperedge propagation depth
    num_hyperedges: int = 4

    # mixing and losses
    gamma: float = 0.5           # characteristic vs collaborative mix
    beta: float = 0.5            # graph-message vs residual mix
    lambda1: float = 0.1         # alignment loss weight
    lambda2: float = 1e-5        # L2 regularization weight
    tau_gumbel: float = 0.2
    tau_infonce: float = 0.2
    p_norm: int = 2
    negative_scope: str = "full"     # {full, in_batch}
    collab_mode: str = "stacked"     # {stacked, parallel} graph attention wiring
    hyperedge_input: str = "raw"     # {raw, projected} feature space for hyperedges
    leaky_slope: float = 0.2

    # data protocol
    epsilon: int = 1             # co-purchase count threshold
    mask_fraction: float = 0.5

    # optimization
    batch_size: int = 1024
    learning_rate: float = 1e-3
    max_epochs: int = 500
    patience: int = 20
    rng_seed: int = 0

    # ablations
    no_char_encoder: bool = False
    no_graph_encoder: bool = False
    no_hypergraph: bool = False
    no_alignment: bool = False
    no_text: bool = False
    no_visual: bool = False

    def validate(self) -> "TrainConfig":
        c = self
        if c.embed_dim < 1:
            raise ConfigError("embed_dim must be >= 1")
        for name in ("item_attn_layers", "bundle_attn_layers", "graph_attn_layers", "hypergraph_layers"):
            if getattr(c, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if c.num_hyperedges < 1:
            raise ConfigError("num_hyperedges must be >= 1")
        if not 0.0 <= c.gamma <= 1.0:
            raise ConfigError(f"gamma must be in [0, 1], got {c.gamma}")
        if not 0.0 <= c.beta <= 1.0:
            raise ConfigError(f"beta must be in [0, 1], got {c.beta}")
        if c.lambda1 < 0 or c.lambda2 < 0:
            raise ConfigError("lambda1 and lambda2 must be >= 0")
        if c.tau_gumbel <= 0 or c.tau_infonce <= 0:
            raise ConfigError("temperatures must be > 0")
        if c.p_norm < 1:
            raise ConfigError("p_norm must be >= 1")
        if c.negative_scope not in ("full", "in_batch"):
            raise ConfigError(f"negative_scope must be full or in_batch, got {c.negative_scope!r}")
        if c.collab_mode not in ("stacked", "parallel"):
            raise ConfigError(f"collab_mode must be stacked or parallel, got {c.collab_mode!r}")
        if c.hyperedge_input not in ("raw", "projected"):
            raise ConfigError(f"hyperedge_input must be raw or projected, got {c.hyperedge_input!r}")
        if c.epsilon < 1:
            raise ConfigError(f"epsilon must be a positive integer, got {c.epsilon}")
        if not 0.0 < c.mask_fraction < 1.0:
            raise ConfigError(f"mask_fraction must be in (0, 1), got {c.mask_fraction}")
        if c.batch_size < 1 or c.max_epochs < 1 or c.patience < 1:
            raise ConfigError("batch_size, max_epochs and patience must be >= 1")
        if c.no_char_encoder and c.no_graph_encoder:
            raise ConfigError("no_char_encoder and no_graph_encoder together leave no explicit path")
        if c.no_text and c.no_visual:
            raise ConfigError("no_text and no_visual together leave no modality")
        return c

    # -- resolved wiring -----------------------------------------------------

    @property
    def modalities(self) -> tuple[str, ...]:
        kept = [m for m in MODALITIES if not getattr(self, f"no_{m}")]
        return tuple(kept)

    @property
    def effective_gamma(self) -> float:
        if self.no_char_encoder:
            return 0.0
        if self.no_graph_encoder:
            return 1.0
        return self.gamma

    @property
    def effective_lambda1(self) -> float:
        # alignment needs both views; dropping the hypergraph removes one side
        if self.no_alignment or self.no_hypergraph:
            return 0.0
        return self.lambda1

    @property
    def use_hypergraph(self) -> bool:
        return not self.no_hypergraph

    @property
    def use_graph_encoder(self) -> bool:
        return not self.no_graph_encoder


def apply_ablation(config: TrainConfig, flags: list[str] | tuple[str, ...]) -> TrainConfig:
    """Return a copy with the named ablation switches set (and validated)."""
    unknown = [f for f in flags if f not in ABLATION_FLAGS]
    if unknown:
        raise ConfigError(f"unknown ablation flag(s) {unknown}; choose from {list(ABLATION_FLAGS)}")
    return replace(config, **{f: True for f in flags}).validate()


# ---------------------------------------------------------------------------
# flat key/value config files


def _coerce(name: str, raw: str, target_type: type) -> Any:
    raw = raw.strip()
    try:
        if target_type is bool:
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if target_type is int:
            return int(raw)
        if target_type is float:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"config key {name!r}: cannot parse {raw!r} as {target_type.__name__}") from None


def config_field_types() -> dict[str, type]:
    defaults = TrainConfig()
    return {f.name: type(getattr(defaults, f.name)) for f in fields(TrainConfig)}


def parse_config_text(text: str, source: str = "<config>") -> dict[str, Any]:
    types = config_field_types()
    out: dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in types:
            raise ConfigError(f"{source}:{lineno}: unknown config key {key!r}")
        out[key] = _coerce(key, value, types[key])
    return out


def load_config(path: Path | str | None = None, overrides: dict[str, Any] | None = None) -> TrainConfig:
    values: dict[str, Any] = {}
    if path is not None:
        values.update(parse_config_text(Path(path).read_text(encoding="utf-8"), source=str(path)))
    if overrides:
        types = config_field_types()
        for key, value in overrides.items():
            if key not in types:
                raise ConfigError(f"unknown config key {key!r}")
            values[key] = value if not isinstance(value, str) else _coerce(key, value, types[key])
    return TrainConfig(**values).validate()


def dump_config(config: TrainConfig) -> str:
    lines = [f"{f.name} = {getattr(config, f.name)}" for f in fields(TrainConfig)]
    return "\n".join(lines) + "\n"
