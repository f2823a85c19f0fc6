"""Flat key = value run configuration and model/training builders."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .errors import ParseError
from .measurements import dictionary_from_counts
from .model import KnfConfig
from .nets import AttentionStackSpec, MlpSpec
from .training import TrainConfig

_TRUE = {"true", "1", "yes", "on"}
_FALSE = {"false", "0", "no", "off"}

#: key -> (type tag, default). Every tunable of the model, dictionary,
#: optimizer, synthesizer and the analysis commands lives here.
SCHEMA = {
    # paths
    "out_dir": ("str", "out"),
    "train_manifest": ("str", ""),
    "test_manifest": ("str", ""),
    "checkpoint": ("str", ""),  # comma-separated list forms an ensemble
    # model dimensions
    "d": ("int", 1),
    "k": ("int", 4),
    "q": ("int", 16),
    "h": ("int", 8),
    "segments_per_call": ("int", 1),
    # components
    "revin": ("bool", True),
    "dictionary_mode": ("str", "predefined"),
    "use_global": ("bool", True),
    "use_local": ("bool", True),
    "use_feedback": ("bool", True),
    "feedback_refresh": ("bool", True),
    # network sizes (layer counts are hidden-layer counts)
    "encoder_hidden_dim": ("int", 64),
    "encoder_layers": ("int", 2),
    "decoder_hidden_dim": ("int", 64),
    "decoder_layers": ("int", 2),
    "attention_dim": ("int", 32),
    "attention_layers": ("int", 1),
    "attention_ff_dim": ("int", 0),  # 0 -> 2x attention_dim
    "feedback_hidden_dim": ("int", 64),
    "feedback_layers": ("int", 2),
    # measurement dictionary
    "poly_order": ("int", 4),
    "exp_count": ("int", 1),
    "sin_count": ("int", -1),  # -1 -> k
    "interactions": ("bool", True),
    # training
    "learning_rate": ("float", 1e-3),
    "batch_size": ("int", 64),
    "epochs": ("int", 100),
    "seed": ("int", 0),
    "clip_norm": ("float", 5.0),  # 0 disables clipping
    "val_metric": ("str", "rmse"),
    "patience": ("int", 10),  # 0 disables early stopping
    "stride": ("int", 1),
    "split_mode": ("str", "temporal"),  # or "none": every window trains
    # synthetic oscillator
    "synth_mu": ("float", -0.1),
    "synth_lambda": ("float", -1.0),
    "synth_dt": ("float", 0.1),
    "synth_steps": ("int", 200),
    "synth_train_count": ("int", 36),
    "synth_test_count": ("int", 12),
    "synth_init_low": ("float", -1.0),
    "synth_init_high": ("float", 1.0),
    # evaluation
    "eval_model": ("str", "knf"),  # or "persistence"
    "eval_metric": ("str", "smape"),
    "eval_stride": ("int", 0),  # 0 -> h (non-overlapping windows)
    # spectral analysis
    "spectral_series": ("int", 0),
    "spectral_start": ("int", 0),
    "spectral_components": ("int", 2),
}


def _parse_value(key: str, raw: str):
    kind, _ = SCHEMA[key]
    raw = raw.strip()
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            low = raw.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        return raw
    except ValueError as exc:
        raise ParseError(f"config key {key!r}: {exc}") from None


def default_config() -> dict:
    return {key: default for key, (_, default) in SCHEMA.items()}


def load_config(path) -> dict:
    """Parse a `key = value` file; '#' comments; unknown keys rejected."""
    config = default_config()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ParseError(f"{path}: line {lineno}: expected key = value")
            key, raw = (part.strip() for part in line.split("=", 1))
            if key not in SCHEMA:
                raise ParseError(f"{path}: line {lineno}: unknown key {key!r}")
            config[key] = _parse_value(key, raw)
    return config


def apply_overrides(config: dict, overrides) -> dict:
    for item in overrides:
        if "=" not in item:
            raise ParseError(f"override {item!r}: expected key=value")
        key, raw = (part.strip() for part in item.split("=", 1))
        if key not in SCHEMA:
            raise ParseError(f"override: unknown key {key!r}")
        config[key] = _parse_value(key, raw)
    return config


# ----------------------------------------------------------------- builders


def _mlp_widths(w_in: int, hidden: int, layers: int, w_out: int) -> tuple:
    return (w_in, *([hidden] * layers), w_out)


def make_knf_config(rc: dict) -> KnfConfig:
    d, k, q = rc["d"], rc["k"], rc["q"]
    sin_count = rc["sin_count"] if rc["sin_count"] >= 0 else k
    spec = dictionary_from_counts(
        d=d,
        k=k,
        poly_order=rc["poly_order"],
        exp_count=rc["exp_count"],
        sin_count=sin_count,
        interactions=rc["interactions"],
    )
    enc_out = spec.m if rc["dictionary_mode"] == "learned" else spec.n * d * k
    return KnfConfig(
        d=d,
        k=k,
        q=q,
        h=rc["h"],
        spec=spec,
        encoder=MlpSpec(
            _mlp_widths(d * k, rc["encoder_hidden_dim"], rc["encoder_layers"], enc_out)
        ),
        decoder=MlpSpec(
            _mlp_widths(spec.m, rc["decoder_hidden_dim"], rc["decoder_layers"], d * k)
        ),
        attention=AttentionStackSpec(
            model_width=rc["attention_dim"],
            layers=rc["attention_layers"],
            ff_width=rc["attention_ff_dim"] or None,
        ),
        feedback=MlpSpec(
            _mlp_widths(d * q, rc["feedback_hidden_dim"], rc["feedback_layers"], spec.m)
        ),
        segments_per_call=rc["segments_per_call"],
        revin=rc["revin"],
        dictionary_mode=rc["dictionary_mode"],
        use_global=rc["use_global"],
        use_local=rc["use_local"],
        use_feedback=rc["use_feedback"],
        feedback_refresh=rc["feedback_refresh"],
    )


def make_train_config(rc: dict) -> TrainConfig:
    return TrainConfig(
        learning_rate=rc["learning_rate"],
        batch_size=rc["batch_size"],
        epochs=rc["epochs"],
        seed=rc["seed"],
        clip_norm=rc["clip_norm"] or None,
        val_metric=rc["val_metric"],
        patience=rc["patience"] or None,
    )
