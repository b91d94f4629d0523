"""Flat key-value run configuration files.

Format: one ``key = value`` pair per line, ``#`` comments, schema
versioned. Relative paths resolve against the file's directory.
Recognized keys:

    schema_version            currently 1
    seed                      global RNG seed
    scheme                    M or J1..J7
    analysis.window_length    STFT window (samples)
    analysis.hop_length       hop (samples)
    analysis.dft_size         DFT length (even)
    model.preset              toy | paper | custom
    model.freq_bins           (custom preset only)
    model.latent_dim
    model.encoder_plan        comma-separated tokens, e.g. td:2,db,td:2
    model.decoder_plan
    model.phase_merge_plan
    model.temporal_channels
    model.fc_hidden
    train.segment_frames      together with utterances_per_batch this
    train.utterances_per_batch  fixes minibatch_frames
    train.max_epochs
    train.patience_epochs
    train.alpha / beta1 / beta2 / eps
    train.clip_threshold
    paths.train_manifest
    paths.dev_manifest
    paths.cache_dir
    paths.out_dir

Every CLI command rewrites its fully resolved configuration next to its
outputs for reproducibility.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

from .dsp import AnalysisConfig
from .errors import ConfigError
from .losses import SCHEME_WEIGHTS
from .model import ModelConfig, paper_model_config, toy_model_config
from .training import TrainConfig

SCHEMA_VERSION = 1

_PATH_KEYS = ("paths.train_manifest", "paths.dev_manifest", "paths.cache_dir", "paths.out_dir")
_KNOWN_KEYS = {
    "schema_version", "seed", "scheme",
    "analysis.window_length", "analysis.hop_length", "analysis.dft_size",
    "model.preset", "model.freq_bins", "model.latent_dim",
    "model.encoder_plan", "model.decoder_plan", "model.phase_merge_plan",
    "model.temporal_channels", "model.fc_hidden",
    "train.segment_frames", "train.utterances_per_batch",
    "train.max_epochs", "train.patience_epochs",
    "train.alpha", "train.beta1", "train.beta2", "train.eps",
    "train.clip_threshold",
    *_PATH_KEYS,
}


@dataclass
class RunConfig:
    analysis: AnalysisConfig
    model: ModelConfig
    scheme_id: str = "M"
    seed: int = 0
    train_overrides: dict = field(default_factory=dict)
    paths: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.scheme_id not in SCHEME_WEIGHTS:
            raise ConfigError(f"unknown scheme {self.scheme_id!r}")
        if self.analysis.freq_bins != self.model.freq_bins:
            raise ConfigError(
                f"analysis config yields F={self.analysis.freq_bins} bins but the "
                f"model expects F={self.model.freq_bins}"
            )

    def train_config(self, stage: int, scheme_id: str | None = None) -> TrainConfig:
        kw = dict(self.train_overrides)
        seg = int(kw.pop("segment_frames", 256))
        upb = int(kw.pop("utterances_per_batch", 16))
        return TrainConfig(
            minibatch_frames=seg * upb, segment_frames=seg, utterances_per_batch=upb,
            stage=stage, scheme_id=scheme_id or self.scheme_id, seed=self.seed,
            **kw,
        )

    def path(self, key: str, default=None):
        return self.paths.get(key, default)


def _parse_scalar(key, value):
    if key in ("seed", "schema_version") or key.startswith(("analysis.", "model.")):
        if key.endswith("_plan") or key == "model.preset":
            return value
        return int(value)
    if key.startswith("train."):
        if key in ("train.segment_frames", "train.utterances_per_batch",
                   "train.max_epochs", "train.patience_epochs"):
            return int(value)
        return float(value)
    return value


def parse_runconfig_text(text: str, base_dir: str = ".") -> RunConfig:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in _KNOWN_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = _parse_scalar(key, value)

    if int(values.get("schema_version", SCHEMA_VERSION)) != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {values['schema_version']}")

    analysis = AnalysisConfig(
        window_length=int(values.get("analysis.window_length", 512)),
        hop_length=int(values.get("analysis.hop_length", 128)),
        dft_size=int(values.get("analysis.dft_size", 1024)),
    )
    preset = values.get("model.preset", "toy")
    if preset == "toy":
        model = toy_model_config()
    elif preset == "paper":
        model = paper_model_config()
    elif preset == "custom":
        try:
            model = ModelConfig(
                freq_bins=int(values["model.freq_bins"]),
                latent_dim=int(values["model.latent_dim"]),
                encoder_plan=tuple(values["model.encoder_plan"].split(",")),
                decoder_plan=tuple(values["model.decoder_plan"].split(",")),
                phase_merge_plan=tuple(
                    t for t in values.get("model.phase_merge_plan", "db").split(",")
                    if t.strip()
                ),
                temporal_channels=int(values.get("model.temporal_channels", 32)),
                fc_hidden=int(values.get("model.fc_hidden", 64)),
            )
        except KeyError as exc:
            raise ConfigError(f"custom model preset needs key {exc}") from exc
    else:
        raise ConfigError(f"unknown model.preset {preset!r}")

    overrides = {
        key.split(".", 1)[1]: value
        for key, value in values.items()
        if key.startswith("train.")
    }
    paths = {}
    for key in _PATH_KEYS:
        if key in values:
            p = values[key]
            paths[key.split(".", 1)[1]] = (
                p if os.path.isabs(p) else os.path.normpath(os.path.join(base_dir, p))
            )
    return RunConfig(
        analysis=analysis,
        model=model,
        scheme_id=values.get("scheme", "M"),
        seed=int(values.get("seed", 0)),
        train_overrides=overrides,
        paths=paths,
    )


def load_runconfig(path) -> RunConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read run config {path}: {exc}") from exc
    return parse_runconfig_text(text, base_dir=os.path.dirname(os.path.abspath(path)))


def resolved_text(cfg: RunConfig, scheme_id: str | None = None) -> str:
    """Serialize the fully resolved configuration back to key-value lines."""
    model = cfg.model
    lines = [
        f"schema_version = {SCHEMA_VERSION}",
        f"seed = {cfg.seed}",
        f"scheme = {scheme_id or cfg.scheme_id}",
        f"analysis.window_length = {cfg.analysis.window_length}",
        f"analysis.hop_length = {cfg.analysis.hop_length}",
        f"analysis.dft_size = {cfg.analysis.dft_size}",
        "model.preset = custom",
        f"model.freq_bins = {model.freq_bins}",
        f"model.latent_dim = {model.latent_dim}",
        f"model.encoder_plan = {','.join(model.encoder_plan)}",
        f"model.decoder_plan = {','.join(model.decoder_plan)}",
        f"model.phase_merge_plan = {','.join(model.phase_merge_plan)}",
        f"model.temporal_channels = {model.temporal_channels}",
        f"model.fc_hidden = {model.fc_hidden}",
    ]
    for key, value in sorted(cfg.train_overrides.items()):
        lines.append(f"train.{key} = {value}")
    for key, value in sorted(cfg.paths.items()):
        lines.append(f"paths.{key} = {value}")
    return "\n".join(lines) + "\n"


def write_resolved(cfg: RunConfig, out_dir, command: str, scheme_id: str | None = None):
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, f"resolved.{command}.cfg")
    with open(path, "w") as fh:
        fh.write(resolved_text(cfg, scheme_id))
    return path
