"""The joint magnitude/phase generative model.

Three networks share a parameter store under disjoint name spaces:

* ``encoder``            q(z | psi, a)   -> per-frame mu_q, sigma_q
* ``magnitude_decoder``  p(a | z)        -> a_hat, sigma_mag (both >= 0)
* ``phase_decoder``      p(psi | a, z)   -> psi_hat in [-pi, pi)

The encoder stacks three input channels per time-frequency bin
(magnitude, cos phase, sin phase), runs the convolutional plan, and
maps flattened per-frame features through fully connected heads. Each
decoder starts from the latent sequence with a temporal block, expands
back to full frequency resolution through transition-up stages, and
ends in 1x1 transition-final heads; the phase decoder additionally
receives the estimated magnitude as an extra input channel and emits
its angle through an (cos, sin) -> atan2 head, which makes the range
invariant structural.

Architecture plans are token tuples: ``"db"`` inserts a dense block,
``"td:S"`` a transition down with stride S (encoder), ``"tu:S"`` a
transition up (decoder). Transition-up targets mirror the encoder's
frequency-axis lengths, which resolves the transposed-conv output-size
ambiguity.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, load_container, save_container
from .blocks import (
    DenseBlock,
    FullyConnected,
    TemporalBlock,
    TransitionDown,
    TransitionExpand,
    TransitionFinal,
    TransitionUp,
)
from .dsp import AnalysisConfig, ComplexSpectrogram, recombine
from .errors import ConfigError, InvalidArgumentError, ShapeError

CHECKPOINT_KIND = "magphase-checkpoint"


def _parse_plan(plan, kinds):
    parsed = []
    for token in plan:
        if token == "db":
            parsed.append(("db", 0))
        elif ":" in token and token.split(":")[0] in kinds:
            kind, stride = token.split(":")
            stride = int(stride)
            if stride < 1:
                raise ConfigError(f"stride must be >= 1 in token {token!r}")
            parsed.append((kind, stride))
        else:
            raise ConfigError(f"unknown plan token {token!r}")
    return parsed


@dataclass(frozen=True)
class ModelConfig:
    """Shape and width settings for the three networks."""

    freq_bins: int
    latent_dim: int
    encoder_plan: tuple
    decoder_plan: tuple
    phase_merge_plan: tuple = ("db",)
    temporal_channels: int = 32
    fc_hidden: int = 64

    def __post_init__(self):
        if self.latent_dim >= self.freq_bins:
            raise ConfigError(
                f"latent_dim {self.latent_dim} must be < freq_bins {self.freq_bins}"
            )
        enc = _parse_plan(self.encoder_plan, kinds=("td",))
        dec = _parse_plan(self.decoder_plan, kinds=("tu",))
        merge = _parse_plan(self.phase_merge_plan, kinds=())
        n_down = sum(1 for kind, _ in enc if kind == "td")
        n_up = sum(1 for kind, _ in dec if kind == "tu")
        if n_down != n_up:
            raise ConfigError(
                f"decoder must mirror encoder: {n_down} transition-down vs {n_up} transition-up"
            )
        if any(kind != "db" for kind, _ in merge):
            raise ConfigError("phase_merge_plan may only contain 'db' tokens")
        if min(self.encoder_lengths()) < 1:
            raise ConfigError("encoder plan collapses the frequency axis to zero length")

    def encoder_lengths(self):
        """Frequency-axis length after each transition down, starting at F."""
        lengths = [self.freq_bins]
        for kind, stride in _parse_plan(self.encoder_plan, kinds=("td",)):
            if kind == "td":
                lengths.append(-(-lengths[-1] // stride))
        return lengths

    def bottom_length(self):
        return self.encoder_lengths()[-1]

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(
            freq_bins=int(d["freq_bins"]),
            latent_dim=int(d["latent_dim"]),
            encoder_plan=tuple(d["encoder_plan"]),
            decoder_plan=tuple(d["decoder_plan"]),
            phase_merge_plan=tuple(d.get("phase_merge_plan", ("db",))),
            temporal_channels=int(d["temporal_channels"]),
            fc_hidden=int(d["fc_hidden"]),
        )


def toy_model_config() -> ModelConfig:
    """Desk-scale preset: F=129 (256-point DFT), D=8, halved widths."""
    return ModelConfig(
        freq_bins=129,
        latent_dim=8,
        encoder_plan=("td:2", "db", "td:2", "db", "td:2", "td:2"),
        decoder_plan=("db", "tu:2", "db", "tu:2", "tu:2", "tu:2"),
        phase_merge_plan=("db",),
        temporal_channels=32,
        fc_hidden=64,
    )


def paper_model_config() -> ModelConfig:
    """Full-scale preset: F=513, D=32. The exact per-stage schedule of the
    original architecture is not recoverable, so this documents ours."""
    return ModelConfig(
        freq_bins=513,
        latent_dim=32,
        encoder_plan=("db", "td:2", "db", "td:2", "db", "td:2", "db", "td:2", "td:2"),
        decoder_plan=("db", "tu:2", "db", "tu:2", "db", "tu:2", "tu:2", "tu:2"),
        phase_merge_plan=("db",),
        temporal_channels=64,
        fc_hidden=256,
    )


def default_analysis_config(freq_bins: int) -> AnalysisConfig:
    """The reference framing for a bin count: dft = 2(F-1), window = dft/2."""
    return AnalysisConfig.from_dft(2 * (freq_bins - 1))


@dataclass
class ReconstructionOutput:
    """Everything one reconstruction pass produces (autodiff tensors)."""

    mu_q: ad.Tensor
    sigma_q: ad.Tensor
    z: ad.Tensor
    a_hat: ad.Tensor
    sigma_mag: ad.Tensor
    psi_hat: ad.Tensor


def concentration(a_hat):
    """Von Mises concentration rule: kappa = a_hat + 1 (>= 1 for a_hat >= 0).

    Gradients pass through, so phase losses also shape the magnitude
    decoder via kappa.
    """
    if isinstance(a_hat, ad.Tensor):
        if np.any(a_hat.data < 0):
            raise InvalidArgumentError("concentration requires a_hat >= 0")
        return ad.add(a_hat, 1.0)
    a = np.asarray(a_hat)
    if np.any(a < 0):
        raise InvalidArgumentError("concentration requires a_hat >= 0")
    return a + 1.0


class _DecoderTrunk:
    """Temporal block -> per-frame FC -> reshape -> transition-up/dense plan."""

    def __init__(self, store, prefix, rng, config: ModelConfig):
        self.config = config
        d0 = config.bottom_length()
        self.d0 = d0
        self.temporal = TemporalBlock(
            store, f"{prefix}/temporal", rng, config.latent_dim, config.temporal_channels
        )
        self.fc = FullyConnected(
            store, f"{prefix}/fc", rng, config.temporal_channels, 16 * d0
        )
        targets = list(reversed(config.encoder_lengths()[:-1]))
        ch = 16
        self.ops = []
        for i, (kind, stride) in enumerate(_parse_plan(config.decoder_plan, kinds=("tu",))):
            if kind == "db":
                block = DenseBlock(store, f"{prefix}/db{i}", rng, ch)
                ch = block.out_ch
                self.ops.append(("db", block, None))
            else:
                block = TransitionUp(store, f"{prefix}/tu{i}", rng, ch, stride)
                ch = TransitionUp.OUT
                self.ops.append(("tu", block, targets.pop(0)))
        self.out_ch = ch

    def __call__(self, z):
        h = self.temporal(z)
        h = self.fc(h)
        b, _, n = h.shape
        h = ad.reshape(h, (b, 16, self.d0, n))
        for kind, block, target in self.ops:
            h = block(h) if kind == "db" else block(h, target)
        return h

    @staticmethod
    def param_count(config: ModelConfig):
        d0 = config.bottom_length()
        total = TemporalBlock.param_count(config.latent_dim, config.temporal_channels)
        total += FullyConnected.param_count(config.temporal_channels, 16 * d0)
        ch = 16
        for kind, _ in _parse_plan(config.decoder_plan, kinds=("tu",)):
            if kind == "db":
                total += DenseBlock.param_count(ch)
                ch += 32
            else:
                total += TransitionUp.param_count(ch)
                ch = TransitionUp.OUT
        return total, ch


class JointModel:
    """Encoder, magnitude decoder, and phase decoder over one ParamStore."""

    def __init__(self, config: ModelConfig, *, seed: int = 0, dtype=np.float32):
        self.config = config
        self.store = ParamStore(dtype=dtype)
        rng = np.random.default_rng(seed)

        # encoder: TE on the 3 input channels, then the plan
        self._enc_te = TransitionExpand(self.store, "encoder/te", rng, 3)
        ch = TransitionExpand.OUT
        self._enc_ops = []
        for i, (kind, stride) in enumerate(_parse_plan(config.encoder_plan, kinds=("td",))):
            if kind == "db":
                block = DenseBlock(self.store, f"encoder/db{i}", rng, ch)
                ch = block.out_ch
                self._enc_ops.append(block)
            else:
                self._enc_ops.append(TransitionDown(self.store, f"encoder/td{i}", rng, ch, stride))
        self._enc_feat = ch * config.bottom_length()
        self._enc_fc = FullyConnected(
            self.store, "encoder/fc", rng, self._enc_feat, config.fc_hidden
        )
        self._enc_mu = FullyConnected(
            self.store, "encoder/mu", rng, config.fc_hidden, config.latent_dim,
            output_layer=True,
        )
        self._enc_sigma = FullyConnected(
            self.store, "encoder/sigma", rng, config.fc_hidden, config.latent_dim,
            output_layer=True,
        )

        # magnitude decoder trunk and heads
        self._mag_trunk = _DecoderTrunk(self.store, "magnitude_decoder", rng, config)
        self._mag_head_a = TransitionFinal(
            self.store, "magnitude_decoder/head_a", rng, self._mag_trunk.out_ch
        )
        self._mag_head_sigma = TransitionFinal(
            self.store, "magnitude_decoder/head_sigma", rng, self._mag_trunk.out_ch
        )

        # phase decoder trunk, magnitude merge, and (cos, sin) heads
        self._phase_trunk = _DecoderTrunk(self.store, "phase_decoder", rng, config)
        ch = self._phase_trunk.out_ch + 1
        self._phase_merge = []
        for i, _ in enumerate(_parse_plan(config.phase_merge_plan, kinds=())):
            block = DenseBlock(self.store, f"phase_decoder/merge{i}", rng, ch)
            ch = block.out_ch
            self._phase_merge.append(block)
        self._phase_head_cos = TransitionFinal(self.store, "phase_decoder/head_cos", rng, ch)
        self._phase_head_sin = TransitionFinal(self.store, "phase_decoder/head_sin", rng, ch)

    # ------------------------------------------------------------------
    def _check_fn(self, mag, phase):
        mag = np.asarray(mag)
        phase = np.asarray(phase)
        if mag.shape != phase.shape:
            raise ShapeError(f"magnitude {mag.shape} vs phase {phase.shape}")
        if mag.shape[-2] != self.config.freq_bins:
            raise ShapeError(
                f"expected {self.config.freq_bins} frequency bins, got {mag.shape[-2]}"
            )
        return mag, phase

    def encode(self, mag, phase):
        """Per-frame posterior parameters (mu_q, sigma_q), shapes (D, N).

        Accepts (F, N) arrays or batched (B, F, N); batch shape carries
        through. sigma_q comes from a softplus head, hence > 0.
        """
        mag, phase = self._check_fn(mag, phase)
        batched = mag.ndim == 3
        if not batched:
            mag, phase = mag[None], phase[None]
        x = np.stack([mag, np.cos(phase), np.sin(phase)], axis=1)
        h = ad.Tensor(np.ascontiguousarray(x, dtype=self.store.dtype))
        h = self._enc_te(h)
        for op in self._enc_ops:
            h = op(h)
        b, ch, d, n = h.shape
        h = ad.reshape(h, (b, ch * d, n))
        h = self._enc_fc(h)
        mu = self._enc_mu(h)
        sigma = ad.softplus(self._enc_sigma(h))
        if not batched:
            mu, sigma = mu[0], sigma[0]
        return mu, sigma

    def decode_magnitude(self, z):
        """Latents (D, N) or (B, D, N) -> (a_hat, sigma_mag), both >= 0."""
        z = ad.as_tensor(z)
        batched = z.ndim == 3
        if not batched:
            z = ad.reshape(z, (1, *z.shape))
        h = self._mag_trunk(z)
        a_hat = ad.softplus(self._mag_head_a(h)[:, 0])
        sigma_mag = ad.softplus(self._mag_head_sigma(h)[:, 0])
        if not batched:
            a_hat, sigma_mag = a_hat[0], sigma_mag[0]
        return a_hat, sigma_mag

    def decode_phase(self, z, a_hat):
        """Latents plus estimated magnitude -> psi_hat in [-pi, pi)."""
        z = ad.as_tensor(z)
        a_hat = ad.as_tensor(a_hat)
        batched = z.ndim == 3
        if not batched:
            z = ad.reshape(z, (1, *z.shape))
            a_hat = ad.reshape(a_hat, (1, *a_hat.shape))
        h = self._phase_trunk(z)
        b, _, f, n = h.shape
        h = ad.concat([h, ad.reshape(a_hat, (b, 1, f, n))], axis=1)
        for block in self._phase_merge:
            h = block(h)
        psi = ad.atan2(self._phase_head_sin(h)[:, 0], self._phase_head_cos(h)[:, 0])
        if not batched:
            psi = psi[0]
        return psi

    def reconstruct(self, mag, phase, epsilon=None) -> ReconstructionOutput:
        """encode -> reparameterize -> decode magnitude -> decode phase.

        ``epsilon`` is the standard-normal draw used by the
        reparameterization trick; ``None`` selects the posterior mean
        (the inference path).
        """
        mu_q, sigma_q = self.encode(mag, phase)
        if epsilon is None:
            epsilon = np.zeros(mu_q.shape, dtype=self.store.dtype)
        z = ad.reparameterize(mu_q, sigma_q, ad.as_tensor(epsilon))
        a_hat, sigma_mag = self.decode_magnitude(z)
        psi_hat = self.decode_phase(z, a_hat)
        return ReconstructionOutput(
            mu_q=mu_q, sigma_q=sigma_q, z=z, a_hat=a_hat,
            sigma_mag=sigma_mag, psi_hat=psi_hat,
        )

    def generate(self, z, analysis_config: AnalysisConfig | None = None) -> ComplexSpectrogram:
        """Decode latents (D, N) into a complex spectrogram."""
        z = np.asarray(z)
        if not np.all(np.isfinite(z)):
            raise InvalidArgumentError("latents must be finite")
        if analysis_config is None:
            analysis_config = default_analysis_config(self.config.freq_bins)
        if analysis_config.freq_bins != self.config.freq_bins:
            raise ConfigError(
                f"analysis config has {analysis_config.freq_bins} bins, "
                f"model expects {self.config.freq_bins}"
            )
        zt = ad.Tensor(z.astype(self.store.dtype))
        a_hat, _ = self.decode_magnitude(zt)
        psi_hat = self.decode_phase(zt, a_hat)
        return ComplexSpectrogram(
            values=recombine(a_hat.data.astype(np.float64), psi_hat.data.astype(np.float64)),
            config=analysis_config,
        )

    # ------------------------------------------------------------------
    def parameter_count(self) -> int:
        return self.store.size()

    def analytic_parameter_count(self) -> int:
        """Closed-form count from the config alone (no arrays touched)."""
        cfg = self.config
        total = TransitionExpand.param_count(3)
        ch = TransitionExpand.OUT
        for kind, _ in _parse_plan(cfg.encoder_plan, kinds=("td",)):
            if kind == "db":
                total += DenseBlock.param_count(ch)
                ch += 32
            else:
                total += TransitionDown.param_count(ch)
        total += FullyConnected.param_count(ch * cfg.bottom_length(), cfg.fc_hidden)
        total += 2 * FullyConnected.param_count(cfg.fc_hidden, cfg.latent_dim)

        trunk_total, trunk_ch = _DecoderTrunk.param_count(cfg)
        total += trunk_total + 2 * TransitionFinal.param_count(trunk_ch)

        total += trunk_total  # phase trunk has identical structure
        ch = trunk_ch + 1
        for _ in _parse_plan(cfg.phase_merge_plan, kinds=()):
            total += DenseBlock.param_count(ch)
            ch += 32
        total += 2 * TransitionFinal.param_count(ch)
        return total

    def parameter_names(self, component: str | None = None):
        if component is None:
            return self.store.names()
        return sorted(self.store.subset(component + "/"))


def save_checkpoint(model: JointModel, path, extra_meta: dict | None = None,
                    extra_arrays: dict | None = None):
    """Persist model parameters (and optional training state) to one file."""
    meta = {"kind": CHECKPOINT_KIND, "model_config": model.config.to_dict()}
    if extra_meta:
        meta.update(extra_meta)
    arrays = model.store.state_arrays()
    if extra_arrays:
        arrays.update(extra_arrays)
    save_container(path, arrays, meta)


def load_checkpoint(path, dtype=np.float32):
    """Rebuild a model from a checkpoint; returns (model, meta, extra_arrays)."""
    arrays, meta = load_container(path)
    if meta.get("kind") != CHECKPOINT_KIND:
        raise ConfigError(f"{path} is not a model checkpoint")
    config = ModelConfig.from_dict(meta["model_config"])
    model = JointModel(config, seed=0, dtype=dtype)
    model_arrays = {k: v for k, v in arrays.items() if k in model.store}
    extra = {k: v for k, v in arrays.items() if k not in model.store}
    missing = set(model.store.names()) - set(model_arrays)
    if missing:
        raise ConfigError(f"checkpoint {path} is missing parameters: {sorted(missing)[:3]}...")
    model.store.load_arrays(model_arrays)
    return model, meta, extra
