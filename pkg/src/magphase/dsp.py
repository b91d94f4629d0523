"""STFT analysis/synthesis and phase-derivative utilities.

Conventions used throughout the toolkit:

* Spectrograms are indexed ``(frequency bin, time frame)`` with
  ``F = dft_size // 2 + 1`` bins.
* Angles live in the half-open interval ``[-pi, pi)``; :func:`wrap`
  reduces any finite angle into it and maps ``+pi`` to ``-pi``.
* Analysis reflect-pads the signal by ``window_length // 2`` on both
  ends so frame ``n`` is centered on sample ``n * hop_length``.
* Synthesis is the exact least-squares inverse of analysis: windowed
  overlap-add, folding of the reflected edge regions, and division by
  the accumulated squared-window envelope. ``istft(stft(x))`` therefore
  reproduces ``x`` to floating-point precision, and ``stft(istft(.))``
  acts as an orthogonal projection onto consistent spectrograms (the
  property Griffin-Lim relies on).

All functions here are pure and operate in 64-bit floats.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InvalidArgumentError, ShapeError

TWO_PI = 2.0 * np.pi


def wrap(angle):
    """Reduce an angle (scalar or array) into ``[-pi, pi)``.

    Uses the floor-based reduction ``x - 2*pi*floor((x + pi) / (2*pi))``,
    which yields exactly the half-open interval and sends ``+pi`` to
    ``-pi``.
    """
    a = np.asarray(angle, dtype=np.float64)
    if not np.all(np.isfinite(a)):
        raise InvalidArgumentError("wrap requires finite angles")
    out = a - TWO_PI * np.floor((a + np.pi) / TWO_PI)
    # rounding of (a + pi) can leave out touching either boundary when
    # the argument sits within one ulp of an odd multiple of pi; fold
    # both edges back into the half-open interval
    out = np.where(out >= np.pi, out - TWO_PI, out)
    out = np.where(out < -np.pi, out + TWO_PI, out)
    if np.isscalar(angle) or np.ndim(angle) == 0:
        return float(out)
    return out


def phase_as_float32(psi) -> np.ndarray:
    """Cast wrapped phase to float32, preserving the half-open interval.

    Values within half an ulp below pi round up to float32(pi) when
    cast; fold those to -float32(pi) (the same angle) so stored phase
    always satisfies -float32(pi) <= psi < float32(pi).
    """
    f = np.asarray(psi).astype(np.float32)
    pi32 = np.float32(np.pi)
    return np.where(f >= pi32, -pi32, f).astype(np.float32)


@dataclass(frozen=True)
class AudioBuffer:
    """A mono time-domain signal with its sample rate in Hz."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise InvalidArgumentError("AudioBuffer expects a 1-D signal")
        if not np.all(np.isfinite(samples)):
            raise InvalidArgumentError("AudioBuffer samples must be finite")
        if self.sample_rate <= 0:
            raise InvalidArgumentError("sample_rate must be positive")
        object.__setattr__(self, "samples", samples)

    def __len__(self):
        return self.samples.shape[0]


@dataclass(frozen=True)
class AnalysisConfig:
    """STFT framing parameters. Only Hann analysis windows are supported."""

    window_length: int
    hop_length: int
    dft_size: int
    window_kind: str = "hann"

    def __post_init__(self):
        if not (0 < self.hop_length <= self.window_length <= self.dft_size):
            raise ConfigError(
                "require 0 < hop_length <= window_length <= dft_size, got "
                f"hop={self.hop_length} window={self.window_length} dft={self.dft_size}"
            )
        if self.dft_size % 2 != 0:
            raise ConfigError("dft_size must be even")
        if self.window_kind != "hann":
            raise ConfigError(f"unsupported window kind: {self.window_kind!r}")

    @property
    def freq_bins(self) -> int:
        return self.dft_size // 2 + 1

    @classmethod
    def from_dft(cls, dft_size: int) -> "AnalysisConfig":
        """Reference geometry: window = dft/2, hop = window/4 (75% overlap)."""
        return cls(window_length=dft_size // 2, hop_length=dft_size // 8, dft_size=dft_size)

    def frame_count(self, n_samples: int) -> int:
        return n_samples // self.hop_length + 1


# the 512/128/1024 configuration used by the reference pipeline (F = 513)
PAPER_ANALYSIS = AnalysisConfig(window_length=512, hop_length=128, dft_size=1024)
# desk-scale configuration (F = 129)
TOY_ANALYSIS = AnalysisConfig(window_length=128, hop_length=32, dft_size=256)


@dataclass(frozen=True)
class ComplexSpectrogram:
    """Complex STFT values, ``freq_bins x frames``, with their framing config."""

    values: np.ndarray
    config: AnalysisConfig

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.complex128)
        if values.ndim != 2:
            raise ShapeError("spectrogram must be 2-D (bins x frames)")
        if values.shape[0] != self.config.freq_bins:
            raise ShapeError(
                f"expected {self.config.freq_bins} bins for dft_size="
                f"{self.config.dft_size}, got {values.shape[0]}"
            )
        if not np.all(np.isfinite(values)):
            raise InvalidArgumentError("spectrogram entries must be finite")
        object.__setattr__(self, "values", values)

    @property
    def shape(self):
        return self.values.shape


def hann_window(length: int) -> np.ndarray:
    """Periodic Hann window, w[t] = 0.5 * (1 - cos(2 pi t / length))."""
    t = np.arange(length, dtype=np.float64)
    return 0.5 * (1.0 - np.cos(TWO_PI * t / length))


def _frame_starts(n_samples: int, config: AnalysisConfig) -> int:
    return config.frame_count(n_samples)


def stft(audio: AudioBuffer, config: AnalysisConfig) -> ComplexSpectrogram:
    """Short-time Fourier transform with centered, reflect-padded frames.

    Frame ``n`` covers padded samples ``[n*hop, n*hop + window_length)``;
    each windowed frame is zero-padded to ``dft_size`` before the real
    DFT (the oversampling sharpens phase-derivative structure).
    """
    x = audio.samples
    if len(x) < config.window_length:
        raise InvalidArgumentError(
            f"signal length {len(x)} is shorter than one window ({config.window_length})"
        )
    pad = config.window_length // 2
    x_pad = np.pad(x, pad, mode="reflect")
    n_frames = _frame_starts(len(x), config)
    hop = config.hop_length
    window = hann_window(config.window_length)

    strides = (x_pad.strides[0] * hop, x_pad.strides[0])
    frames = np.lib.stride_tricks.as_strided(
        x_pad, shape=(n_frames, config.window_length), strides=strides
    )
    spectrum = np.fft.rfft(frames * window, n=config.dft_size, axis=1)
    return ComplexSpectrogram(values=spectrum.T, config=config)


def _synthesis_envelope(config: AnalysisConfig, n_frames: int, padded_len: int) -> np.ndarray:
    env = np.zeros(padded_len, dtype=np.float64)
    w2 = hann_window(config.window_length) ** 2
    hop = config.hop_length
    for n in range(n_frames):
        env[n * hop : n * hop + config.window_length] += w2
    return env


def _fold_edges(buf: np.ndarray, length: int, pad: int) -> np.ndarray:
    """Fold reflect-padded contributions back onto their source samples."""
    core = buf[pad : pad + length].copy()
    if pad > 0:
        core[1 : pad + 1] += buf[:pad][::-1]
        core[length - 1 - pad : length - 1] += buf[pad + length : pad + length + pad][::-1]
    return core


def istft(spec: ComplexSpectrogram, *, length: int | None = None,
          sample_rate: int = 16000) -> AudioBuffer:
    """Least-squares inverse STFT (weighted overlap-add).

    ``length`` selects the output sample count; by default the largest
    hop-aligned length ``(n_frames - 1) * hop`` is used. The synthesis
    exactly inverts :func:`stft` for any signal of that length.
    """
    config = spec.config
    n_frames = spec.values.shape[1]
    hop = config.hop_length
    if length is None:
        length = (n_frames - 1) * hop
    if config.frame_count(length) != n_frames:
        raise InvalidArgumentError(
            f"length {length} is inconsistent with {n_frames} frames at hop {hop}"
        )
    if length < config.window_length:
        raise InvalidArgumentError(
            f"synthesis length {length} is shorter than one window "
            f"({config.window_length}); need more frames"
        )
    pad = config.window_length // 2
    padded_len = length + 2 * pad
    window = hann_window(config.window_length)

    frames = np.fft.irfft(spec.values.T, n=config.dft_size, axis=1)[:, : config.window_length]
    frames *= window
    acc = np.zeros(padded_len, dtype=np.float64)
    for n in range(n_frames):
        acc[n * hop : n * hop + config.window_length] += frames[n]

    env = _synthesis_envelope(config, n_frames, padded_len)
    env_core = _fold_edges(env, length, pad)
    if env_core.min() <= 1e-12:
        raise ConfigError(
            "window/hop combination leaves uncovered samples (overlap-add not invertible)"
        )
    samples = _fold_edges(acc, length, pad) / env_core
    return AudioBuffer(samples=samples, sample_rate=sample_rate)


def decompose(spec) -> tuple[np.ndarray, np.ndarray]:
    """Split a complex spectrogram into (magnitude, phase in [-pi, pi)).

    Accepts a :class:`ComplexSpectrogram` or a bare complex array. Bins
    with zero magnitude get phase 0 by convention.
    """
    values = spec.values if isinstance(spec, ComplexSpectrogram) else np.asarray(spec)
    mag = np.abs(values)
    phase = wrap(np.angle(values))
    return mag, phase


def recombine(mag: np.ndarray, phase: np.ndarray) -> np.ndarray:
    """Elementwise ``a * exp(i * psi)``."""
    mag = np.asarray(mag, dtype=np.float64)
    phase = np.asarray(phase, dtype=np.float64)
    if mag.shape != phase.shape:
        raise ShapeError(f"magnitude shape {mag.shape} != phase shape {phase.shape}")
    return mag * np.exp(1j * phase)


def group_delay(phase: np.ndarray) -> np.ndarray:
    """Wrapped phase difference along the frequency axis.

    Entry ``(f, n)`` is ``wrap(-psi[f+1, n] + psi[f, n])``; the output
    drops the last frequency row, shape ``(F-1, N)``. Works on batched
    inputs ``(..., F, N)``.
    """
    psi = np.asarray(phase, dtype=np.float64)
    if psi.shape[-2] < 2:
        raise InvalidArgumentError("group_delay needs at least 2 frequency bins")
    return wrap(psi[..., :-1, :] - psi[..., 1:, :])


def instantaneous_frequency(phase: np.ndarray) -> np.ndarray:
    """Wrapped phase difference along the time axis.

    Entry ``(f, n)`` is ``wrap(psi[f, n+1] - psi[f, n])``; the output
    drops the last frame column, shape ``(F, N-1)``.
    """
    psi = np.asarray(phase, dtype=np.float64)
    if psi.shape[-1] < 2:
        raise InvalidArgumentError("instantaneous_frequency needs at least 2 frames")
    return wrap(psi[..., 1:] - psi[..., :-1])


def shift_phase(phase: np.ndarray, offset: float) -> np.ndarray:
    """Add a constant offset to every phase entry and re-wrap.

    Constant offsets cancel in group delay and instantaneous frequency,
    which is what makes phase-shift augmentation consistent with the
    derivative losses.
    """
    if not np.isfinite(offset):
        raise InvalidArgumentError("phase offset must be finite")
    return wrap(np.asarray(phase, dtype=np.float64) + float(offset))
