"""Griffin-Lim phase refinement over a fixed magnitude spectrogram.

Each iteration recombines the magnitude with the current phase,
resynthesizes, and takes the phase of the re-analysis:

    S <- A * exp(i * phi);  x <- istft(S);  phi <- angle(stft(x))

Because :func:`magphase.dsp.istft` is the exact least-squares inverse
of the analysis, ``stft(istft(.))`` is an orthogonal projection and the
classic alternating-projection argument applies: the inconsistency of
the iterates never increases.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dsp import AnalysisConfig, AudioBuffer, ComplexSpectrogram, decompose, istft, recombine, stft
from .errors import ConfigError, ShapeError

INIT_MODES = ("given_phase", "random_uniform", "zero")


@dataclass(frozen=True)
class GlaConfig:
    iterations: int = 100
    init: str = "given_phase"

    def __post_init__(self):
        if self.iterations < 0:
            raise ConfigError("iterations must be >= 0")
        if self.init not in INIT_MODES:
            raise ConfigError(f"init must be one of {INIT_MODES}")


def _initial_phase(magnitude, init_phase, mode, rng):
    if mode == "given_phase":
        if init_phase is None:
            raise ConfigError("init='given_phase' needs an initial phase")
        if init_phase.shape != magnitude.shape:
            raise ShapeError(
                f"phase shape {init_phase.shape} != magnitude shape {magnitude.shape}"
            )
        return np.asarray(init_phase, dtype=np.float64)
    if mode == "zero":
        return np.zeros_like(magnitude)
    return rng.uniform(-np.pi, np.pi, size=magnitude.shape)


def gla(magnitude, init_phase, analysis_config: AnalysisConfig,
        gla_config: GlaConfig = GlaConfig(), *, length=None,
        sample_rate: int = 16000, seed: int = 0):
    """Refine a phase estimate for ``iterations`` rounds.

    Returns ``(phase, audio)`` where ``audio`` is the synthesis of the
    final (magnitude, phase) pair. ``iterations=0`` returns the initial
    phase and its direct synthesis unchanged.
    """
    magnitude = np.asarray(magnitude, dtype=np.float64)
    rng = np.random.default_rng(seed)
    phase = _initial_phase(magnitude, init_phase, gla_config.init, rng)
    spec = ComplexSpectrogram(recombine(magnitude, phase), analysis_config)
    audio = istft(spec, length=length, sample_rate=sample_rate)
    for _ in range(gla_config.iterations):
        _, phase = decompose(stft(audio, analysis_config))
        spec = ComplexSpectrogram(recombine(magnitude, phase), analysis_config)
        audio = istft(spec, length=length, sample_rate=sample_rate)
    return phase, audio


def inconsistency(magnitude, phase, analysis_config: AnalysisConfig, *,
                  length=None) -> float:
    """Normalized projection residual of a (magnitude, phase) pair.

    ||C - stft(istft(C))||_F / ||C||_F with C = A * exp(i * phi); zero
    for any spectrogram that is the STFT of a real signal. An all-zero
    magnitude returns 0 by convention.
    """
    magnitude = np.asarray(magnitude, dtype=np.float64)
    spec = recombine(magnitude, phase)
    denom = np.linalg.norm(spec)
    if denom == 0.0:
        return 0.0
    audio = istft(ComplexSpectrogram(spec, analysis_config), length=length)
    projected = stft(audio, analysis_config).values
    return float(np.linalg.norm(spec - projected) / denom)
