"""Per-utterance log-likelihood reports and reconstruction proxies.

Log-likelihoods are the negated loss-module values (same code path), so
the numbers line up with training logs by construction. Perceptual
scores are replaced by spectral convergence, wrapped-phase RMSE, and
time-domain SNR.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import losses
from .dsp import AnalysisConfig, AudioBuffer, decompose, istft, recombine, stft
from .dsp import ComplexSpectrogram, wrap
from .errors import ConfigError, InvalidArgumentError, ShapeError
from .griffin_lim import GlaConfig, gla, inconsistency
from .model import JointModel, concentration


def spectral_convergence(a_true, a_est) -> float:
    """||a_true - a_est||_F / ||a_true||_F."""
    a_true = np.asarray(a_true, dtype=np.float64)
    a_est = np.asarray(a_est, dtype=np.float64)
    if a_true.shape != a_est.shape:
        raise ShapeError(f"shape mismatch {a_true.shape} vs {a_est.shape}")
    denom = np.linalg.norm(a_true)
    if denom == 0.0:
        raise InvalidArgumentError("spectral_convergence needs a nonzero reference")
    return float(np.linalg.norm(a_true - a_est) / denom)


def phase_rmse_wrapped(psi_true, psi_est, weights=None) -> float:
    """RMS of the wrapped phase error, optionally magnitude-weighted.

    Adding 2 pi to any entry of either argument leaves the value
    unchanged; the result lives in [0, pi].
    """
    psi_true = np.asarray(psi_true, dtype=np.float64)
    psi_est = np.asarray(psi_est, dtype=np.float64)
    if psi_true.shape != psi_est.shape:
        raise ShapeError(f"shape mismatch {psi_true.shape} vs {psi_est.shape}")
    err2 = wrap(psi_true - psi_est) ** 2
    if weights is None:
        return float(np.sqrt(err2.mean()))
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != err2.shape:
        raise ShapeError("weights must match the phase shapes")
    total = weights.sum()
    if total <= 0:
        raise InvalidArgumentError("weights must have positive mass")
    return float(np.sqrt((weights * err2).sum() / total))


def snr_db(reference, estimate) -> float:
    """Time-domain SNR in dB; capped at 300 dB for exact matches."""
    reference = np.asarray(reference, dtype=np.float64)
    estimate = np.asarray(estimate, dtype=np.float64)
    noise = ((reference - estimate) ** 2).sum()
    signal = (reference ** 2).sum()
    if noise == 0.0:
        return 300.0
    return float(min(10.0 * np.log10(signal / noise), 300.0))


@dataclass
class UtteranceReport:
    """Per-utterance log-likelihoods (negated losses) and proxies."""

    utt_id: str
    ll_mag: float
    ll_pha: float
    ll_grd: float
    ll_ifr: float
    spectral_convergence: float
    phase_rmse_wrapped: float
    snr_db: float
    inconsistency: float
    gla_metrics: dict = field(default_factory=dict)

    def to_dict(self):
        d = {
            "utt_id": self.utt_id,
            "ll_mag": self.ll_mag,
            "ll_pha": self.ll_pha,
            "ll_grd": self.ll_grd,
            "ll_ifr": self.ll_ifr,
            "spectral_convergence": self.spectral_convergence,
            "phase_rmse_wrapped": self.phase_rmse_wrapped,
            "snr_db": self.snr_db,
            "inconsistency": self.inconsistency,
        }
        d.update({f"gla_{k}": v for k, v in self.gla_metrics.items()})
        return d


METRIC_FIELDS = (
    "ll_mag", "ll_pha", "ll_grd", "ll_ifr",
    "spectral_convergence", "phase_rmse_wrapped", "snr_db", "inconsistency",
)


@dataclass
class AggregateReport:
    """Mean and 95% confidence half-width (1.96 * stderr) per metric."""

    model_id: str
    scheme_id: str
    count: int
    metrics: dict  # name -> (mean, half_width)

    def to_dict(self):
        return {
            "model_id": self.model_id,
            "scheme_id": self.scheme_id,
            "count": self.count,
            "metrics": {k: {"mean": m, "ci95": h} for k, (m, h) in self.metrics.items()},
        }


def evaluate_utterance(model: JointModel, audio: AudioBuffer,
                       analysis_config: AnalysisConfig, scheme: losses.LossScheme,
                       *, utt_id: str = "", seed: int = 0,
                       gla_iterations: int = 0) -> UtteranceReport:
    """Posterior-mean reconstruction of one utterance plus all metrics.

    For scheme M the phase estimate is drawn uniformly at random (with
    the given seed), matching how the magnitude-only baseline is
    scored. ``gla_iterations > 0`` additionally refines the phase with
    Griffin-Lim and reports the post-processed metrics.
    """
    if analysis_config.freq_bins != model.config.freq_bins:
        raise ConfigError(
            f"analysis config has {analysis_config.freq_bins} bins but the "
            f"checkpoint expects {model.config.freq_bins}"
        )
    spec = stft(audio, analysis_config)
    a, psi = decompose(spec)
    with ad.no_grad():
        out = model.reconstruct(a, psi, epsilon=None)
    a_hat = out.a_hat.data.astype(np.float64)
    sigma_mag = out.sigma_mag.data.astype(np.float64)
    if scheme.id == "M":
        rng = np.random.default_rng(seed)
        psi_hat = rng.uniform(-np.pi, np.pi, size=a.shape)
    else:
        psi_hat = out.psi_hat.data.astype(np.float64)
    kappa = concentration(a_hat)

    report = UtteranceReport(
        utt_id=utt_id,
        ll_mag=-losses.magnitude_nll(a, a_hat, sigma_mag).item(),
        ll_pha=-losses.von_mises_nll(psi, psi_hat, kappa).item(),
        ll_grd=-losses.gd_loss(psi, psi_hat, kappa).item(),
        ll_ifr=-losses.if_loss(psi, psi_hat, kappa).item(),
        spectral_convergence=spectral_convergence(a, a_hat),
        phase_rmse_wrapped=phase_rmse_wrapped(psi, psi_hat),
        snr_db=0.0,
        inconsistency=inconsistency(a_hat, psi_hat, analysis_config, length=len(audio)),
    )
    recon = istft(
        ComplexSpectrogram(recombine(a_hat, psi_hat), analysis_config),
        length=len(audio), sample_rate=audio.sample_rate,
    )
    report.snr_db = snr_db(audio.samples, recon.samples)

    if gla_iterations > 0:
        cfg = GlaConfig(iterations=gla_iterations, init="given_phase")
        psi_gla, audio_gla = gla(
            a_hat, psi_hat, analysis_config, cfg,
            length=len(audio), sample_rate=audio.sample_rate,
        )
        report.gla_metrics = {
            "iterations": gla_iterations,
            "inconsistency": inconsistency(a_hat, psi_gla, analysis_config, length=len(audio)),
            "snr_db": snr_db(audio.samples, audio_gla.samples),
            "phase_rmse_wrapped": phase_rmse_wrapped(psi, psi_gla),
            "ll_pha": -losses.von_mises_nll(psi, psi_gla, kappa).item(),
        }
    return report


def aggregate(reports, model_id: str = "", scheme_id: str = "") -> AggregateReport:
    """Means and 1.96*stderr half-widths over utterances.

    A single report gets half-width 0 by convention (the sample
    standard error is undefined for n=1).
    """
    if not reports:
        raise InvalidArgumentError("aggregate needs at least one report")
    metrics = {}
    for name in METRIC_FIELDS:
        values = np.array([getattr(r, name) for r in reports], dtype=np.float64)
        mean = float(values.mean())
        if len(values) < 2:
            half = 0.0
        else:
            half = float(1.96 * values.std(ddof=1) / np.sqrt(len(values)))
        metrics[name] = (mean, half)
    return AggregateReport(
        model_id=model_id, scheme_id=scheme_id, count=len(reports), metrics=metrics
    )
