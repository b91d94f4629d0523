"""Spectrogram panel export: binary PGM (P5) images plus raw CSV.

Four panels per signal: log-magnitude, phase, group delay, and
instantaneous frequency. Gray mapping is documented and fixed:

* log-magnitude: dB relative to the panel maximum, clipped to
  [-80, 0], mapped linearly to [0, 255] (all-zero input sits at the
  -80 dB floor, gray 0);
* angles: linear [-pi, pi) -> [0, 255].

Images are written frequency-down-rows, one pixel per TF bin, so a
panel is N pixels wide and F (or F-1 / N-1 for the derivative panels)
pixels tall. CSV files carry the raw float matrices at %.10g.
"""

from __future__ import annotations

import os
import tempfile

import numpy as np

from . import autodiff as ad
from .dsp import (
    AnalysisConfig,
    AudioBuffer,
    decompose,
    group_delay,
    instantaneous_frequency,
    stft,
)

PANELS = ("logmag", "phase", "gd", "if")
DB_FLOOR = -80.0


def logmag_to_gray(mag: np.ndarray) -> np.ndarray:
    mag = np.asarray(mag, dtype=np.float64)
    peak = mag.max()
    if peak <= 0.0:
        db = np.full(mag.shape, DB_FLOOR)
    else:
        with np.errstate(divide="ignore"):
            db = 20.0 * np.log10(np.where(mag > 0, mag / peak, 0.0))
        db = np.clip(db, DB_FLOOR, 0.0)
    gray = np.rint((db - DB_FLOOR) / -DB_FLOOR * 255.0)
    return np.clip(gray, 0, 255).astype(np.uint8)


def angle_to_gray(angle: np.ndarray) -> np.ndarray:
    gray = np.rint((np.asarray(angle, dtype=np.float64) + np.pi) / (2 * np.pi) * 255.0)
    return np.clip(gray, 0, 255).astype(np.uint8)


def write_pgm(path, gray: np.ndarray):
    """Binary PGM, maxval 255; atomic write."""
    if gray.ndim != 2 or gray.dtype != np.uint8:
        raise ValueError("write_pgm expects a 2-D uint8 array")
    height, width = gray.shape
    header = f"P5\n{width} {height}\n255\n".encode()
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(header + gray.tobytes())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_pgm(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    parts = blob.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    width, height = map(int, parts[1].split())
    data = np.frombuffer(parts[3], dtype=np.uint8, count=width * height)
    return data.reshape(height, width)


def _panels(mag, phase):
    return {
        "logmag": (logmag_to_gray(mag), mag),
        "phase": (angle_to_gray(phase), phase),
        "gd": (angle_to_gray(group_delay(phase)), group_delay(phase)),
        "if": (angle_to_gray(instantaneous_frequency(phase)), instantaneous_frequency(phase)),
    }


def export_panels(out_dir, tag, mag, phase) -> list[str]:
    """Write the four PGM + CSV panel pairs for one (mag, phase) pair."""
    written = []
    for name, (gray, raw) in _panels(mag, phase).items():
        pgm = os.path.join(out_dir, f"{tag}_{name}.pgm")
        csv = os.path.join(out_dir, f"{tag}_{name}.csv")
        write_pgm(pgm, gray)
        np.savetxt(csv, np.asarray(raw, dtype=np.float64), fmt="%.10g", delimiter=",")
        written.extend([pgm, csv])
    return written


def export_spectrograms(audio: AudioBuffer, analysis_config: AnalysisConfig,
                        out_dir, utt_id: str, model=None) -> list[str]:
    """Panels for the true signal and, given a model, its reconstruction."""
    os.makedirs(out_dir, exist_ok=True)
    mag, phase = decompose(stft(audio, analysis_config))
    written = export_panels(out_dir, f"{utt_id}_true", mag, phase)
    if model is not None:
        with ad.no_grad():
            out = model.reconstruct(mag, phase, epsilon=None)
        written += export_panels(
            out_dir, f"{utt_id}_recon",
            out.a_hat.data.astype(np.float64), out.psi_hat.data.astype(np.float64),
        )
    return written
