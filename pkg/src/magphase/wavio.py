"""PCM 16-bit WAV reading and writing.

Reads scale samples to [-1, 1) by division with 32768; writes invert
that exactly (round half away from zero, clamp to the int16 range), so
read -> write -> read is bit-stable. The reference pipeline expects
16 kHz mono; other rates need an explicit override and multichannel
files an explicit channel selection.
"""

from __future__ import annotations

import os
import tempfile
import wave

import numpy as np

from .dsp import AudioBuffer
from .errors import DataError

PCM_SCALE = 32768.0


def read_wav(path, *, expected_rate: int | None = 16000,
             channel: int | None = None) -> AudioBuffer:
    """Read a PCM 16-bit WAV file.

    ``expected_rate=None`` accepts any sample rate; multichannel input
    requires ``channel`` to pick one.
    """
    try:
        with wave.open(str(path), "rb") as fh:
            n_channels = fh.getnchannels()
            sample_width = fh.getsampwidth()
            rate = fh.getframerate()
            n_frames = fh.getnframes()
            compression = fh.getcomptype()
            raw = fh.readframes(n_frames)
    except (wave.Error, EOFError) as exc:
        raise DataError(f"{path}: unsupported or malformed WAV ({exc})") from exc
    except OSError as exc:
        raise DataError(f"{path}: {exc}") from exc
    if compression != "NONE":
        raise DataError(f"{path}: unsupported codec {compression!r}")
    if sample_width != 2:
        raise DataError(
            f"{path}: unsupported sample width {8 * sample_width} bit (PCM 16-bit required)"
        )
    if expected_rate is not None and rate != expected_rate:
        raise DataError(
            f"{path}: sample rate {rate} Hz, expected {expected_rate} Hz "
            "(pass expected_rate=None to override)"
        )
    data = np.frombuffer(raw, dtype="<i2")
    if n_channels > 1:
        if channel is None:
            raise DataError(
                f"{path}: {n_channels} channels; select one with channel=..."
            )
        if not 0 <= channel < n_channels:
            raise DataError(f"{path}: channel {channel} out of range")
        data = data.reshape(-1, n_channels)[:, channel]
    return AudioBuffer(samples=data.astype(np.float64) / PCM_SCALE, sample_rate=rate)


def write_wav(path, audio: AudioBuffer):
    """Write mono PCM 16-bit; atomic (temp file + rename)."""
    scaled = audio.samples * PCM_SCALE
    ints = np.sign(scaled) * np.floor(np.abs(scaled) + 0.5)
    ints = np.clip(ints, -32768, 32767).astype("<i2")
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as raw:
            with wave.open(raw, "wb") as fh:
                fh.setnchannels(1)
                fh.setsampwidth(2)
                fh.setframerate(audio.sample_rate)
                fh.writeframes(ints.tobytes())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
