"""Dataset manifests and the binary feature cache.

Manifest: line-delimited ``id<TAB>path`` records; relative paths are
resolved against the manifest's directory, ids must be unique, and
loading order is sorted by id regardless of file order.

Feature file (one per utterance, extension ``.feat``):

    magic   4 bytes  b"MPFC"
    version u32 LE   1
    hash    16 bytes (truncated SHA-256 of the analysis config)
    F, N    u32 LE each
    mag     F*N float32 LE, row-major
    phase   F*N float32 LE, row-major

The cached arrays are exactly ``float32(decompose(stft(x)))``, so a
cache round trip is bitwise identical to recomputation.
"""

from __future__ import annotations

import hashlib
import os
import struct
import tempfile
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .dsp import AnalysisConfig, AudioBuffer, decompose, phase_as_float32, stft
from .errors import DataError
from .training import Utterance
from .wavio import read_wav

FEAT_MAGIC = b"MPFC"
FEAT_VERSION = 1


def config_hash(config: AnalysisConfig) -> bytes:
    text = f"{config.window_length},{config.hop_length},{config.dft_size},{config.window_kind}"
    return hashlib.sha256(text.encode()).digest()[:16]


def read_manifest(path) -> list[tuple[str, str]]:
    """Parse and validate a manifest; returns (id, absolute path) sorted by id."""
    base = os.path.dirname(os.path.abspath(path))
    entries = {}
    try:
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.rstrip("\n")
                if not line or line.startswith("#"):
                    continue
                parts = line.split("\t")
                if len(parts) != 2:
                    raise DataError(f"{path}:{lineno}: expected 'id<TAB>path'")
                utt_id, wav_path = parts
                if utt_id in entries:
                    raise DataError(f"{path}:{lineno}: duplicate id {utt_id!r}")
                if not os.path.isabs(wav_path):
                    wav_path = os.path.join(base, wav_path)
                if not os.path.exists(wav_path):
                    raise DataError(f"{path}:{lineno}: missing file {wav_path}")
                entries[utt_id] = wav_path
    except OSError as exc:
        raise DataError(f"cannot read manifest {path}: {exc}") from exc
    return sorted(entries.items())


def write_manifest(path, entries):
    with open(path, "w") as fh:
        for utt_id, wav_path in entries:
            fh.write(f"{utt_id}\t{wav_path}\n")


def extract_features(audio: AudioBuffer, config: AnalysisConfig):
    """(magnitude, phase) as float32 arrays, the cache's canonical form.

    Phase is folded so the half-open interval survives the float32
    cast.
    """
    mag, phase = decompose(stft(audio, config))
    return mag.astype(np.float32), phase_as_float32(phase)


def save_features(path, mag: np.ndarray, phase: np.ndarray, config: AnalysisConfig):
    f, n = mag.shape
    header = FEAT_MAGIC + struct.pack("<I", FEAT_VERSION) + config_hash(config)
    header += struct.pack("<II", f, n)
    phase32 = phase_as_float32(phase)
    blob = header + mag.astype("<f4").tobytes() + phase32.astype("<f4").tobytes()
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_features(path, config: AnalysisConfig):
    """Read one feature file, checking the analysis-config hash."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != FEAT_MAGIC:
        raise DataError(f"{path}: not a feature file")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != FEAT_VERSION:
        raise DataError(f"{path}: unsupported feature version {version}")
    if blob[8:24] != config_hash(config):
        raise DataError(
            f"{path}: cached with a different analysis config; re-run extract"
        )
    f, n = struct.unpack_from("<II", blob, 24)
    offset = 32
    count = f * n
    mag = np.frombuffer(blob, dtype="<f4", count=count, offset=offset).reshape(f, n).copy()
    offset += 4 * count
    phase = np.frombuffer(blob, dtype="<f4", count=count, offset=offset).reshape(f, n).copy()
    return mag, phase


def feature_path(cache_dir, utt_id) -> str:
    return os.path.join(cache_dir, f"{utt_id}.feat")


def extract_to_cache(manifest_path, cache_dir, config: AnalysisConfig, *,
                     expected_rate: int | None = 16000, jobs: int = 1,
                     channel: int | None = None) -> list[str]:
    """Extract features for every manifest entry; parallel over utterances."""
    entries = read_manifest(manifest_path)
    os.makedirs(cache_dir, exist_ok=True)

    def work(entry):
        utt_id, wav_path = entry
        audio = read_wav(wav_path, expected_rate=expected_rate, channel=channel)
        mag, phase = extract_features(audio, config)
        out = feature_path(cache_dir, utt_id)
        save_features(out, mag, phase, config)
        return out

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(work, entries))
    return [work(e) for e in entries]


def load_dataset(manifest_path, cache_dir, config: AnalysisConfig) -> list[Utterance]:
    """Load cached features for a manifest, in id order."""
    dataset = []
    for utt_id, _ in read_manifest(manifest_path):
        path = feature_path(cache_dir, utt_id)
        if not os.path.exists(path):
            raise DataError(f"no cached features for {utt_id!r}; run extract first")
        mag, phase = load_features(path, config)
        dataset.append(Utterance(utt_id=utt_id, mag=mag, phase=phase))
    return dataset
