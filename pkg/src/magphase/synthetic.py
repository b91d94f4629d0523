"""Deterministic synthetic harmonic utterances for desk-scale runs.

Each utterance is a stack of five phase-coherent harmonics of a base
frequency sitting exactly on a DFT bin of the toy analysis setup
(256-point DFT at 16 kHz, 62.5 Hz per bin), with a slow amplitude
envelope, a random initial phase, and a -80 dB noise floor. The
structure is deliberately easy: magnitudes are low-rank and the phase
advances linearly per frame, so a small model can learn both quickly.
"""

from __future__ import annotations

import argparse
import os

import numpy as np

from .dsp import AudioBuffer

F0_BINS = (4, 5, 6, 7)
HARMONICS = 5
BASE_AMPLITUDE = 0.1
NOISE_AMPLITUDE = 1e-4


def harmonic_utterance(rng, *, duration: float = 0.25, sample_rate: int = 16000,
                       dft_size: int = 256, f0_bin: int | None = None) -> AudioBuffer:
    """One synthetic utterance; pass a seeded Generator for reproducibility."""
    n = int(round(duration * sample_rate))
    t = np.arange(n) / sample_rate
    if f0_bin is None:
        f0_bin = int(rng.choice(F0_BINS))
    f0 = f0_bin * sample_rate / dft_size
    phi0 = rng.uniform(-np.pi, np.pi)
    env_rate = rng.uniform(0.5, 2.0)
    env_phase = rng.uniform(0, 2 * np.pi)
    envelope = 0.8 + 0.2 * np.sin(2 * np.pi * env_rate * t + env_phase)
    theta = 2 * np.pi * f0 * t + phi0
    x = np.zeros(n)
    for k in range(1, HARMONICS + 1):
        x += (BASE_AMPLITUDE / k) * np.sin(k * theta)
    x *= envelope
    x += NOISE_AMPLITUDE * rng.standard_normal(n)
    return AudioBuffer(samples=x, sample_rate=sample_rate)


def make_corpus(count: int, seed: int = 0, *, duration: float = 0.25,
                sample_rate: int = 16000) -> list[AudioBuffer]:
    """``count`` utterances cycling through the base-frequency bins."""
    rng = np.random.default_rng(seed)
    return [
        harmonic_utterance(
            rng, duration=duration, sample_rate=sample_rate,
            f0_bin=F0_BINS[i % len(F0_BINS)],
        )
        for i in range(count)
    ]


def main(argv=None):
    parser = argparse.ArgumentParser(
        description="Write a synthetic harmonic WAV corpus plus a manifest."
    )
    parser.add_argument("out_dir")
    parser.add_argument("--count", type=int, default=10)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--duration", type=float, default=0.25)
    args = parser.parse_args(argv)

    from .wavio import write_wav

    os.makedirs(args.out_dir, exist_ok=True)
    lines = []
    for i, audio in enumerate(make_corpus(args.count, args.seed, duration=args.duration)):
        utt_id = f"utt{i:03d}"
        path = os.path.join(args.out_dir, f"{utt_id}.wav")
        write_wav(path, audio)
        lines.append(f"{utt_id}\t{utt_id}.wav")
    manifest = os.path.join(args.out_dir, "manifest.tsv")
    with open(manifest, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    print(f"wrote {args.count} utterances and {manifest}")


if __name__ == "__main__":
    main()
