"""Command-line interface.

Commands: extract, train, reconstruct, gla, evaluate,
export-spectrograms, ll-table. Exit codes: 0 success, 2 configuration
error, 3 data error, 4 numerical divergence. Every command writes its
fully resolved run configuration next to its outputs.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import autodiff as ad
from . import losses
from .dsp import ComplexSpectrogram, decompose, istft, recombine, stft
from .errors import ConfigError, DataError, DivergenceError
from .evaluation import aggregate, evaluate_utterance
from .export import export_spectrograms
from .features import (
    extract_to_cache,
    feature_path,
    load_dataset,
    load_features,
    read_manifest,
    save_features,
)
from .griffin_lim import GlaConfig, gla
from .model import JointModel, load_checkpoint
from .runconfig import load_runconfig, write_resolved
from .training import train_stage_one, train_stage_two
from .wavio import read_wav, write_wav


def _require_paths(cfg, keys):
    for key in keys:
        if cfg.path(key) is None:
            raise ConfigError(f"run config is missing paths.{key}")


def cmd_extract(args):
    cfg = load_runconfig(args.config)
    _require_paths(cfg, ["cache_dir"])
    cache_dir = cfg.path("cache_dir")
    manifests = []
    for key in ("train_manifest", "dev_manifest"):
        if cfg.path(key):
            manifests.append(cfg.path(key))
    if args.manifest:
        manifests = [args.manifest]
    if not manifests:
        raise ConfigError("no manifest configured (paths.train_manifest/dev_manifest)")
    for manifest in manifests:
        written = extract_to_cache(
            manifest, cache_dir, cfg.analysis,
            expected_rate=None if args.any_rate else 16000,
            jobs=args.jobs, channel=args.channel,
        )
        print(f"extracted {len(written)} utterances from {manifest}")
    write_resolved(cfg, cache_dir, "extract")
    return 0


def cmd_train(args):
    cfg = load_runconfig(args.config)
    _require_paths(cfg, ["train_manifest", "dev_manifest", "cache_dir", "out_dir"])
    scheme_id = args.scheme or (cfg.scheme_id if args.stage == 2 else "M")
    train_cfg = cfg.train_config(stage=args.stage, scheme_id=scheme_id)
    train_set = load_dataset(cfg.path("train_manifest"), cfg.path("cache_dir"), cfg.analysis)
    val_set = load_dataset(cfg.path("dev_manifest"), cfg.path("cache_dir"), cfg.analysis)
    out_dir = cfg.path("out_dir")
    model = JointModel(cfg.model, seed=cfg.seed)

    if args.stage == 1:
        result = train_stage_one(model, train_set, val_set, train_cfg, out_dir,
                                 resume_from=args.resume)
    else:
        stage1 = args.stage1_checkpoint or os.path.join(out_dir, "stage1_best.ckpt")
        if args.resume is None and not os.path.exists(stage1):
            raise ConfigError(
                f"stage 2 requires the pre-trained stage-1 checkpoint {stage1!r}; "
                "run 'train --stage 1' first"
            )
        result = train_stage_two(
            model, train_set, val_set, train_cfg, out_dir,
            stage_one_checkpoint=None if args.resume else stage1,
            resume_from=args.resume,
        )
    write_resolved(cfg, out_dir, f"train-stage{args.stage}", scheme_id)
    print(
        f"stage {args.stage} ({scheme_id}) finished: best validation total "
        f"{result.best_val:.6f} at epoch {result.best_epoch} "
        f"({result.epochs_run} epochs run); kept {result.best_path}"
    )
    return 0


def cmd_reconstruct(args):
    cfg = load_runconfig(args.config)
    model, _, _ = load_checkpoint(args.checkpoint)
    if model.config.freq_bins != cfg.analysis.freq_bins:
        raise ConfigError("checkpoint and analysis config disagree on frequency bins")
    audio = read_wav(args.input, expected_rate=None if args.any_rate else 16000)
    mag, phase = decompose(stft(audio, cfg.analysis))
    with ad.no_grad():
        out = model.reconstruct(mag, phase, epsilon=None)
    a_hat = out.a_hat.data.astype(np.float64)
    psi_hat = out.psi_hat.data.astype(np.float64)
    if args.gla > 0:
        psi_hat, recon = gla(
            a_hat, psi_hat, cfg.analysis, GlaConfig(iterations=args.gla),
            length=len(audio), sample_rate=audio.sample_rate,
        )
    else:
        recon = istft(
            ComplexSpectrogram(recombine(a_hat, psi_hat), cfg.analysis),
            length=len(audio), sample_rate=audio.sample_rate,
        )
    write_wav(args.output, recon)
    write_resolved(cfg, os.path.dirname(os.path.abspath(args.output)), "reconstruct")
    print(f"wrote {args.output}")
    return 0


def cmd_gla(args):
    cfg = load_runconfig(args.config)
    mag, phase = load_features(args.features, cfg.analysis)
    init = {"given": "given_phase", "random": "random_uniform", "zero": "zero"}[args.init]
    refined, audio = gla(
        mag.astype(np.float64), phase.astype(np.float64), cfg.analysis,
        GlaConfig(iterations=args.iterations, init=init), seed=args.seed,
    )
    save_features(args.out, mag, refined.astype(np.float32), cfg.analysis)
    if args.wav:
        write_wav(args.wav, audio)
    write_resolved(cfg, os.path.dirname(os.path.abspath(args.out)), "gla")
    print(f"wrote {args.out}" + (f" and {args.wav}" if args.wav else ""))
    return 0


def cmd_evaluate(args):
    cfg = load_runconfig(args.config)
    manifest = args.manifest or cfg.path("dev_manifest")
    if manifest is None:
        raise ConfigError("no manifest given (flag --manifest or paths.dev_manifest)")
    model, meta, _ = load_checkpoint(args.checkpoint)
    scheme = losses.LossScheme.from_id(args.scheme or meta.get("scheme", cfg.scheme_id))
    model_id = args.model_id or os.path.basename(args.checkpoint)
    reports = []
    for utt_id, wav_path in read_manifest(manifest):
        audio = read_wav(wav_path, expected_rate=None if args.any_rate else 16000)
        reports.append(
            evaluate_utterance(
                model, audio, cfg.analysis, scheme,
                utt_id=utt_id, seed=cfg.seed, gla_iterations=args.gla,
            )
        )
    out_dir = os.path.dirname(os.path.abspath(args.out))
    os.makedirs(out_dir, exist_ok=True)
    with open(args.out, "w") as fh:
        for report in reports:
            record = {"model_id": model_id, "scheme": scheme.id}
            record.update(report.to_dict())
            fh.write(json.dumps(record, sort_keys=True) + "\n")
    agg = aggregate(reports, model_id=model_id, scheme_id=scheme.id)
    print(json.dumps(agg.to_dict(), sort_keys=True, indent=2))
    write_resolved(cfg, out_dir, "evaluate", scheme.id)
    return 0


def cmd_export_spectrograms(args):
    cfg = load_runconfig(args.config)
    model = None
    if args.checkpoint:
        model, _, _ = load_checkpoint(args.checkpoint)
    audio = read_wav(args.input, expected_rate=None if args.any_rate else 16000)
    utt_id = os.path.splitext(os.path.basename(args.input))[0]
    written = export_spectrograms(audio, cfg.analysis, args.out_dir, utt_id, model=model)
    write_resolved(cfg, args.out_dir, "export-spectrograms")
    print(f"wrote {len(written)} files under {args.out_dir}")
    return 0


def _fmt(mean, half):
    return f"{mean:10.2f} ±{half:7.2f}"


def cmd_ll_table(args):
    """Render the per-model log-likelihood table from report files."""
    rows = []
    for path in args.reports:
        records = []
        with open(path) as fh:
            for line in fh:
                if line.strip():
                    records.append(json.loads(line))
        if not records:
            raise DataError(f"{path}: empty report file")
        model_id = records[0].get("model_id", os.path.basename(path))
        scheme = records[0].get("scheme", "?")

        def stats(key):
            values = np.array([r[key] for r in records if key in r], dtype=np.float64)
            if values.size == 0:
                return None
            half = 0.0 if values.size < 2 else 1.96 * values.std(ddof=1) / np.sqrt(values.size)
            return float(values.mean()), float(half)

        rows.append({
            "model": model_id, "scheme": scheme, "n": len(records),
            "ll_mag": stats("ll_mag"), "ll_pha": stats("ll_pha"),
            "ll_grd": stats("ll_grd"), "ll_ifr": stats("ll_ifr"),
            "incons": stats("inconsistency"), "incons_gla": stats("gla_inconsistency"),
        })

    lines = []
    header = (
        f"{'model':24s} {'scheme':6s} {'n':>3s} "
        f"{'LL mag':>20s} {'LL pha':>20s} {'LL grd':>20s} {'LL ifr':>20s}"
    )
    has_gla = any(r["incons_gla"] for r in rows)
    if has_gla:
        header += f" {'incons':>10s} {'incons+GLA':>10s} {'GLA ok':>7s}"
    lines.append(header)
    lines.append("-" * len(header))
    for r in rows:
        line = (
            f"{r['model'][:24]:24s} {r['scheme']:6s} {r['n']:3d} "
            f"{_fmt(*r['ll_mag'])} {_fmt(*r['ll_pha'])} "
            f"{_fmt(*r['ll_grd'])} {_fmt(*r['ll_ifr'])}"
        )
        if has_gla:
            if r["incons_gla"]:
                ok = "yes" if r["incons_gla"][0] <= r["incons"][0] + 1e-9 else "NO"
                line += f" {r['incons'][0]:10.4f} {r['incons_gla'][0]:10.4f} {ok:>7s}"
            else:
                line += f" {r['incons'][0]:10.4f} {'-':>10s} {'-':>7s}"
        lines.append(line)
    table = "\n".join(lines)
    print(table)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(table + "\n")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="magphase",
        description="Joint magnitude/phase spectrogram modeling toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="cache spectrogram features for manifests")
    p.add_argument("--config", required=True)
    p.add_argument("--manifest", help="extract this manifest only")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--channel", type=int, default=None)
    p.add_argument("--any-rate", action="store_true", help="accept non-16kHz input")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train", help="run one training stage")
    p.add_argument("--config", required=True)
    p.add_argument("--stage", type=int, choices=(1, 2), required=True)
    p.add_argument("--scheme", choices=sorted(losses.SCHEME_WEIGHTS), default=None)
    p.add_argument("--stage1-checkpoint", default=None)
    p.add_argument("--resume", default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("reconstruct", help="analysis -> model -> synthesis")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--gla", type=int, default=0, help="Griffin-Lim post-processing iterations")
    p.add_argument("--any-rate", action="store_true")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("gla", help="Griffin-Lim refinement of a feature file")
    p.add_argument("--config", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--wav", default=None)
    p.add_argument("--iterations", type=int, default=100)
    p.add_argument("--init", choices=("given", "random", "zero"), default="given")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gla)

    p = sub.add_parser("evaluate", help="per-utterance reports plus aggregate")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", default=None)
    p.add_argument("--scheme", choices=sorted(losses.SCHEME_WEIGHTS), default=None)
    p.add_argument("--model-id", default=None)
    p.add_argument("--gla", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--any-rate", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("export-spectrograms", help="PGM/CSV panels for a signal")
    p.add_argument("--config", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--any-rate", action="store_true")
    p.set_defaults(func=cmd_export_spectrograms)

    p = sub.add_parser("ll-table", help="text table over evaluation reports")
    p.add_argument("--reports", nargs="+", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_ll_table)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args) or 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except DivergenceError as exc:
        print(f"numerical divergence: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
