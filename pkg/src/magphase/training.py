"""Two-stage optimization: Adam, minibatch assembly, phase-shift
augmentation, gradient-norm clipping, early stopping, checkpointing.

Stage one trains the encoder and magnitude decoder with scheme M;
stage two trains all three networks with one of the joint schemes,
starting from the stage-one checkpoint. An epoch is
``ceil(total_frames / minibatch_frames)`` optimizer steps; validation
runs after every epoch with posterior-mean latents and no
augmentation. The latest model achieving the lowest validation total
is kept.

Training logs are JSON-lines with deterministic content: two runs with
the same seed produce byte-identical logs. Wall-clock timing is only
recorded when ``TrainConfig.log_timing`` is set, precisely because it
would break that reproducibility.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import losses
from .dsp import shift_phase
from .errors import ConfigError, DataError, DivergenceError
from .model import JointModel, load_checkpoint, save_checkpoint

STAGE_ONE_PREFIXES = ("encoder/", "magnitude_decoder/")
STAGE_TWO_PREFIXES = ("encoder/", "magnitude_decoder/", "phase_decoder/")


@dataclass(frozen=True)
class TrainConfig:
    """Optimization hyperparameters; defaults follow the reference setup."""

    alpha: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-6
    minibatch_frames: int = 4096
    segment_frames: int = 256
    utterances_per_batch: int = 16
    clip_threshold: float = 1.0
    patience_epochs: int = 20
    max_epochs: int = 100
    stage: int = 1
    scheme_id: str = "M"
    seed: int = 0
    log_timing: bool = False

    def __post_init__(self):
        if self.minibatch_frames != self.segment_frames * self.utterances_per_batch:
            raise ConfigError(
                "minibatch_frames must equal segment_frames * utterances_per_batch"
            )
        if self.stage not in (1, 2):
            raise ConfigError("stage must be 1 or 2")
        if self.clip_threshold <= 0 or self.alpha <= 0:
            raise ConfigError("alpha and clip_threshold must be positive")
        losses.LossScheme.from_id(self.scheme_id)


def toy_train_config(stage: int = 1, scheme_id: str = "M", seed: int = 0,
                     max_epochs: int = 50) -> TrainConfig:
    """Desk-scale settings: 8 segments of 16 frames per minibatch."""
    return TrainConfig(
        minibatch_frames=128, segment_frames=16, utterances_per_batch=8,
        max_epochs=max_epochs, stage=stage, scheme_id=scheme_id, seed=seed,
    )


@dataclass
class Utterance:
    """One dataset entry: cached magnitude and phase, (F, N) float32."""

    utt_id: str
    mag: np.ndarray
    phase: np.ndarray

    @property
    def frames(self) -> int:
        return self.mag.shape[1]


@dataclass
class Minibatch:
    mag: np.ndarray          # (U, F, S)
    phase: np.ndarray        # (U, F, S)
    utterance_indices: np.ndarray
    segment_starts: np.ndarray


class AdamState:
    """First/second moment estimates per parameter plus the step counter."""

    def __init__(self, params):
        self.m = {name: np.zeros_like(t.data) for name, t in params.items()}
        self.v = {name: np.zeros_like(t.data) for name, t in params.items()}
        self.step = 0

    def to_arrays(self):
        out = {}
        for name, value in self.m.items():
            out[f"opt/m/{name}"] = value
        for name, value in self.v.items():
            out[f"opt/v/{name}"] = value
        return out

    def load_arrays(self, arrays, step):
        for name in self.m:
            self.m[name] = arrays[f"opt/m/{name}"].astype(self.m[name].dtype)
            self.v[name] = arrays[f"opt/v/{name}"].astype(self.v[name].dtype)
        self.step = step


def clip_gradient_norm(grads: dict, threshold: float = 1.0) -> float:
    """Scale all gradients so the global L2 norm is at most ``threshold``.

    Returns the pre-clip norm; zero gradients pass through untouched.
    """
    if threshold <= 0:
        raise ConfigError("clip threshold must be positive")
    total = 0.0
    for g in grads.values():
        total += float(np.vdot(g, g))
    norm = float(np.sqrt(total))
    if norm > threshold:
        scale = threshold / norm
        for g in grads.values():
            g *= scale
    return norm


def adam_step(params: dict, grads: dict, state: AdamState, config: TrainConfig):
    """Bias-corrected Adam update; aborts on non-finite gradients."""
    state.step += 1
    t = state.step
    c1 = 1.0 - config.beta1 ** t
    c2 = 1.0 - config.beta2 ** t
    for name, p in params.items():
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"non-finite gradient in parameter {name!r}")
        m = state.m[name]
        v = state.v[name]
        m *= config.beta1
        m += (1.0 - config.beta1) * g
        v *= config.beta2
        v += (1.0 - config.beta2) * (g * g)
        p.data -= config.alpha * (m / c1) / (np.sqrt(v / c2) + config.eps)


def assemble_minibatch(dataset, config: TrainConfig, rng) -> Minibatch:
    """Random segments from randomly selected utterances.

    Selection is without replacement when the dataset is large enough;
    otherwise a shuffled cycle covers the batch. Segments from
    utterances shorter than ``segment_frames`` wrap around.
    """
    if not dataset:
        raise DataError("cannot assemble a minibatch from an empty dataset")
    n = len(dataset)
    u, s = config.utterances_per_batch, config.segment_frames
    if n >= u:
        idx = rng.choice(n, size=u, replace=False)
    else:
        reps = -(-u // n)
        idx = np.concatenate([rng.permutation(n) for _ in range(reps)])[:u]
    f = dataset[0].mag.shape[0]
    mag = np.empty((u, f, s), dtype=np.float32)
    phase = np.empty((u, f, s), dtype=np.float32)
    starts = np.empty(u, dtype=np.int64)
    for row, i in enumerate(idx):
        utt = dataset[int(i)]
        frames = utt.frames
        if frames >= s:
            start = int(rng.integers(0, frames - s + 1))
            cols = np.arange(start, start + s)
        else:
            start = int(rng.integers(0, frames))
            cols = (start + np.arange(s)) % frames
        starts[row] = start
        mag[row] = utt.mag[:, cols]
        phase[row] = utt.phase[:, cols]
    return Minibatch(mag=mag, phase=phase, utterance_indices=idx, segment_starts=starts)


def augment_phase(batch: Minibatch, rng) -> Minibatch:
    """Shift each segment's phase by one draw from N(0, 1).

    Magnitudes are untouched; group delay and instantaneous frequency
    are invariant to the constant offset, so the derivative losses see
    the same targets.
    """
    offsets = rng.standard_normal(batch.phase.shape[0])
    shifted = np.empty_like(batch.phase)
    for i, offset in enumerate(offsets):
        shifted[i] = shift_phase(batch.phase[i], float(offset)).astype(np.float32)
    return Minibatch(
        mag=batch.mag, phase=shifted,
        utterance_indices=batch.utterance_indices, segment_starts=batch.segment_starts,
    )


def validate(model: JointModel, val_set, scheme: losses.LossScheme) -> dict:
    """Mean loss components over utterances, posterior-mean latents."""
    if not val_set:
        raise DataError("validation set is empty")
    sums = None
    with ad.no_grad():
        for utt in val_set:
            out = model.reconstruct(utt.mag, utt.phase, epsilon=None)
            _, rep = losses.composite(
                scheme, utt.mag, out.a_hat, out.sigma_mag,
                utt.phase, out.psi_hat, out.mu_q, out.sigma_q,
            )
            d = rep.to_dict()
            if sums is None:
                sums = {k: 0.0 for k in d}
            for k, value in d.items():
                sums[k] += value
    return {k: value / len(val_set) for k, value in sums.items()}


@dataclass
class TrainResult:
    best_val: float
    best_epoch: int
    epochs_run: int
    stopped_early: bool
    best_path: str
    last_path: str
    log_path: str
    history: list = field(default_factory=list)


def _rng_state(gen):
    return gen.bit_generator.state


def _steps_per_epoch(dataset, config):
    total = sum(utt.frames for utt in dataset)
    return max(1, -(-total // config.minibatch_frames))


def _train(model: JointModel, train_set, val_set, config: TrainConfig,
           out_dir: str, resume_from: str | None = None) -> TrainResult:
    scheme = losses.LossScheme.from_id(config.scheme_id)
    prefixes = STAGE_ONE_PREFIXES if config.stage == 1 else STAGE_TWO_PREFIXES
    params = model.store.subset(prefixes)
    opt = AdamState(params)

    seq = np.random.SeedSequence(config.seed)
    batch_rng, aug_rng, eps_rng = (np.random.default_rng(s) for s in seq.spawn(3))

    os.makedirs(out_dir, exist_ok=True)
    tag = f"stage{config.stage}"
    best_path = os.path.join(out_dir, f"{tag}_best.ckpt")
    last_path = os.path.join(out_dir, f"{tag}_last.ckpt")
    log_path = os.path.join(out_dir, f"{tag}_log.jsonl")

    start_epoch = 0
    global_step = 0
    best_val = np.inf
    best_epoch = 0
    epochs_since = 0
    if resume_from is not None:
        arrays, meta = ad.load_container(resume_from)
        state = meta.get("train_state")
        if not state or state.get("stage") != config.stage:
            raise ConfigError(f"{resume_from} is not a stage-{config.stage} training checkpoint")
        model.store.load_arrays({k: v for k, v in arrays.items() if k in model.store})
        opt.load_arrays(arrays, state["opt_step"])
        batch_rng.bit_generator.state = state["rng"]["batch"]
        aug_rng.bit_generator.state = state["rng"]["augment"]
        eps_rng.bit_generator.state = state["rng"]["epsilon"]
        start_epoch = state["epoch"]
        global_step = state["step"]
        best_val = state["best_val"] if state["best_val"] is not None else np.inf
        best_epoch = state["best_epoch"]
        epochs_since = state["epochs_since_improve"]

    steps_per_epoch = _steps_per_epoch(train_set, config)
    latent = model.config.latent_dim
    history = []
    stopped_early = False

    def train_state(epoch):
        return {
            "stage": config.stage,
            "scheme": config.scheme_id,
            "epoch": epoch,
            "step": global_step,
            "opt_step": opt.step,
            "best_val": best_val if np.isfinite(best_val) else None,
            "best_epoch": best_epoch,
            "epochs_since_improve": epochs_since,
            "rng": {
                "batch": _rng_state(batch_rng),
                "augment": _rng_state(aug_rng),
                "epsilon": _rng_state(eps_rng),
            },
        }

    def save_last(epoch):
        save_checkpoint(
            model, last_path,
            extra_meta={"train_state": train_state(epoch)},
            extra_arrays=opt.to_arrays(),
        )

    log = open(log_path, "a" if resume_from else "w")
    try:
        epoch = start_epoch
        for epoch in range(start_epoch + 1, config.max_epochs + 1):
            for _ in range(steps_per_epoch):
                t0 = time.perf_counter()
                batch = assemble_minibatch(train_set, config, batch_rng)
                batch = augment_phase(batch, aug_rng)
                eps = eps_rng.standard_normal(
                    (batch.mag.shape[0], latent, config.segment_frames)
                ).astype(np.float32)
                model.store.zero_grad()
                out = model.reconstruct(batch.mag, batch.phase, epsilon=eps)
                total, report = losses.composite(
                    scheme, batch.mag, out.a_hat, out.sigma_mag,
                    batch.phase, out.psi_hat, out.mu_q, out.sigma_q,
                )
                if not np.isfinite(report.total):
                    save_last(epoch - 1)
                    raise DivergenceError(
                        f"training loss is not finite at step {global_step + 1}"
                    )
                total.backward()
                grads = {
                    name: p.grad if p.grad is not None else np.zeros_like(p.data)
                    for name, p in params.items()
                }
                for name, g in grads.items():
                    if not np.all(np.isfinite(g)):
                        save_last(epoch - 1)
                        raise DivergenceError(f"non-finite gradient in parameter {name!r}")
                grad_norm = clip_gradient_norm(grads, config.clip_threshold)
                adam_step(params, grads, opt, config)
                global_step += 1
                extra = {
                    "event": "step", "stage": config.stage, "epoch": epoch,
                    "step": global_step, "grad_norm": grad_norm,
                }
                if config.log_timing:
                    extra["wall_ms"] = (time.perf_counter() - t0) * 1e3
                log.write(report.to_json_line(**extra) + "\n")

            val = validate(model, val_set, scheme)
            record = {"event": "validation", "stage": config.stage, "epoch": epoch}
            record.update(val)
            log.write(json.dumps(record, sort_keys=True) + "\n")
            log.flush()
            history.append(record)

            improved = val["total"] < best_val
            if val["total"] <= best_val:
                best_val = val["total"]
                best_epoch = epoch
                save_checkpoint(
                    model, best_path,
                    extra_meta={
                        "stage": config.stage, "scheme": config.scheme_id,
                        "epoch": epoch, "validation": val,
                    },
                )
            epochs_since = 0 if improved else epochs_since + 1
            if epochs_since >= config.patience_epochs:
                stopped_early = True
                break
        save_last(epoch)
    finally:
        log.close()

    # leave the model holding the kept (best) parameters
    if os.path.exists(best_path):
        best_arrays, _ = ad.load_container(best_path)
        model.store.load_arrays({k: v for k, v in best_arrays.items() if k in model.store})
    return TrainResult(
        best_val=best_val, best_epoch=best_epoch, epochs_run=epoch,
        stopped_early=stopped_early, best_path=best_path, last_path=last_path,
        log_path=log_path, history=history,
    )


def train_stage_one(model: JointModel, train_set, val_set, config: TrainConfig,
                    out_dir: str, resume_from: str | None = None) -> TrainResult:
    """Stage one: encoder + magnitude decoder with loss scheme M.

    The phase decoder keeps its random initialization bit for bit.
    """
    if config.stage != 1:
        raise ConfigError("train_stage_one needs a stage-1 config")
    if config.scheme_id != "M":
        raise ConfigError("stage one trains with scheme M only")
    return _train(model, train_set, val_set, config, out_dir, resume_from)


def train_stage_two(model: JointModel, train_set, val_set, config: TrainConfig,
                    out_dir: str, stage_one_checkpoint: str | None = None,
                    resume_from: str | None = None) -> TrainResult:
    """Stage two: all three networks with one of the joint schemes J1..J7.

    ``stage_one_checkpoint`` preloads the pretrained encoder and
    magnitude decoder (the phase decoder stays randomly initialized,
    as saved during stage one).
    """
    if config.stage != 2:
        raise ConfigError("train_stage_two needs a stage-2 config")
    scheme = losses.LossScheme.from_id(config.scheme_id)
    if not scheme.joint:
        raise ConfigError("stage two requires a joint scheme (J1..J7), not M")
    if stage_one_checkpoint is not None:
        loaded, meta, _ = load_checkpoint(stage_one_checkpoint)
        if loaded.config != model.config:
            raise ConfigError("stage-1 checkpoint was built for a different model config")
        model.store.load_arrays(loaded.store.state_arrays())
    return _train(model, train_set, val_set, config, out_dir, resume_from)
