"""Two-stage training schedule and inference helpers."""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field

import numpy as np

from ..dsp import FrameParams, Waveform, istft, stft
from .model import STAGE1_WEIGHT, SaesModel, loss_stage1, loss_stage2
from .optim import PAPER_LR, AdamState, adam_step

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    def __init__(self, message, last_good: dict):
        super().__init__(message)
        self.last_good = last_good


@dataclass
class Schedule:
    stage1_epochs: int = 300
    stage2_epochs: int = 100
    lr: float = PAPER_LR
    stage2_lr: float | None = None
    batch_size: int = 2
    seed: int = 0


@dataclass
class TrainResult:
    model: SaesModel
    stage1_loss: list = field(default_factory=list)
    stage2_loss: list = field(default_factory=list)
    stage2_complex: list = field(default_factory=list)
    stage2_magnitude: list = field(default_factory=list)
    stage1_params: dict | None = None


@dataclass
class Example:
    Y: np.ndarray
    X1: np.ndarray
    X2: np.ndarray
    S: np.ndarray


def bundle_to_example(bundle, frame_params: FrameParams | None = None) -> Example:
    p = frame_params or FrameParams()
    return Example(stft(bundle.mic, p).data, stft(bundle.far1, p).data,
                   stft(bundle.far2, p).data, stft(bundle.near, p).data)


def _snapshot(model):
    return {k: v.copy() for k, v in model.params().items()}


def restore(model: SaesModel, snapshot: dict):
    for k, v in model.params().items():
        v[...] = snapshot[k]


def _run_stage(model, examples, stage, epochs, lr, batch_size, rng, on_epoch):
    names = ("sle", "srn") if stage == 1 else ("sle", "srn", "csr")
    params = model.params(names)
    state = AdamState()
    curves = []
    for epoch in range(epochs):
        order = rng.permutation(len(examples))
        totals = np.zeros(3)
        for start in range(0, len(order), batch_size):
            batch = order[start:start + batch_size]
            acc = {k: np.zeros_like(v) for k, v in params.items()}
            for i in batch:
                ex = examples[i]
                fwd = model.forward(ex.Y, ex.X1, ex.X2, stage=stage)
                l1, g1 = loss_stage1(fwd.mag_srn, np.abs(ex.S))
                if stage == 1:
                    model.backward(g_mag_srn=g1)
                    totals += (l1, l1, 0.0)
                else:
                    l2, g2 = loss_stage2(fwd.s_hat, ex.S, l1)
                    model.backward(g_mag_srn=STAGE1_WEIGHT * g1, g_s_hat=g2)
                    totals += (l2, l1, l2 - STAGE1_WEIGHT * l1)
                grads = model.grads(names)
                for k in acc:
                    acc[k] += grads[k]
            for k in acc:
                acc[k] /= len(batch)
            if not all(np.all(np.isfinite(g)) for g in acc.values()):
                raise TrainingDiverged(f"non-finite gradient in stage {stage}, epoch {epoch}", {})
            adam_step(params, acc, state, lr)
        means = totals / len(examples)
        if not np.all(np.isfinite(means)):
            raise TrainingDiverged(f"loss became NaN in stage {stage}, epoch {epoch}", {})
        curves.append(means)
        if on_epoch:
            on_epoch(stage, epoch, means)
    return curves


def train_two_stage(examples, model: SaesModel, schedule: Schedule | None = None,
                    on_epoch=None) -> TrainResult:
    """Stage 1 fits the linear-echo and residual stages on the magnitude loss;
    stage 2 refines all three stages on the complex loss plus 0.1 x magnitude loss.

    ``examples`` are :class:`Example` instances (or bundles, converted on the fly).
    On divergence the model is rolled back to the last finished epoch and
    :class:`TrainingDiverged` carries that snapshot.
    """
    schedule = schedule or Schedule()
    examples = [e if isinstance(e, Example) else bundle_to_example(e) for e in examples]
    rng = np.random.default_rng(schedule.seed)
    result = TrainResult(model)
    good = _snapshot(model)

    def track(stage, epoch, means):
        nonlocal good
        good = _snapshot(model)
        if on_epoch:
            on_epoch(stage, epoch, means)

    try:
        c1 = _run_stage(model, examples, 1, schedule.stage1_epochs, schedule.lr,
                        schedule.batch_size, rng, track)
        result.stage1_loss = [float(c[0]) for c in c1]
        result.stage1_params = _snapshot(model)
        c2 = _run_stage(model, examples, 2, schedule.stage2_epochs,
                        schedule.stage2_lr if schedule.stage2_lr is not None else schedule.lr,
                        schedule.batch_size, rng, track)
    except TrainingDiverged as exc:
        restore(model, good)
        log.error("%s; restored last good parameters", exc)
        raise TrainingDiverged(str(exc), copy.deepcopy(good)) from None
    result.stage2_loss = [float(c[0]) for c in c2]
    result.stage2_magnitude = [float(c[1]) for c in c2]
    result.stage2_complex = [float(c[2]) for c in c2]
    return result


def enhance(model: SaesModel, mic: Waveform, far1: Waveform, far2: Waveform,
            stage: int = 2, frame_params: FrameParams | None = None) -> Waveform:
    """Near-end estimate in the time domain.  ``stage=1`` returns the coarse
    estimate (SRN magnitude with mic phase), without the refinement stage."""
    p = frame_params or FrameParams()
    Y = stft(mic, p)
    fwd = model.forward(Y.data, stft(far1, p).data, stft(far2, p).data, stage=stage)
    if stage >= 2:
        out = fwd.s_hat
    else:
        mag = np.abs(Y.data)
        unit = np.where(mag > 0, Y.data / np.where(mag > 0, mag, 1.0), 0.0)
        out = fwd.mag_srn * unit
    return istft(Y.like(out), mic.sample_rate, len(mic))
