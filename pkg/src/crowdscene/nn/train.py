"""Mini-batch Adam training of a VGG15 framework on augmented patches."""

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from crowdscene import dsp
from crowdscene.augment import AugmentConfig, augment_batch
from crowdscene.manifest import Split
from crowdscene.nn import vgg
from crowdscene.nn.optim import AdamConfig, AdamState, adam_step
from crowdscene.pipeline import Framework, MissingFeatures, model_inputs

log = logging.getLogger(__name__)

DEFAULT_ARCH = vgg.Architecture()


class NonFiniteLoss(FloatingPointError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    adam: AdamConfig = field(default_factory=AdamConfig)
    l2_lambda: float = 1e-4
    batch_size: int = 16
    # patches drawn per segment each epoch; 0 uses every patch
    patches_per_segment: int = 0
    # re-estimate BN statistics over the Train patches after training
    recalibrate_bn: bool = True
    recalibration_batch: int = 50
    conv_dropout: tuple = DEFAULT_ARCH.conv_dropout
    dense_dropout: tuple = DEFAULT_ARCH.dense_dropout
    rng_seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1 or self.recalibration_batch < 1:
            raise ValueError("batch sizes must be >= 1")
        if self.l2_lambda < 0:
            raise ValueError("l2_lambda must be >= 0")
        if self.patches_per_segment < 0:
            raise ValueError("patches_per_segment must be >= 0")
        if any(not 0.0 <= r < 1.0 for r in tuple(self.conv_dropout) + tuple(self.dense_dropout)):
            raise ValueError("dropout rates must lie in [0, 1)")

    def to_dict(self):
        d = asdict(self)
        d["conv_dropout"] = list(self.conv_dropout)
        d["dense_dropout"] = list(self.dense_dropout)
        return d


@dataclass
class TrainHistory:
    loss: list = field(default_factory=list)
    accuracy: list = field(default_factory=list)
    seconds: list = field(default_factory=list)
    best_epoch: int = -1

    @property
    def best_loss(self):
        return self.loss[self.best_epoch] if self.loss else float("nan")


def _load_train_set(manifest, store, kind, standardizer):
    xs, ys = [], []
    for r in manifest.split(Split.TRAIN):
        if r.segment_id not in store:
            raise MissingFeatures(f"features missing for training segment {r.segment_id}")
        xs.append(model_inputs(store[r.segment_id], kind, standardizer))
        ys.append(int(r.label))
    if not xs:
        raise MissingFeatures("manifest has no Train segments")
    return xs, np.array(ys)


def fit_standardizer(manifest, store, kind):
    if kind == "frames":
        return None
    return dsp.Standardizer.fit([store[r.segment_id] for r in manifest.split(Split.TRAIN)])


def train(manifest, feature_store, cfg=TrainConfig(), augment_cfg=AugmentConfig(), kind="mel",
          name=None, checkpoint=None, model=None):
    """Train one framework on the manifest's Train split.

    Each epoch shuffles the Train patches, and every batch is spec-augmented and
    doubled with its mixup copy before the gradient step. The parameters with
    the lowest epoch loss are kept; their BN statistics are then re-estimated on
    the un-augmented Train patches (see :func:`vgg.population_statistics`) and
    the result is returned and written to ``checkpoint`` if given.

    Returns ``(Framework, TrainHistory)``.
    """
    from crowdscene.nn.checkpoint import save_checkpoint

    standardizer = fit_standardizer(manifest, feature_store, kind)
    seg_x, seg_y = _load_train_set(manifest, feature_store, kind, standardizer)
    channels = seg_x[0].shape[-1]
    if model is None:
        arch = vgg.Architecture(input_channels=channels, conv_dropout=tuple(cfg.conv_dropout),
                                dense_dropout=tuple(cfg.dense_dropout))
        model = vgg.build(arch, seed=cfg.rng_seed)
    rng = np.random.default_rng(cfg.rng_seed)
    eye = np.eye(vgg.CLASS_COUNT)
    opt = AdamState()
    history = TrainHistory()
    best = None
    name = name or f"{kind}-vgg15"

    for epoch in range(cfg.epochs):
        t0 = time.time()
        items = []
        for s, patches in enumerate(seg_x):
            idx = np.arange(len(patches))
            if cfg.patches_per_segment and cfg.patches_per_segment < len(idx):
                idx = rng.choice(idx, cfg.patches_per_segment, replace=False)
            items.extend((s, int(i)) for i in idx)
        order = rng.permutation(len(items))
        total_loss, seen, correct, count = 0.0, 0, 0, 0
        for b0 in range(0, len(order), cfg.batch_size):
            chosen = [items[k] for k in order[b0:b0 + cfg.batch_size]]
            x = np.stack([seg_x[s][i] for s, i in chosen])
            y = eye[[seg_y[s] for s, _ in chosen]]
            xb, yb = augment_batch(x, y, augment_cfg, rng)
            loss, grads, stats, probs = vgg.loss_and_gradients(model, xb, yb, cfg.l2_lambda, rng)
            if not np.isfinite(loss):
                worst = max(float(np.max(np.abs(v))) for v in model.params.values())
                raise NonFiniteLoss(f"non-finite loss at epoch {epoch}, batch {b0 // cfg.batch_size}"
                                    f" (max |param| = {worst:.3g})")
            params, opt = adam_step(model.params, grads, opt, cfg.adam)
            model = vgg.Vgg15Params(model.arch, params, stats)
            total_loss += loss
            seen += len(xb)
            correct += int(np.sum(probs[:len(x)].argmax(axis=1) == y.argmax(axis=1)))
            count += len(x)
        epoch_loss = total_loss / seen
        history.loss.append(epoch_loss)
        history.accuracy.append(correct / count)
        history.seconds.append(time.time() - t0)
        log.info("%s epoch %d/%d loss %.4f train-acc %.3f (%.0fs)", name, epoch + 1, cfg.epochs,
                 epoch_loss, correct / count, history.seconds[-1])
        if best is None or epoch_loss < history.best_loss:
            history.best_epoch = epoch
            best = model.copy()
            if checkpoint is not None:
                save_checkpoint(checkpoint, Framework(name, kind, best, standardizer),
                                train_config=cfg.to_dict(), epoch=epoch, loss=epoch_loss,
                                bn_recalibrated=False)
    if cfg.recalibrate_bn:
        patches = np.concatenate(seg_x)[rng.permutation(sum(len(p) for p in seg_x))]
        step = cfg.recalibration_batch
        best = vgg.population_statistics(
            best, (patches[k:k + step] for k in range(0, len(patches), step)))
        if checkpoint is not None:
            save_checkpoint(checkpoint, Framework(name, kind, best, standardizer),
                            train_config=cfg.to_dict(), epoch=history.best_epoch,
                            loss=history.best_loss, bn_recalibrated=True)
    return Framework(name, kind, best, standardizer), history
