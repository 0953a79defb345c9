"""VGG15 for 128x128 patches: 12 conv blocks and 3 dense layers.

Each conv block runs ``BN -> Conv3x3 -> ReLU -> BN -> [AP | GAP] -> Dropout``;
the dense head is ``FC -> ReLU -> Dr -> FC -> ReLU -> Dr -> FC -> Softmax``.
The same code drives reduced architectures (used for gradient checking) through
:class:`Architecture`.
"""

from dataclasses import dataclass, field

import numpy as np

from crowdscene.nn import layers as L
from crowdscene.nn.loss import kl_from_log_probs

CLASS_COUNT = 5
BN_MOMENTUM = 0.99


class ShapeMismatch(ValueError):
    pass


@dataclass(frozen=True)
class Architecture:
    input_channels: int = 1
    input_size: int = 128
    conv_channels: tuple = (32, 32, 64, 64, 128, 128, 128, 128, 256, 256, 256, 256)
    # pooling after each conv block: "" (none), "ap" (2x2 average) or "gap"
    pooling: tuple = ("", "ap", "", "ap", "", "", "", "ap", "", "", "", "gap")
    conv_dropout: tuple = (0.2, 0.25, 0.25, 0.3, 0.3, 0.3, 0.3, 0.3, 0.35, 0.35, 0.35, 0.35)
    dense_units: tuple = (1024, 1024)
    dense_dropout: tuple = (0.4, 0.4)
    class_count: int = CLASS_COUNT

    def __post_init__(self):
        n = len(self.conv_channels)
        if not (len(self.pooling) == len(self.conv_dropout) == n):
            raise ValueError("pooling/dropout plans must match the conv plan")
        if self.pooling[-1] != "gap" or "gap" in self.pooling[:-1]:
            raise ValueError("exactly one GAP, after the last conv block")
        if len(self.dense_dropout) != len(self.dense_units):
            raise ValueError("one dropout rate per hidden dense layer")
        if any(not 0.0 <= r < 1.0 for r in self.conv_dropout + self.dense_dropout):
            raise ValueError("dropout rates must lie in [0, 1)")

    def to_dict(self):
        return {k: list(v) if isinstance(v, tuple) else v
                for k, v in self.__dict__.items()}

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})

    def shape_trace(self):
        """Expected output shape of every conv block and dense layer."""
        size, trace = self.input_size, []
        for ch, pool in zip(self.conv_channels, self.pooling):
            if pool == "ap":
                size //= 2
            trace.append((ch,) if pool == "gap" else (size, size, ch))
        trace.extend((u,) for u in self.dense_units)
        trace.append((self.class_count,))
        return trace


def vgg15(input_channels=1):
    return Architecture(input_channels=input_channels)


@dataclass
class Vgg15Params:
    """Trainable tensors plus batch-norm running statistics.

    ``params`` keys, in order: ``block{i}.bn_in.{gamma,beta}``,
    ``block{i}.conv.{w,b}``, ``block{i}.bn_out.{gamma,beta}`` for every conv block,
    then ``dense{j}.{w,b}``. ``stats`` holds ``{site}.{mean,var}`` per BN site.
    """

    arch: Architecture
    params: dict
    stats: dict = field(default_factory=dict)

    @property
    def input_channels(self):
        return self.arch.input_channels

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    def copy(self):
        return Vgg15Params(self.arch, {k: v.copy() for k, v in self.params.items()},
                           {k: v.copy() for k, v in self.stats.items()})

    def astype(self, dtype):
        return Vgg15Params(self.arch, {k: v.astype(dtype) for k, v in self.params.items()},
                           {k: v.astype(dtype) for k, v in self.stats.items()})

    def squared_norm(self):
        """||theta||^2 over trainable tensors only (running statistics excluded)."""
        return float(sum(np.sum(np.asarray(v, dtype=np.float64) ** 2)
                         for v in self.params.values()))

    def parameter_count(self):
        return int(sum(v.size for v in self.params.values()))


def _add_bn(params, stats, site, channels, dtype):
    params[f"{site}.gamma"] = np.ones(channels, dtype)
    params[f"{site}.beta"] = np.zeros(channels, dtype)
    stats[f"{site}.mean"] = np.zeros(channels, dtype)
    stats[f"{site}.var"] = np.ones(channels, dtype)


def build(arch, seed=0, dtype=np.float32):
    """He-normal kernels, zero biases, BN scale 1 / shift 0."""
    rng = np.random.default_rng(seed)
    params, stats = {}, {}
    c_in = arch.input_channels
    for i, c_out in enumerate(arch.conv_channels):
        _add_bn(params, stats, f"block{i}.bn_in", c_in, dtype)
        std = np.sqrt(2.0 / (9 * c_in))
        params[f"block{i}.conv.w"] = (rng.standard_normal((3, 3, c_in, c_out)) * std).astype(dtype)
        params[f"block{i}.conv.b"] = np.zeros(c_out, dtype)
        _add_bn(params, stats, f"block{i}.bn_out", c_out, dtype)
        c_in = c_out
    units = list(arch.dense_units) + [arch.class_count]
    for j, u in enumerate(units):
        std = np.sqrt(2.0 / c_in)
        params[f"dense{j}.w"] = (rng.standard_normal((c_in, u)) * std).astype(dtype)
        params[f"dense{j}.b"] = np.zeros(u, dtype)
        c_in = u
    return Vgg15Params(arch, params, stats)


def build_vgg15(input_channels=1, class_count=CLASS_COUNT, seed=0, dtype=np.float32):
    if class_count != CLASS_COUNT:
        raise ValueError("this model is defined for 5 scene classes")
    if input_channels not in (1, 3):
        raise ValueError("input_channels must be 1 (spectrogram) or 3 (image)")
    return build(vgg15(input_channels), seed=seed, dtype=dtype)


def _check_input(model, x):
    a = model.arch
    if x.ndim == 3 and a.input_channels == 1:
        x = x[..., None]
    if x.ndim != 4 or x.shape[1:] != (a.input_size, a.input_size, a.input_channels):
        raise ShapeMismatch(
            f"expected (B, {a.input_size}, {a.input_size}, {a.input_channels}), got {x.shape}")
    return x.astype(model.dtype, copy=False)


def _run(model, x, train, rng, keep_cache, trace=None, bn_momentum=BN_MOMENTUM):
    """Shared forward pass. Returns (logits, tape, new_stats)."""
    a, p, s = model.arch, model.params, model.stats
    tape, new_stats = [], {}
    h = x

    def bn(site, h):
        out, (m, v), cache = L.batchnorm_forward(
            h, p[f"{site}.gamma"], p[f"{site}.beta"], s[f"{site}.mean"], s[f"{site}.var"], train,
            momentum=bn_momentum)
        new_stats[f"{site}.mean"], new_stats[f"{site}.var"] = m, v
        return out, cache

    for i, pool in enumerate(a.pooling):
        rec = {}
        h, rec["bn_in"] = bn(f"block{i}.bn_in", h)
        h, rec["conv"] = L.conv3x3_forward(h, p[f"block{i}.conv.w"], p[f"block{i}.conv.b"])
        h, rec["relu"] = L.relu_forward(h)
        h, rec["bn_out"] = bn(f"block{i}.bn_out", h)
        if pool == "ap":
            h, _ = L.avgpool2_forward(h)
        elif pool == "gap":
            h, rec["gap"] = L.gap_forward(h)
        h, rec["drop"] = L.dropout_forward(h, a.conv_dropout[i], rng if train else None)
        if trace is not None:
            trace.append(h.shape[1:])
        if keep_cache:
            tape.append(rec)
    n_dense = len(a.dense_units) + 1
    for j in range(n_dense):
        rec = {}
        h, rec["dense"] = L.dense_forward(h, p[f"dense{j}.w"], p[f"dense{j}.b"])
        if j < n_dense - 1:
            h, rec["relu"] = L.relu_forward(h)
            h, rec["drop"] = L.dropout_forward(h, a.dense_dropout[j], rng if train else None)
        if trace is not None:
            trace.append(h.shape[1:])
        if keep_cache:
            tape.append(rec)
    return h, tape, new_stats


def logits(model, batch, train=False, rng=None):
    x = _check_input(model, np.asarray(batch))
    out, _, _ = _run(model, x, train, rng, keep_cache=False)
    return out


def forward(model, batch, train=False, rng=None, chunk=32):
    """Class probabilities for a batch of patches, shape (B, 5).

    Inference (``train=False``) disables dropout and uses BN running statistics;
    it is processed in chunks so large batches stay within memory.
    """
    x = _check_input(model, np.asarray(batch))
    if train:
        z, _, _ = _run(model, x, True, rng, keep_cache=False)
        return np.exp(L.log_softmax(z.astype(np.float64)))
    out = [_run(model, x[k:k + chunk], False, None, keep_cache=False)[0]
           for k in range(0, len(x), chunk)]
    return np.exp(L.log_softmax(np.concatenate(out).astype(np.float64)))


def population_statistics(model, batches):
    """BN running statistics re-estimated as the average batch moments over ``batches``.

    Every site is normalized with its batch statistics (as in training) and
    dropout is off (as in inference). With few optimizer steps the momentum
    averages are still dominated by their initial values; this pass replaces
    them with the statistics of the final parameters. Returns a new model.
    """
    sums, count = {}, 0
    for xb in batches:
        x = _check_input(model, np.asarray(xb))
        _, _, moments = _run(model, x, True, None, keep_cache=False, bn_momentum=0.0)
        for k, v in moments.items():
            sums[k] = sums.get(k, 0.0) + np.asarray(v, np.float64)
        count += 1
    if not count:
        raise ValueError("no batches to estimate statistics from")
    stats = {k: (sums[k] / count).astype(model.stats[k].dtype) for k in model.stats}
    return Vgg15Params(model.arch, model.params, stats)


def shape_trace(model, batch_size=1):
    """Run a zero batch through the network and record every stage's output shape."""
    a = model.arch
    x = np.zeros((batch_size, a.input_size, a.input_size, a.input_channels), model.dtype)
    trace = []
    _run(model, x, False, None, keep_cache=False, trace=trace)
    return [tuple(t) for t in trace]


def loss_and_gradients(model, batch, labels, l2_lambda=0.0, rng=None, train=True):
    """KL loss (plus L2 penalty) of a batch and its gradient w.r.t. every trainable tensor.

    ``rng`` drives the dropout masks, so a fixed seed gives a fixed mask.
    Returns ``(loss, grads, new_stats, probs)``; ``new_stats`` are the
    momentum-updated BN running statistics (unchanged when ``train`` is False)
    and ``probs`` the softmax outputs of this pass.
    """
    x = _check_input(model, np.asarray(batch))
    y = np.asarray(labels, dtype=np.float64)
    if y.shape != (len(x), model.arch.class_count):
        raise ShapeMismatch(f"labels shape {y.shape} does not match batch of {len(x)}")
    a, p = model.arch, model.params
    z, tape, new_stats = _run(model, x, train, rng, keep_cache=True)
    logp = L.log_softmax(z.astype(np.float64))
    loss = kl_from_log_probs(y, logp) + 0.5 * l2_lambda * model.squared_norm()

    # d/dz of sum_n sum_c y log(y / softmax(z))
    dz = (np.exp(logp) * y.sum(axis=1, keepdims=True) - y).astype(z.dtype)
    grads = {}
    n_dense = len(a.dense_units) + 1
    h = dz
    for j in reversed(range(n_dense)):
        rec = tape[len(a.pooling) + j]
        if j < n_dense - 1:
            h = L.dropout_backward(h, rec["drop"])
            h = L.relu_backward(h, rec["relu"])
        h, grads[f"dense{j}.w"], grads[f"dense{j}.b"] = L.dense_backward(
            h, rec["dense"], p[f"dense{j}.w"])
    for i in reversed(range(len(a.pooling))):
        rec, pool = tape[i], a.pooling[i]
        h = L.dropout_backward(h, rec["drop"])
        if pool == "ap":
            h = L.avgpool2_backward(h)
        elif pool == "gap":
            h = L.gap_backward(h, rec["gap"])
        h, grads[f"block{i}.bn_out.gamma"], grads[f"block{i}.bn_out.beta"] = \
            L.batchnorm_backward(h, rec["bn_out"])
        h = L.relu_backward(h, rec["relu"])
        h, grads[f"block{i}.conv.w"], grads[f"block{i}.conv.b"] = L.conv3x3_backward(
            h, rec["conv"], p[f"block{i}.conv.w"], need_dx=True)
        tape[i] = None
        if i == 0:
            # input gradient is not needed; only the BN parameters are
            dgamma, dbeta = _bn_param_grads(h, rec["bn_in"])
            grads["block0.bn_in.gamma"], grads["block0.bn_in.beta"] = dgamma, dbeta
        else:
            h, grads[f"block{i}.bn_in.gamma"], grads[f"block{i}.bn_in.beta"] = \
                L.batchnorm_backward(h, rec["bn_in"])
    if l2_lambda:
        for k in grads:
            grads[k] = grads[k] + l2_lambda * p[k]
    grads = {k: grads[k].astype(p[k].dtype, copy=False) for k in p}
    return loss, grads, new_stats, np.exp(logp)


def _bn_param_grads(dout, cache):
    xhat = cache[0]
    axes = tuple(range(dout.ndim - 1))
    return (dout * xhat).sum(axis=axes), dout.sum(axis=axes)


def gradients(model, batch, labels, l2_lambda=0.0, rng=None):
    """Gradient of the KL loss w.r.t. every trainable tensor (train mode)."""
    return loss_and_gradients(model, batch, labels, l2_lambda, rng)[1]
