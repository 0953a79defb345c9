"""Spectrum masking and mixup for spectrogram patches and image frames.

Patches are ``(time, freq)`` or ``(time, freq, channels)`` arrays; for images
the first two axes are rows and columns and the mask positions are shared by
all channels.
"""

from dataclasses import dataclass

import numpy as np


class ShapeMismatch(ValueError):
    pass


@dataclass(frozen=True)
class AugmentConfig:
    freq_mask_width: int = 10
    time_mask_width: int = 10
    # "uniform" draws mixup gamma from U(0, 1); "beta" from Beta(alpha, alpha)
    mixup_gamma_dist: str = "uniform"
    beta_alpha: float = 0.2
    apply_probability: float = 1.0
    mixup: bool = True
    rng_seed: int = 0

    def __post_init__(self):
        for w in (self.freq_mask_width, self.time_mask_width):
            if not 0 <= w <= 128:
                raise ValueError("mask widths must lie in [0, 128]")
        if not 0.0 <= self.apply_probability <= 1.0:
            raise ValueError("apply_probability must lie in [0, 1]")
        if self.mixup_gamma_dist not in ("uniform", "beta"):
            raise ValueError("mixup_gamma_dist is 'uniform' or 'beta'")
        if self.mixup_gamma_dist == "beta" and self.beta_alpha <= 0:
            raise ValueError("beta_alpha must be positive")

    def draw_gamma(self, rng):
        if self.mixup_gamma_dist == "beta":
            return float(rng.beta(self.beta_alpha, self.beta_alpha))
        return float(rng.uniform(0.0, 1.0))


def spec_augment(patch, cfg, rng):
    """Zero one contiguous frequency band and one contiguous time band.

    Band starts are uniform over all positions where the band fits. Returns a
    new array; the input is not modified.
    """
    out = np.array(patch, copy=True)
    n_time, n_freq = out.shape[:2]
    wf, wt = min(cfg.freq_mask_width, n_freq), min(cfg.time_mask_width, n_time)
    if wf:
        f0 = int(rng.integers(0, n_freq - wf + 1))
        out[:, f0:f0 + wf] = 0
    if wt:
        t0 = int(rng.integers(0, n_time - wt + 1))
        out[t0:t0 + wt, :] = 0
    return out


def mixup_pair(x_a, y_a, x_b, y_b, gamma):
    """Both mixup outputs for one pair and mixing coefficient ``gamma``.

    Returns ``(x_mx1, y_mx1, x_mx2, y_mx2)`` with
    ``x_mx1 = gamma*x_a + (1-gamma)*x_b`` and ``x_mx2 = (1-gamma)*x_a + gamma*x_b``,
    labels mixed the same way.
    """
    x_a, x_b = np.asarray(x_a), np.asarray(x_b)
    y_a, y_b = np.asarray(y_a, dtype=np.float64), np.asarray(y_b, dtype=np.float64)
    if x_a.shape != x_b.shape or y_a.shape != y_b.shape:
        raise ShapeMismatch(f"cannot mix {x_a.shape} with {x_b.shape}")
    if not 0.0 <= gamma <= 1.0:
        raise ValueError("gamma must lie in [0, 1]")
    g, h = gamma, 1.0 - gamma
    x1 = g * x_a + h * x_b
    x2 = h * x_a + g * x_b
    y1 = g * y_a + h * y_b
    y2 = h * y_a + g * y_b
    return x1.astype(x_a.dtype, copy=False), y1, x2.astype(x_a.dtype, copy=False), y2


def augment_batch(patches, labels, cfg, rng):
    """Spec-augmented batch followed by an equally sized mixed copy.

    The batch is shuffled into pairs and each pair contributes both mixup
    outputs; with an odd batch the left-over item is mixed with a random
    partner and contributes only its first output.
    """
    x = np.asarray(patches)
    y = np.asarray(labels, dtype=np.float64)
    n = len(x)
    if n == 0:
        raise ValueError("empty batch")
    aug = np.empty_like(x)
    for i in range(n):
        aug[i] = spec_augment(x[i], cfg, rng) if rng.random() < cfg.apply_probability else x[i]
    if not cfg.mixup:
        return aug, y
    mx = np.empty_like(aug)
    my = np.empty_like(y)
    order = rng.permutation(n)
    for k in range(0, n - 1, 2):
        a, b = order[k], order[k + 1]
        mx[k], my[k], mx[k + 1], my[k + 1] = mixup_pair(aug[a], y[a], aug[b], y[b],
                                                        cfg.draw_gamma(rng))
    if n % 2:
        a = order[-1]
        b = int(rng.integers(0, n))
        mx[-1], my[-1], _, _ = mixup_pair(aug[a], y[a], aug[b], y[b], cfg.draw_gamma(rng))
    return np.concatenate([aug, mx]), np.concatenate([y, my])
