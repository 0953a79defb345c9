"""Wall time of each front end and of VGG15 inference/training steps on this machine."""

import time

import numpy as np

from crowdscene import dsp
from crowdscene.augment import AugmentConfig, augment_batch
from crowdscene.nn import vgg


def best_of(fn, repeats=3):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    rng = np.random.default_rng(0)
    pcm = dsp.PcmBuffer(0.1 * rng.standard_normal(320000), 32000)
    dsp.spectrogram("cqt", pcm)  # build the kernel once
    for kind in dsp.KINDS:
        print(f"{kind:>4}: {best_of(lambda: dsp.spectrogram(kind, pcm)):.3f} s per 10 s segment")

    model = vgg.build_vgg15()
    x = rng.standard_normal((5, 128, 128, 1)).astype(np.float32)
    print(f"inference: {best_of(lambda: vgg.forward(model, x)):.3f} s per segment (5 patches)")
    y = np.eye(5)[rng.integers(0, 5, 8)]
    xb = rng.standard_normal((8, 128, 128, 1)).astype(np.float32)

    def step():
        bx, by = augment_batch(xb, y, AugmentConfig(), rng)
        vgg.loss_and_gradients(model, bx, by, 1e-4, rng)

    print(f"train step: {best_of(step, 2):.2f} s per batch of 8 (+8 mixed)")


if __name__ == "__main__":
    main()
