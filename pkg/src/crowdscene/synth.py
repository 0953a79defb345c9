"""Deterministic synthetic stand-in for the five-scene audio-visual corpus.

Each class has a distinct time-frequency texture so that MEL, CQT and
gammatone front ends all separate them:

========================  ===================================================
riot                      siren-like FM sweeps over band-limited crowd noise
noise_street              steady low-pass (traffic-like) broadband noise
firework_event            sparse decaying broadband bursts over near silence
music_event               harmonic note sequences
sport_atmosphere          rhythmically amplitude-modulated noise with whistles
========================  ===================================================

Every segment draws its parameters from its own seed, derived from
``(rng_seed, label, split, index)``, so corpora are reproducible bit for bit.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import signal

from crowdscene.dsp import write_wav
from crowdscene.manifest import (DatasetManifest, SceneLabel, SegmentRecord, Split,
                                 save_manifest)

RATE = 32000
SECONDS = 10.0


@dataclass(frozen=True)
class SynthSpec:
    train_per_class: int = 20
    test_per_class: int = 10
    segments_per_video: int = 2
    frames_per_segment: int = 0
    rng_seed: int = 0

    def __post_init__(self):
        if self.train_per_class < 0 or self.test_per_class < 0:
            raise ValueError("segment counts must be non-negative")
        if self.segments_per_video < 1:
            raise ValueError("segments_per_video must be at least 1")


def _noise(rng, n, lo=None, hi=None, order=4):
    x = rng.standard_normal(n)
    if lo is None and hi is None:
        return x
    if lo is None:
        sos = signal.butter(order, hi, "lowpass", fs=RATE, output="sos")
    elif hi is None:
        sos = signal.butter(order, lo, "highpass", fs=RATE, output="sos")
    else:
        sos = signal.butter(order, [lo, hi], "bandpass", fs=RATE, output="sos")
    return signal.sosfilt(sos, x)


def _unit(x):
    return x / (np.max(np.abs(x)) + 1e-12)


def _riot(rng, t):
    n = len(t)
    center = rng.uniform(700, 1100)
    depth = rng.uniform(250, 450)
    rate = rng.uniform(0.3, 0.8)
    inst = center + depth * np.sin(2 * np.pi * rate * t + rng.uniform(0, 2 * np.pi))
    siren = np.sin(2 * np.pi * np.cumsum(inst) / RATE)
    siren += 0.4 * np.sin(2 * 2 * np.pi * np.cumsum(inst) / RATE)
    crowd = _unit(_noise(rng, n, 300, 3000))
    return _unit(siren) + rng.uniform(0.3, 0.5) * crowd


def _noise_street(rng, t):
    n = len(t)
    rumble = _unit(_noise(rng, n, None, rng.uniform(300, 600), order=2))
    hiss = _unit(_noise(rng, n, None, 4000, order=2))
    slow = 1.0 + 0.2 * np.sin(2 * np.pi * rng.uniform(0.05, 0.2) * t)
    return slow * (rumble + 0.3 * hiss)


def _firework(rng, t):
    n = len(t)
    out = 0.01 * rng.standard_normal(n)
    count = rng.integers(8, 20)
    for start in rng.uniform(0, SECONDS - 0.3, size=count):
        i0 = int(start * RATE)
        length = min(int(rng.uniform(0.08, 0.3) * RATE), n - i0)
        env = np.exp(-np.arange(length) / (rng.uniform(0.02, 0.06) * RATE))
        out[i0:i0 + length] += rng.uniform(0.5, 1.0) * env * rng.standard_normal(length)
    return out


def _music(rng, t):
    n = len(t)
    out = np.zeros(n)
    pos = 0
    scale = 110.0 * 2 ** (np.array([0, 2, 4, 5, 7, 9, 11, 12, 14, 16]) / 12)
    while pos < n:
        length = int(rng.uniform(0.25, 0.6) * RATE)
        f0 = rng.choice(scale) * rng.choice([1, 2])
        tt = np.arange(min(length, n - pos)) / RATE
        env = np.minimum(1.0, tt / 0.02) * np.exp(-tt / rng.uniform(0.4, 1.0))
        note = sum(np.sin(2 * np.pi * f0 * h * tt) / h for h in range(1, 7))
        out[pos:pos + len(tt)] += env * note
        pos += length
    return out + 0.01 * rng.standard_normal(n)


def _sport(rng, t):
    n = len(t)
    rate = rng.uniform(1.5, 3.0)
    mod = 0.5 * (1.0 + np.sign(np.sin(2 * np.pi * rate * t + rng.uniform(0, 2 * np.pi))))
    mod = signal.sosfiltfilt(signal.butter(2, 20, fs=RATE, output="sos"), mod)
    crowd = _unit(_noise(rng, n, 500, 6000)) * (0.15 + 0.85 * mod)
    out = crowd
    for start in rng.uniform(0, SECONDS - 0.5, size=rng.integers(2, 5)):
        i0 = int(start * RATE)
        length = int(rng.uniform(0.2, 0.45) * RATE)
        tt = np.arange(length) / RATE
        out[i0:i0 + length] += 0.6 * np.sin(2 * np.pi * rng.uniform(3000, 4000) * tt)
    return out


AUDIO_GENERATORS = {
    SceneLabel.RIOT: _riot,
    SceneLabel.NOISE_STREET: _noise_street,
    SceneLabel.FIREWORK_EVENT: _firework,
    SceneLabel.MUSIC_EVENT: _music,
    SceneLabel.SPORT_ATMOSPHERE: _sport,
}

# base RGB colour and stripe orientation (degrees) of each class's frames
VISUAL_STYLE = {
    SceneLabel.RIOT: ((0.85, 0.35, 0.1), 0),
    SceneLabel.NOISE_STREET: ((0.5, 0.5, 0.5), 90),
    SceneLabel.FIREWORK_EVENT: ((0.05, 0.05, 0.2), None),
    SceneLabel.MUSIC_EVENT: ((0.55, 0.15, 0.65), 45),
    SceneLabel.SPORT_ATMOSPHERE: ((0.15, 0.6, 0.2), 135),
}


def synth_audio(label, rng):
    """10 s of 32 kHz audio for one class, peak level drawn from [0.3, 0.8]."""
    t = np.arange(int(SECONDS * RATE)) / RATE
    x = AUDIO_GENERATORS[SceneLabel(label)](rng, t)
    return rng.uniform(0.3, 0.8) * _unit(x)


def synth_frame(label, rng, size=128):
    colour, angle = VISUAL_STYLE[SceneLabel(label)]
    yy, xx = np.mgrid[0:size, 0:size] / size
    img = np.ones((size, size, 3)) * colour
    if angle is None:
        dots = rng.random((size, size)) > 0.985
        img[dots] = rng.uniform(0.7, 1.0, size=3)
    else:
        a = np.deg2rad(angle + rng.uniform(-10, 10))
        stripes = 0.5 + 0.5 * np.sin(2 * np.pi * rng.uniform(6, 10)
                                     * (xx * np.cos(a) + yy * np.sin(a)) + rng.uniform(0, 6.3))
        img *= (0.6 + 0.4 * stripes)[..., None]
    img += 0.05 * rng.standard_normal(img.shape)
    return np.clip(img, 0.0, 1.0)


def _segment_rng(seed, label, split, index):
    split_code = 0 if split is Split.TRAIN else 1
    return np.random.default_rng(np.random.SeedSequence([seed, int(label), split_code, index]))


def generate_corpus(spec, out_dir):
    """Write WAVs (and optional PNG frames) plus ``manifest.csv`` under ``out_dir``."""
    from PIL import Image

    out_dir = Path(out_dir)
    (out_dir / "audio").mkdir(parents=True, exist_ok=True)
    records = []
    for split, per_class in ((Split.TRAIN, spec.train_per_class), (Split.TEST, spec.test_per_class)):
        for label in SceneLabel:
            for i in range(per_class):
                video = f"syn-{label.slug}-{split.value}-{i // spec.segments_per_video:03d}"
                seg = i % spec.segments_per_video
                rng = _segment_rng(spec.rng_seed, label, split, i)
                rel_audio = f"audio/{video}-{seg:03d}.wav"
                write_wav(out_dir / rel_audio, synth_audio(label, rng), RATE)
                rel_frames = ""
                if spec.frames_per_segment:
                    rel_frames = f"frames/{video}-{seg:03d}"
                    (out_dir / rel_frames).mkdir(parents=True, exist_ok=True)
                    for f in range(spec.frames_per_segment):
                        img = np.round(synth_frame(label, rng) * 255).astype(np.uint8)
                        Image.fromarray(img).save(out_dir / rel_frames / f"{f:04d}.png")
                records.append(SegmentRecord(video, seg, seg * SECONDS, label, split,
                                             rel_audio, rel_frames))
    manifest = DatasetManifest(records, base_dir=out_dir)
    save_manifest(manifest, out_dir / "manifest.csv")
    return manifest
