import sys

import numpy as np
import pytest

from crowdscene import dsp
from crowdscene.manifest import SceneLabel, Split, SegmentRecord

RATE = 32000


def tone(freq, seconds=10.0, rate=RATE, amp=0.5):
    t = np.arange(int(round(seconds * rate))) / rate
    return dsp.PcmBuffer(amp * np.sin(2 * np.pi * freq * t), rate)


def records_for(counts, segments_per_video=1):
    """Manifest records from ``{label: (train, test)}``."""
    out = []
    for label, per_split in counts.items():
        for split, n in zip((Split.TRAIN, Split.TEST), per_split):
            for i in range(n):
                video = f"{SceneLabel(label).slug}-{split.value}-{i // segments_per_video}"
                k = i % segments_per_video
                out.append(SegmentRecord(video, k, 10.0 * k, SceneLabel(label), split,
                                         f"audio/{video}-{k:03d}.wav"))
    return out


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    """Two Train and one Test segment per class."""
    from crowdscene.synth import SynthSpec, generate_corpus

    out = tmp_path_factory.mktemp("tiny_corpus")
    manifest = generate_corpus(SynthSpec(train_per_class=2, test_per_class=1), out)
    return out, manifest


@pytest.fixture(scope="session")
def tiny_mel(tiny_corpus):
    from crowdscene.pipeline import FeatureStore, extract_features

    root, manifest = tiny_corpus
    extract_features(manifest, "mel", root / "features_mel")
    return manifest, FeatureStore(root / "features_mel")


@pytest.fixture(scope="session")
def random_framework(tiny_mel):
    """Untrained MEL framework with a standardizer fitted on the tiny corpus."""
    from crowdscene.nn import vgg
    from crowdscene.nn.train import fit_standardizer
    from crowdscene.pipeline import Framework

    manifest, store = tiny_mel
    return Framework("mel-untrained", "mel", vgg.build_vgg15(seed=0),
                     fit_standardizer(manifest, store, "mel"))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.acceptance_lines():
        terminalreporter.write_line(line)
