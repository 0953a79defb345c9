"""Feature extraction to CSTF files and segment-level prediction with a trained model."""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from crowdscene import cstf, dsp
from crowdscene.fusion import SegmentPrediction, aggregate_segment
from crowdscene.nn import vgg

FEATURE_KINDS = dsp.KINDS + ("frames",)


class MissingFeatures(KeyError):
    pass


def segment_features(record, manifest, kind, cfg=dsp.DspConfig()):
    """(640, 128) log spectrogram, or (n, 128, 128, 3) frames for ``kind == "frames"``."""
    if kind == "frames":
        if not record.frames_dir:
            raise MissingFeatures(f"{record.segment_id} has no frames_dir")
        return dsp.load_frames(manifest.resolve(record.frames_dir))
    if not record.audio_path:
        raise MissingFeatures(f"{record.segment_id} has no audio_path")
    pcm = dsp.read_wav(manifest.resolve(record.audio_path))
    return dsp.spectrogram(kind, pcm, cfg).values


def _extract_one(args):
    record, manifest, kind, cfg, out_dir = args
    path = Path(out_dir) / f"{record.segment_id}.cstf"
    cstf.write_tensor(path, segment_features(record, manifest, kind, cfg))
    return path


def extract_features(manifest, kind, out_dir, split=None, cfg=dsp.DspConfig(), workers=1):
    """Write one ``<segment_id>.cstf`` per segment; returns the written paths."""
    if kind not in FEATURE_KINDS:
        raise ValueError(f"unknown feature kind {kind!r}; choose from {FEATURE_KINDS}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = manifest.records if split is None else manifest.split(split)
    jobs = [(r, manifest, kind, cfg, out_dir) for r in records]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            return list(pool.map(_extract_one, jobs))
    return [_extract_one(j) for j in jobs]


class FeatureStore:
    """Read-only mapping ``segment_id -> features`` over a directory of CSTF files."""

    def __init__(self, directory):
        self.directory = Path(directory)

    def path(self, segment_id):
        return self.directory / f"{segment_id}.cstf"

    def __contains__(self, segment_id):
        return self.path(segment_id).exists()

    def __getitem__(self, segment_id):
        p = self.path(segment_id)
        if not p.exists():
            raise MissingFeatures(f"no features for {segment_id} in {self.directory}")
        return cstf.read_tensor(p)


def model_inputs(features, kind, standardizer=None):
    """Network inputs for one segment: (5, 128, 128, 1) patches or (n, 128, 128, 3) frames."""
    features = np.asarray(features, dtype=np.float32)
    if kind == "frames":
        if features.ndim == 3:
            features = features[None]
        return features
    if standardizer is not None:
        features = standardizer(features)
    return dsp.patch_array(features)[..., None]


@dataclass
class Framework:
    """A trained model with its front end: one input to late fusion."""

    name: str
    kind: str
    model: vgg.Vgg15Params
    standardizer: dsp.Standardizer = None

    def segment_prob(self, features):
        x = model_inputs(features, self.kind, self.standardizer)
        return aggregate_segment(vgg.forward(self.model, x))

    def predict(self, segment_ids, store):
        return [SegmentPrediction(sid, self.segment_prob(store[sid]), self.name)
                for sid in segment_ids]

    def predict_pcm(self, pcm, cfg=dsp.DspConfig()):
        if self.kind == "frames":
            raise ValueError("a visual framework cannot classify audio")
        return self.segment_prob(dsp.spectrogram(self.kind, pcm, cfg).values)
