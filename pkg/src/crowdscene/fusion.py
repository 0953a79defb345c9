"""Segment-level probability averaging and late fusion of several frameworks.

Probability CSV interchange format (one row per segment and framework)::

    segment_id,framework,p_riot,p_noise_street,p_firework_event,p_music_event,p_sport_atmosphere
"""

import csv
from dataclasses import dataclass

import numpy as np

from crowdscene.manifest import CLASS_NAMES, SceneLabel

SCHEMES = ("mean", "prod", "max")
PROB_COLUMNS = tuple(f"p_{name}" for name in CLASS_NAMES)
CSV_HEADER = ("segment_id", "framework") + PROB_COLUMNS
PROB_TOL = 1e-5


class FusionError(ValueError):
    pass


class EmptyList(FusionError):
    pass


class SegmentSetMismatch(FusionError):
    pass


class EmptyFrameworks(FusionError):
    pass


def is_prob_vector(p, tol=PROB_TOL):
    p = np.asarray(p, dtype=np.float64)
    return bool(p.shape == (len(SceneLabel),) and np.all(p >= 0) and abs(p.sum() - 1.0) <= tol)


def predict_label(prob):
    """Index of the largest probability; ties go to the lowest class code."""
    return SceneLabel(int(np.argmax(np.asarray(prob, dtype=np.float64))))


@dataclass
class SegmentPrediction:
    segment_id: str
    prob: np.ndarray
    source: str = ""
    label: SceneLabel = None
    valid: bool = None

    def __post_init__(self):
        self.prob = np.asarray(self.prob, dtype=np.float64)
        if self.label is None:
            self.label = predict_label(self.prob)
        if self.valid is None:
            self.valid = is_prob_vector(self.prob)


def aggregate_segment(patch_probs):
    """Mean of the per-patch (or per-frame) probability vectors."""
    p = np.asarray(patch_probs, dtype=np.float64)
    if p.size == 0:
        raise EmptyList("no patch probabilities to aggregate")
    return p.reshape(-1, p.shape[-1]).mean(axis=0)


@dataclass
class FusionInput:
    """Per-framework predictions over one common segment set."""

    frameworks: dict  # framework name -> {segment_id: prob vector}

    def __post_init__(self):
        if not self.frameworks:
            raise EmptyFrameworks("fusion needs at least one framework")
        sets = {name: set(preds) for name, preds in self.frameworks.items()}
        first_name, first = next(iter(sets.items()))
        for name, ids in sets.items():
            if ids != first:
                diff = sorted(ids ^ first)[:3]
                raise SegmentSetMismatch(
                    f"frameworks {first_name!r} and {name!r} cover different segments, e.g. {diff}")

    @classmethod
    def from_predictions(cls, per_framework):
        """Build from ``{name: [SegmentPrediction, ...]}``."""
        return cls({name: {p.segment_id: p.prob for p in preds}
                    for name, preds in per_framework.items()})

    @property
    def segment_ids(self):
        return sorted(next(iter(self.frameworks.values())))

    @property
    def size(self):
        return len(self.frameworks)


def fuse_vectors(stack, scheme):
    """Fuse an (S, C) stack of segment probabilities.

    MEAN averages, PROD is ``(1/S) * prod_s p_s`` computed in log space, MAX
    takes the elementwise maximum. PROD and MAX are not renormalized.
    """
    stack = np.asarray(stack, dtype=np.float64)
    s = stack.shape[0]
    if scheme == "mean":
        return stack.mean(axis=0)
    if scheme == "prod":
        with np.errstate(divide="ignore"):
            return np.exp(np.log(stack).sum(axis=0)) / s
    if scheme == "max":
        return stack.max(axis=0)
    raise FusionError(f"unknown fusion scheme {scheme!r}; choose from {SCHEMES}")


def fuse(inputs, scheme):
    """Fused :class:`SegmentPrediction` per segment, sorted by segment id."""
    if not isinstance(inputs, FusionInput):
        inputs = FusionInput(inputs)
    scheme = scheme.lower()
    if scheme not in SCHEMES:
        raise FusionError(f"unknown fusion scheme {scheme!r}; choose from {SCHEMES}")
    names = list(inputs.frameworks)
    source = f"{scheme}({'+'.join(names)})" if len(names) > 1 else names[0]
    out = []
    for seg in inputs.segment_ids:
        stack = np.stack([inputs.frameworks[n][seg] for n in names])
        out.append(SegmentPrediction(seg, fuse_vectors(stack, scheme), source))
    return out


def write_prob_csv(path_or_stream, predictions):
    if hasattr(path_or_stream, "write"):
        _write_rows(path_or_stream, predictions)
        return
    with open(path_or_stream, "w", newline="") as fh:
        _write_rows(fh, predictions)


def _write_rows(fh, predictions):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for p in predictions:
        w.writerow([p.segment_id, p.source] + [repr(float(v)) for v in p.prob])


def read_prob_csv(path):
    """``{framework: [SegmentPrediction, ...]}`` from a probability CSV."""
    out = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_HEADER:
            raise FusionError(f"{path}: bad header {reader.fieldnames}")
        for lineno, row in enumerate(reader, start=2):
            try:
                prob = [float(row[c]) for c in PROB_COLUMNS]
            except (TypeError, ValueError):
                raise FusionError(f"{path}:{lineno}: malformed probability row") from None
            out.setdefault(row["framework"], []).append(
                SegmentPrediction(row["segment_id"], prob, row["framework"]))
    if not out:
        raise EmptyFrameworks(f"{path} holds no predictions")
    return out
