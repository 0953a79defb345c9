"""Segment accuracy (100 * M / N) and the 5x5 confusion matrix."""

import json
from dataclasses import dataclass

import numpy as np

from crowdscene.manifest import CLASS_NAMES, SceneLabel, Split

N_CLASSES = len(SceneLabel)


class CoverageMismatch(ValueError):
    pass


@dataclass
class EvalReport:
    correct: int  # M
    total: int  # N
    confusion: np.ndarray  # rows = truth, columns = prediction

    @property
    def accuracy_pct(self):
        return 100.0 * self.correct / self.total if self.total else 0.0

    @property
    def per_class_accuracy(self):
        rows = self.confusion.sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(rows > 0, np.diag(self.confusion) / np.maximum(rows, 1), np.nan)

    def to_dict(self):
        return {
            "accuracy_pct": self.accuracy_pct,
            "M": int(self.correct),
            "N": int(self.total),
            "confusion": self.confusion.astype(int).tolist(),
            "per_class_accuracy": [None if np.isnan(v) else float(v)
                                   for v in self.per_class_accuracy],
        }

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)

    def render_text(self):
        width = max(len(n) for n in CLASS_NAMES) + 2
        lines = [f"Acc. {self.accuracy_pct:.1f}%  (M={self.correct}, N={self.total})", ""]
        lines.append("truth \\ pred".ljust(width) + "".join(f"{i:>8d}" for i in range(N_CLASSES))
                     + "    acc%")
        for i, name in enumerate(CLASS_NAMES):
            acc = self.per_class_accuracy[i]
            acc_txt = "     n/a" if np.isnan(acc) else f"{100 * acc:8.1f}"
            lines.append(f"{i} {name}".ljust(width)
                         + "".join(f"{v:8d}" for v in self.confusion[i]) + acc_txt)
        return "\n".join(lines)


def confusion_matrix(truth, predicted, n=N_CLASSES):
    m = np.zeros((n, n), dtype=np.int64)
    np.add.at(m, (np.asarray(truth, int), np.asarray(predicted, int)), 1)
    return m


def report_from_labels(truth, predicted):
    cm = confusion_matrix(truth, predicted)
    return EvalReport(int(np.trace(cm)), int(cm.sum()), cm)


def evaluate(predictions, manifest, split="test"):
    """Score segment predictions against the manifest labels of one split.

    ``predictions`` must cover exactly the split's segment ids.
    """
    split = Split.parse(split)
    truth = {r.segment_id: r.label for r in manifest.split(split)}
    pred = {p.segment_id: p.label for p in predictions}
    if len(pred) != len(predictions):
        raise CoverageMismatch("duplicate segment ids among predictions")
    missing, extra = set(truth) - set(pred), set(pred) - set(truth)
    if missing or extra:
        raise CoverageMismatch(
            f"{len(missing)} {split.value} segments without prediction, "
            f"{len(extra)} predictions for unknown segments "
            f"(e.g. {sorted(missing or extra)[:3]})")
    ids = sorted(truth)
    return report_from_labels([truth[i] for i in ids], [pred[i] for i in ids])


def plot_per_class(report, path, title="Per-class accuracy"):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 3.5))
    vals = np.nan_to_num(report.per_class_accuracy) * 100.0
    ax.bar(range(N_CLASSES), vals, color="tab:blue")
    ax.set_xticks(range(N_CLASSES), CLASS_NAMES, rotation=20, fontsize=8)
    ax.set_ylim(0, 100)
    ax.set_ylabel("Acc. %")
    ax.set_title(f"{title} (overall {report.accuracy_pct:.1f}%)")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def plot_segment_probs(predictions, path, title="Segment probabilities"):
    """Grouped bars of class probabilities, one group per segment."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    probs = np.array([p.prob for p in predictions])
    fig, ax = plt.subplots(figsize=(max(4, 0.6 * len(probs) + 2), 3.5))
    width = 0.8 / N_CLASSES
    for c, name in enumerate(CLASS_NAMES):
        ax.bar(np.arange(len(probs)) + c * width, probs[:, c], width, label=name)
    ax.set_xticks(np.arange(len(probs)) + 0.4, [p.segment_id for p in predictions],
                  rotation=60, fontsize=6)
    ax.set_ylabel("probability")
    ax.set_title(title)
    ax.legend(fontsize=6)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
