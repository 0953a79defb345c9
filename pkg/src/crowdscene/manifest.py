"""Dataset data model: scene labels, 10-second segment records and manifests.

A manifest is a CSV with the header::

    video_id,segment_index,start_s,label,split,audio_path,frames_dir

Relative media paths are resolved against the manifest's directory.
"""

import csv
import enum
import math
import shlex
import subprocess
import tempfile
import warnings
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SEGMENT_SECONDS = 10.0
MANIFEST_HEADER = ("video_id", "segment_index", "start_s", "label", "split",
                   "audio_path", "frames_dir")
DEFAULT_DECODER = ("ffmpeg -nostdin -loglevel error -y -ss {start} -t {duration} "
                   "-i {input} -vn -ac 1 -ar 32000 -acodec pcm_s16le {output}")


class SceneLabel(enum.IntEnum):
    RIOT = 0
    NOISE_STREET = 1
    FIREWORK_EVENT = 2
    MUSIC_EVENT = 3
    SPORT_ATMOSPHERE = 4

    @property
    def slug(self):
        return self.name.lower()

    @classmethod
    def parse(cls, text):
        """Accepts a member, its integer code, or a name in any case with - or _."""
        if isinstance(text, (int, np.integer)):
            return cls(int(text))
        key = str(text).strip()
        if key.isdigit():
            return cls(int(key))
        try:
            return cls[key.upper().replace("-", "_")]
        except KeyError:
            raise ValueError(f"unknown scene label {text!r}") from None


CLASS_NAMES = tuple(lbl.slug for lbl in SceneLabel)


class Split(str, enum.Enum):
    TRAIN = "train"
    TEST = "test"

    @classmethod
    def parse(cls, text):
        if isinstance(text, cls):
            return text
        try:
            return cls(str(text).strip().lower())
        except ValueError:
            raise ValueError(f"unknown split {text!r}") from None


class ManifestError(Exception):
    pass


class ParseError(ManifestError):
    pass


class SplitViolation(ManifestError):
    pass


class EmptyManifest(ManifestError):
    pass


class DecoderFailure(RuntimeError):
    pass


class ShortVideo(UserWarning):
    pass


@dataclass(frozen=True)
class SegmentRecord:
    video_id: str
    segment_index: int
    start_s: float
    label: SceneLabel = None
    split: Split = None
    audio_path: str = ""
    frames_dir: str = ""
    duration_s: float = SEGMENT_SECONDS

    def __post_init__(self):
        if self.segment_index < 0:
            raise ValueError("segment_index must be non-negative")
        if self.duration_s != SEGMENT_SECONDS:
            raise ValueError("segments are fixed at 10 seconds")

    @property
    def segment_id(self):
        return f"{self.video_id}-{self.segment_index:03d}"


def _tally(records):
    return Counter((r.label, r.split) for r in records)


@dataclass
class DatasetManifest:
    records: list
    base_dir: Path = field(default_factory=Path)
    counts: Counter = None

    def __post_init__(self):
        if self.counts is None:
            self.counts = _tally(self.records)
        check_invariants(self)

    def split(self, split):
        split = Split.parse(split) if not isinstance(split, Split) else split
        return [r for r in self.records if r.split is split]

    def by_id(self):
        return {r.segment_id: r for r in self.records}

    def resolve(self, path):
        p = Path(path)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def count(self, label, split):
        return self.counts.get((SceneLabel(label), Split.parse(split)), 0)


def check_invariants(manifest):
    train = {r.video_id for r in manifest.records if r.split is Split.TRAIN}
    test = {r.video_id for r in manifest.records if r.split is Split.TEST}
    both = sorted(train & test)
    if both:
        raise SplitViolation(f"videos present in both Train and Test: {', '.join(both[:5])}")
    seen = set()
    for r in manifest.records:
        key = (r.video_id, r.segment_index)
        if key in seen:
            raise ParseError(f"duplicate segment_index {r.segment_index} for video {r.video_id}")
        seen.add(key)
    if _tally(manifest.records) != manifest.counts:
        raise ManifestError("stored per-(label, split) tally does not match the records")


def _parse_row(row, lineno):
    try:
        missing = [k for k in MANIFEST_HEADER[:5] if not (row.get(k) or "").strip()]
        if missing:
            raise ValueError(f"empty field(s): {', '.join(missing)}")
        index = int(row["segment_index"])
        start = float(row["start_s"])
        if not math.isfinite(start) or start < 0:
            raise ValueError("start_s must be a non-negative number")
        return SegmentRecord(
            video_id=row["video_id"].strip(),
            segment_index=index,
            start_s=start,
            label=SceneLabel.parse(row["label"]),
            split=Split.parse(row["split"]),
            audio_path=(row.get("audio_path") or "").strip(),
            frames_dir=(row.get("frames_dir") or "").strip(),
        )
    except (ValueError, TypeError) as exc:
        raise ParseError(f"line {lineno}: {exc}") from None


def load_manifest(path):
    """Read and validate a manifest CSV."""
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise EmptyManifest(f"{path} is empty")
        if tuple(f.strip() for f in reader.fieldnames) != MANIFEST_HEADER:
            raise ParseError(f"bad header {reader.fieldnames}; expected {','.join(MANIFEST_HEADER)}")
        records = []
        for lineno, row in enumerate(reader, start=2):
            if None in row or any(v is None for v in row.values()):
                raise ParseError(f"line {lineno}: wrong number of fields")
            records.append(_parse_row(row, lineno))
    if not records:
        raise EmptyManifest(f"{path} has no segment rows")
    return DatasetManifest(records, base_dir=path.parent)


def save_manifest(manifest, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_HEADER)
        for r in manifest.records:
            w.writerow([r.video_id, r.segment_index, f"{r.start_s:g}", r.label.slug,
                        r.split.value, r.audio_path, r.frames_dir])


@dataclass
class ClassSplit:
    label: SceneLabel
    train: int
    test: int
    train_pct: float
    deviation_pp: float
    flagged: bool


@dataclass
class SplitReport:
    target_train_pct: float
    tolerance_pp: float
    classes: list

    @property
    def passed(self):
        return not any(c.flagged for c in self.classes)

    @property
    def flagged(self):
        return [c.label for c in self.classes if c.flagged]


def validate_split(manifest, target_train_pct=67.0, tolerance_pp=10.0):
    """Per-class Train share against the 67:33 target. Report only."""
    rows = []
    for label in SceneLabel:
        tr, te = manifest.count(label, Split.TRAIN), manifest.count(label, Split.TEST)
        total = tr + te
        pct = 100.0 * tr / total if total else float("nan")
        dev = abs(pct - target_train_pct) if total else float("inf")
        rows.append(ClassSplit(label, tr, te, pct, dev, bool(dev > tolerance_pp)))
    return SplitReport(target_train_pct, tolerance_pp, rows)


def _run_decoder(template, **fields):
    argv = shlex.split(template.format(**{k: shlex.quote(str(v)) for k, v in fields.items()}))
    try:
        proc = subprocess.run(argv, capture_output=True, text=True)
    except OSError as exc:
        raise DecoderFailure(f"cannot run decoder {argv[0]!r}: {exc}") from None
    if proc.returncode != 0:
        raise DecoderFailure(f"decoder exited with {proc.returncode}: {proc.stderr.strip()[:500]}")


def ingest_media(video_path, out_dir, decoder_cmd_template=DEFAULT_DECODER,
                 frames_cmd_template=None, max_seconds=86400):
    """Cut a media file into consecutive 10-second mono WAV segments.

    The decoder template is formatted with ``{input}``, ``{output}``, ``{start}``
    and ``{duration}`` and must write a PCM WAV. The whole track is decoded once
    to learn its length, then sliced here; a trailing remainder under 10 s is
    dropped. With ``frames_cmd_template`` (same placeholders, ``{output}`` being
    a directory) a frame directory is produced per segment.

    Returns unlabeled :class:`SegmentRecord` objects.
    """
    from crowdscene.dsp import read_wav, write_wav

    video_path, out_dir = Path(video_path), Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    video_id = video_path.stem
    with tempfile.TemporaryDirectory() as tmp:
        full = Path(tmp) / "full.wav"
        _run_decoder(decoder_cmd_template, input=video_path, output=full,
                     start=0, duration=max_seconds)
        if not full.exists():
            raise DecoderFailure("decoder reported success but wrote no output")
        try:
            pcm = read_wav(full)
        except Exception as exc:
            raise DecoderFailure(f"decoder output is not a readable WAV: {exc}") from None
    seg_len = int(round(SEGMENT_SECONDS * pcm.sample_rate))
    count = len(pcm.samples) // seg_len
    if count == 0:
        warnings.warn(f"{video_path} is shorter than 10 s; no segments produced", ShortVideo)
        return []
    records = []
    for k in range(count):
        chunk = pcm.samples[k * seg_len:(k + 1) * seg_len]
        wav = out_dir / f"{video_id}-{k:03d}.wav"
        write_wav(wav, np.asarray(chunk), pcm.sample_rate)
        frames_dir = ""
        if frames_cmd_template:
            fdir = out_dir / f"{video_id}-{k:03d}_frames"
            fdir.mkdir(exist_ok=True)
            _run_decoder(frames_cmd_template, input=video_path, output=fdir,
                         start=k * SEGMENT_SECONDS, duration=SEGMENT_SECONDS)
            frames_dir = str(fdir)
        records.append(SegmentRecord(video_id, k, k * SEGMENT_SECONDS,
                                     audio_path=str(wav), frames_dir=frames_dir))
    return records
