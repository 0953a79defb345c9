import sys
import textwrap
import warnings

import numpy as np
import pytest

from conftest import records_for
from crowdscene.dsp import write_wav
from crowdscene.manifest import (DatasetManifest, DecoderFailure, EmptyManifest, ParseError,
                                 SceneLabel, SegmentRecord, ShortVideo, Split, SplitViolation,
                                 ingest_media, load_manifest, save_manifest, validate_split)

# per-class (Train, Test) segment counts of the original corpus
CORPUS_COUNTS = {
    SceneLabel.RIOT: (1429, 757),
    SceneLabel.NOISE_STREET: (1430, 652),
    SceneLabel.FIREWORK_EVENT: (1406, 615),
    SceneLabel.MUSIC_EVENT: (1367, 727),
    SceneLabel.SPORT_ATMOSPHERE: (1365, 712),
}


@pytest.fixture(scope="module")
def corpus_manifest(tmp_path_factory):
    path = tmp_path_factory.mktemp("m") / "manifest.csv"
    save_manifest(DatasetManifest(records_for(CORPUS_COUNTS, segments_per_video=3)), path)
    return load_manifest(path)


def test_full_corpus_tallies(corpus_manifest):
    m = corpus_manifest
    assert len(m.split(Split.TRAIN)) == 6997
    assert len(m.split(Split.TEST)) == 3463
    assert len(m.records) == 10460
    for label, (tr, te) in CORPUS_COUNTS.items():
        assert m.count(label, "train") == tr
        assert m.count(label, "test") == te


def test_video_in_both_splits_is_rejected():
    recs = [SegmentRecord("v1", 0, 0.0, SceneLabel.RIOT, Split.TRAIN),
            SegmentRecord("v1", 1, 10.0, SceneLabel.RIOT, Split.TEST)]
    with pytest.raises(SplitViolation):
        DatasetManifest(recs)


def test_empty_files(tmp_path):
    (tmp_path / "a.csv").write_text("")
    with pytest.raises(EmptyManifest):
        load_manifest(tmp_path / "a.csv")
    (tmp_path / "b.csv").write_text("video_id,segment_index,start_s,label,split,audio_path,frames_dir\n")
    with pytest.raises(EmptyManifest):
        load_manifest(tmp_path / "b.csv")


@pytest.mark.parametrize("row", [
    "v,0,0,riot,validation,a.wav,",
    "v,0,0,jazz,train,a.wav,",
    "v,x,0,riot,train,a.wav,",
    "v,0,-5,riot,train,a.wav,",
    "v,0,0,riot,train",
])
def test_malformed_rows(tmp_path, row):
    p = tmp_path / "m.csv"
    p.write_text("video_id,segment_index,start_s,label,split,audio_path,frames_dir\n" + row + "\n")
    with pytest.raises(ParseError):
        load_manifest(p)


def test_duplicate_segment_index():
    recs = [SegmentRecord("v", 0, 0.0, SceneLabel.RIOT, Split.TRAIN)] * 2
    with pytest.raises(ParseError):
        DatasetManifest(recs)


def test_label_parsing_accepts_names_and_codes():
    assert SceneLabel.parse("Noise-Street") is SceneLabel.NOISE_STREET
    assert SceneLabel.parse("4") is SceneLabel.SPORT_ATMOSPHERE
    assert SceneLabel.parse("firework_event") is SceneLabel.FIREWORK_EVENT


def test_round_trip(tmp_path, corpus_manifest):
    save_manifest(corpus_manifest, tmp_path / "m.csv")
    again = load_manifest(tmp_path / "m.csv")
    assert again.records == corpus_manifest.records


def test_split_report_on_corpus_counts(corpus_manifest):
    report = validate_split(corpus_manifest)
    assert report.passed
    riot = report.classes[SceneLabel.RIOT]
    assert riot.train_pct == pytest.approx(65.37, abs=0.01)
    assert riot.deviation_pp < 2


def test_split_report_flags_all_train_class():
    counts = dict(CORPUS_COUNTS)
    counts[SceneLabel.MUSIC_EVENT] = (50, 0)
    report = validate_split(DatasetManifest(records_for(counts)))
    assert not report.passed
    assert report.flagged == [SceneLabel.MUSIC_EVENT]


def test_split_report_exact_target():
    report = validate_split(DatasetManifest(records_for({lbl: (67, 33) for lbl in SceneLabel})))
    assert report.passed
    assert all(c.deviation_pp == pytest.approx(0.0, abs=1e-12) for c in report.classes)


# -- ingestion with a stand-in decoder ---------------------------------------

FAKE_DECODER = textwrap.dedent("""
    import sys, wave
    import numpy as np
    src, dst = sys.argv[1], sys.argv[2]
    seconds = float(open(src).read())
    rate = 8000
    x = (np.sin(np.arange(int(seconds * rate)) * 0.1) * 10000).astype("<i2")
    with wave.open(dst, "wb") as w:
        w.setnchannels(2)
        w.setsampwidth(2)
        w.setframerate(rate)
        w.writeframes(np.repeat(x, 2).tobytes())
""")


@pytest.fixture
def decoder(tmp_path):
    script = tmp_path / "fake_decoder.py"
    script.write_text(FAKE_DECODER)
    return f"{sys.executable} {script} {{input}} {{output}}"


def _video(tmp_path, seconds, name="clip"):
    p = tmp_path / f"{name}.mp4"
    p.write_text(str(seconds))
    return p


def test_ingest_drops_trailing_remainder(tmp_path, decoder):
    recs = ingest_media(_video(tmp_path, 29), tmp_path / "out", decoder)
    assert [r.segment_index for r in recs] == [0, 1]
    assert [r.start_s for r in recs] == [0.0, 10.0]
    from crowdscene.dsp import read_wav
    pcm = read_wav(recs[1].audio_path)
    assert len(pcm.samples) == 80000


def test_ingest_exact_ten_seconds(tmp_path, decoder):
    assert len(ingest_media(_video(tmp_path, 10.0), tmp_path / "out", decoder)) == 1


def test_ingest_short_video_warns(tmp_path, decoder):
    with pytest.warns(ShortVideo):
        assert ingest_media(_video(tmp_path, 9.5), tmp_path / "out", decoder) == []


def test_ingest_decoder_failure(tmp_path):
    fail = f"{sys.executable} -c 'import sys; sys.exit(3)' {{input}} {{output}}"
    with pytest.raises(DecoderFailure):
        ingest_media(_video(tmp_path, 20), tmp_path / "out", fail)
    with pytest.raises(DecoderFailure):
        ingest_media(_video(tmp_path, 20), tmp_path / "out", "no-such-decoder-binary {input} {output}")


def test_ingest_unreadable_output(tmp_path):
    junk = f"{sys.executable} -c 'import sys; open(sys.argv[2], \"w\").write(\"junk\")' {{input}} {{output}}"
    with pytest.raises(DecoderFailure):
        ingest_media(_video(tmp_path, 20), tmp_path / "out", junk)
