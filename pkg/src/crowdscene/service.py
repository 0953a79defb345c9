"""Headless inference service.

``GET /health`` reports the loaded frameworks; ``POST /classify`` takes a WAV
upload (multipart field ``file``) or a server-side ``path`` form field and
returns fused class probabilities for every consecutive 10-second segment.
"""

import io
import threading
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from fastapi import FastAPI, File, Form, HTTPException, Request, UploadFile

from crowdscene import dsp, fusion
from crowdscene.manifest import CLASS_NAMES, SEGMENT_SECONDS

MAX_UPLOAD_BYTES = 100 << 20


@dataclass(frozen=True)
class Snapshot:
    frameworks: tuple
    scheme: str


class ClassifierService:
    """Stateless classification over a read-only model snapshot.

    :meth:`reload` swaps the snapshot atomically; a request in flight keeps the
    snapshot it started with.
    """

    def __init__(self, frameworks, scheme="prod", cfg=dsp.DspConfig()):
        self._lock = threading.Lock()
        self.cfg = cfg
        self._snapshot = None
        self.reload(frameworks, scheme)

    def reload(self, frameworks, scheme=None):
        frameworks = tuple(frameworks)
        if not frameworks:
            raise ValueError("the service needs at least one framework")
        if any(f.kind == "frames" for f in frameworks):
            raise ValueError("the service classifies audio; visual frameworks are CLI-only")
        scheme = (scheme or self._snapshot.scheme).lower()
        if scheme not in fusion.SCHEMES:
            raise ValueError(f"unknown fusion scheme {scheme!r}")
        with self._lock:
            self._snapshot = Snapshot(frameworks, scheme)

    @property
    def snapshot(self):
        with self._lock:
            return self._snapshot

    def metadata(self, snap=None):
        snap = snap or self.snapshot
        return {"frameworks": [f.name for f in snap.frameworks], "fusion": snap.scheme}

    def classify(self, pcm):
        snap = self.snapshot
        pcm = dsp.resample(pcm, self.cfg.sample_rate)
        seg_len = int(round(SEGMENT_SECONDS * self.cfg.sample_rate))
        count = len(pcm.samples) // seg_len
        segments = []
        for k in range(count):
            chunk = dsp.PcmBuffer(pcm.samples[k * seg_len:(k + 1) * seg_len], pcm.sample_rate)
            stack = np.stack([f.predict_pcm(chunk, self.cfg) for f in snap.frameworks])
            prob = fusion.fuse_vectors(stack, snap.scheme)
            pred = fusion.SegmentPrediction(str(k), prob, snap.scheme)
            segments.append({
                "segment_index": k,
                "start_s": k * SEGMENT_SECONDS,
                "probs": dict(zip(CLASS_NAMES, map(float, prob))),
                "predicted": pred.label.slug,
                "valid_distribution": pred.valid,
            })
        return {"segments": segments, "model": self.metadata(snap)}


def create_app(frameworks, scheme="prod", max_upload_bytes=MAX_UPLOAD_BYTES, cfg=dsp.DspConfig()):
    service = ClassifierService(frameworks, scheme, cfg)
    app = FastAPI(title="crowdscene", version="0.1.0")
    app.state.service = service

    @app.get("/health")
    def health():
        return {"status": "ok", "model": service.metadata()}

    @app.post("/classify")
    def classify(request: Request, file: UploadFile = File(None), path: str = Form(None)):
        declared = request.headers.get("content-length")
        if declared is not None and declared.isdigit() and int(declared) > max_upload_bytes:
            raise HTTPException(413, "upload exceeds the size limit")
        if file is not None:
            data = file.file.read(max_upload_bytes + 1)
            if len(data) > max_upload_bytes:
                raise HTTPException(413, "upload exceeds the size limit")
            source = io.BytesIO(data)
        elif path:
            p = Path(path)
            if not p.is_file():
                raise HTTPException(400, f"no such file: {path}")
            if p.stat().st_size > max_upload_bytes:
                raise HTTPException(413, "file exceeds the size limit")
            source = p
        else:
            raise HTTPException(400, "send a WAV as multipart field 'file' or a 'path' form field")
        try:
            pcm = dsp.read_wav(source)
        except Exception as exc:
            raise HTTPException(400, f"undecodable audio: {exc}") from None
        if pcm.duration < SEGMENT_SECONDS:
            raise HTTPException(422, f"audio is {pcm.duration:.2f} s; at least 10 s is required")
        try:
            return service.classify(pcm)
        except Exception as exc:
            raise HTTPException(500, f"inference failed: {type(exc).__name__}: {exc}") from None

    return app
