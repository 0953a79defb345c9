"""Audio front ends: resampling, MEL / CQT / gammatone spectrograms and patch tiling.

The canonical geometry is 10 s of 32 kHz audio -> 640 frames x 128 bins, i.e. a
hop of 500 samples. Frame ``t`` summarizes samples centred on
``t * hop + hop // 2``, so a signal of ``n`` samples always gives ``n // hop``
frames. Values are natural-log energies ``log(E + 1e-10)``.
"""

import functools
import wave
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy import fft as sp_fft
from scipy import signal, sparse

KINDS = ("mel", "cqt", "gam")
PATCH = 128


class DspError(ValueError):
    pass


class EmptyInput(DspError):
    pass


class WrongRate(DspError):
    pass


class TooShort(DspError):
    pass


class BadBins(DspError):
    pass


@dataclass
class PcmBuffer:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise DspError("PCM buffers are mono")
        if self.sample_rate <= 0:
            raise DspError("sample_rate must be positive")
        if not np.all(np.isfinite(self.samples)):
            raise DspError("PCM samples must be finite")

    @property
    def duration(self):
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class DspConfig:
    sample_rate: int = 32000
    hop: int = 500
    win_length: int = 2560
    n_fft: int = 4096
    log_eps: float = 1e-10
    # mel
    n_mels: int = 128
    mel_fmin: float = 20.0
    mel_fmax: float = 16000.0
    # constant-Q
    cqt_fmin: float = 32.7
    bins_per_octave: int = 16
    cqt_bins: int = 128
    # gammatone
    gam_channels: int = 128
    gam_fmin: float = 50.0
    gam_fmax: float = 16000.0


@dataclass
class Spectrogram:
    kind: str
    values: np.ndarray  # (frames, bins), time-major
    hop_samples: int
    sample_rate: int

    @property
    def frames(self):
        return self.values.shape[0]

    @property
    def bins(self):
        return self.values.shape[1]


@dataclass
class Patch:
    values: np.ndarray
    source: tuple = ("", 0)
    channels: int = 1


# -- audio I/O ---------------------------------------------------------------

def read_wav(path):
    """PCM WAV (8/16/32-bit integer) -> mono :class:`PcmBuffer` in [-1, 1].

    ``path`` may also be a binary file object. Multi-channel audio is downmixed
    by averaging channels.
    """
    with wave.open(path if hasattr(path, "read") else str(path), "rb") as w:
        n_ch, width, rate, n = w.getnchannels(), w.getsampwidth(), w.getframerate(), w.getnframes()
        raw = w.readframes(n)
    if width == 1:
        data = (np.frombuffer(raw, np.uint8).astype(np.float64) - 128.0) / 128.0
    elif width == 2:
        data = np.frombuffer(raw, "<i2").astype(np.float64) / 32768.0
    elif width == 4:
        data = np.frombuffer(raw, "<i4").astype(np.float64) / 2147483648.0
    else:
        raise DspError(f"unsupported sample width {width}")
    data = data.reshape(-1, n_ch).mean(axis=1)
    return PcmBuffer(data, rate)


def write_wav(path, samples, sample_rate):
    """Write mono 16-bit PCM to a path or binary file object; samples are clipped to [-1, 1]."""
    x = np.clip(np.asarray(samples, dtype=np.float64), -1.0, 1.0)
    pcm = np.round(x * 32767.0).astype("<i2")
    with wave.open(path if hasattr(path, "write") else str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(int(sample_rate))
        w.writeframes(pcm.tobytes())


# -- resampling --------------------------------------------------------------

@functools.lru_cache(maxsize=16)
def _polyphase_filter(up, down, half_taps=10, beta=5.0):
    # same Kaiser low-pass scipy designs by default, but with every polyphase
    # branch scaled to unit DC gain so constant input stays exactly constant
    rate = max(up, down)
    h = signal.firwin(2 * half_taps * rate + 1, 1.0 / rate, window=("kaiser", beta))
    for p in range(up):
        h[p::up] /= h[p::up].sum() * up
    h.flags.writeable = False
    return h


def resample(pcm, target_rate):
    """Polyphase windowed-sinc resampling to ``target_rate``.

    Output length is ``round(len * target / source)``; same-rate input is
    returned unchanged.
    """
    if target_rate <= 0:
        raise DspError("target_rate must be positive")
    n = len(pcm.samples)
    if n == 0:
        raise EmptyInput("cannot resample an empty buffer")
    if pcm.sample_rate == target_rate:
        return pcm
    ratio = Fraction(int(target_rate), int(pcm.sample_rate))
    up, down = ratio.numerator, ratio.denominator
    y = signal.resample_poly(pcm.samples, up, down, window=_polyphase_filter(up, down),
                             padtype="line")
    want = int(round(n * target_rate / pcm.sample_rate))
    if len(y) >= want:
        y = y[:want]
    else:
        y = np.pad(y, (0, want - len(y)), mode="edge")
    return PcmBuffer(y, int(target_rate))


# -- shared helpers ----------------------------------------------------------

def _check_pcm(pcm, cfg):
    if pcm.sample_rate != cfg.sample_rate:
        raise WrongRate(f"expected {cfg.sample_rate} Hz audio, got {pcm.sample_rate} Hz")
    if len(pcm.samples) < cfg.hop:
        raise TooShort("input shorter than one hop")


def _frame_centers(n, hop):
    return np.arange(n // hop) * hop + hop // 2


def _frames(x, centers, length):
    """(len(centers), length) matrix of zero-padded windows centred on ``centers``."""
    half = length // 2
    xp = np.pad(x, (half, length - half))
    idx = centers[:, None] + np.arange(length)[None, :]
    return xp[idx]


def _log(energy, cfg):
    return np.log(energy + cfg.log_eps).astype(np.float32)


# -- MEL ---------------------------------------------------------------------

def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(cfg=DspConfig()):
    """(n_mels, n_fft//2 + 1) triangular filters, each scaled to unit area in Hz."""
    fft_freqs = np.arange(cfg.n_fft // 2 + 1) * cfg.sample_rate / cfg.n_fft
    edges = mel_to_hz(np.linspace(hz_to_mel(cfg.mel_fmin), hz_to_mel(cfg.mel_fmax), cfg.n_mels + 2))
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    up = (fft_freqs - lo) / (mid - lo)
    down = (hi - fft_freqs) / (hi - mid)
    fb = np.maximum(0.0, np.minimum(up, down))
    fb *= (2.0 / (hi - lo))
    for k in np.flatnonzero(fb.max(axis=1) <= 0):
        # narrower than one FFT bin: put the filter on its nearest bin
        fb[k, np.argmin(np.abs(fft_freqs - mid[k, 0]))] = 2.0 / (hi[k, 0] - lo[k, 0])
    return fb


def power_spectrogram(pcm, cfg=DspConfig()):
    frames = _frames(pcm.samples, _frame_centers(len(pcm.samples), cfg.hop), cfg.win_length)
    frames = frames * signal.get_window("hann", cfg.win_length, fftbins=True)
    return np.abs(np.fft.rfft(frames, n=cfg.n_fft, axis=1)) ** 2


def mel_spectrogram(pcm, cfg=DspConfig()):
    _check_pcm(pcm, cfg)
    energy = power_spectrogram(pcm, cfg) @ mel_filterbank(cfg).T
    return Spectrogram("mel", _log(energy, cfg), cfg.hop, cfg.sample_rate)


# -- CQT ---------------------------------------------------------------------

def cqt_frequencies(cfg=DspConfig()):
    return cfg.cqt_fmin * 2.0 ** (np.arange(cfg.cqt_bins) / cfg.bins_per_octave)


def _cqt_kernel(cfg):
    """Sparse spectral kernel: row k is conj(FFT(windowed complex tone at f_k)) / n_fft."""
    freqs = cqt_frequencies(cfg)
    q = 1.0 / (2.0 ** (1.0 / cfg.bins_per_octave) - 1.0)
    lengths = np.ceil(q * cfg.sample_rate / freqs).astype(int)
    n_fft = int(2 ** np.ceil(np.log2(lengths.max())))
    rows = []
    for f, n in zip(freqs, lengths):
        t = np.arange(n) - n // 2
        atom = np.hanning(n) * np.exp(2j * np.pi * f * t / cfg.sample_rate) / n
        buf = np.zeros(n_fft, dtype=np.complex64)
        start = n_fft // 2 - n // 2
        buf[start:start + n] = atom
        spec = sp_fft.fft(buf)[: n_fft // 2 + 1]
        spec[np.abs(spec) < 0.0054 * np.abs(spec).max()] = 0.0
        rows.append(np.conj(spec) / n_fft)
    return sparse.csr_matrix(np.array(rows), dtype=np.complex64), n_fft


_CQT_CACHE = {}


def cqt_spectrogram(pcm, cfg=DspConfig(), chunk=64):
    """Constant-Q power at every hop centre, log-compressed.

    Runs in single precision, which is what the float32 features keep anyway.
    """
    _check_pcm(pcm, cfg)
    if cfg not in _CQT_CACHE:
        _CQT_CACHE[cfg] = _cqt_kernel(cfg)
    kernel, n_fft = _CQT_CACHE[cfg]
    centers = _frame_centers(len(pcm.samples), cfg.hop)
    out = np.empty((len(centers), cfg.cqt_bins))
    x = pcm.samples.astype(np.float32)
    for s in range(0, len(centers), chunk):
        spec = sp_fft.rfft(_frames(x, centers[s:s + chunk], n_fft), axis=1)
        out[s:s + chunk] = np.abs(kernel.dot(spec.T).T) ** 2
    return Spectrogram("cqt", _log(out, cfg), cfg.hop, cfg.sample_rate)


# -- gammatone ---------------------------------------------------------------

def erb_bandwidth(f):
    """Equivalent rectangular bandwidth (Glasberg & Moore) in Hz."""
    return 24.7 + 0.107939 * np.asarray(f, dtype=np.float64)


def erb_rate(f):
    return 21.4 * np.log10(1.0 + 0.00437 * np.asarray(f, dtype=np.float64))


def erb_space(fmin, fmax, n):
    rates = np.linspace(erb_rate(fmin), erb_rate(fmax), n)
    return (10.0 ** (rates / 21.4) - 1.0) / 0.00437


def gammatone_center_frequencies(cfg=DspConfig()):
    return erb_space(cfg.gam_fmin, cfg.gam_fmax, cfg.gam_channels)


def gammatone_response(pcm, cf, sample_rate, order=4):
    """Complex output of a 4th-order all-pole gammatone filter with unit peak gain."""
    (pole,), (gain,) = _gammatone_poles([cf], sample_rate, order)
    y = gain * pcm.samples
    for _ in range(order):
        # cascaded one-pole sections; the expanded 4th-order polynomial loses precision
        y = signal.lfilter([1.0], [1.0, -pole], y)
    return y


def _gammatone_poles(cfs, sample_rate, order=4):
    b = 1.019 * erb_bandwidth(cfs)
    poles = np.exp(-2.0 * np.pi * b / sample_rate + 2j * np.pi * np.asarray(cfs) / sample_rate)
    return poles, (1.0 - np.abs(poles)) ** order


def _cascade_step(state, poles, u):
    # one sample through the cascade of one-pole sections, all channels at once
    prev = u
    for k in range(state.shape[1]):
        state[:, k] = poles * state[:, k] + prev
        prev = state[:, k]
    return state


def gammatone_block_energy(x, cfs, sample_rate, hop, order=4, block=50, chunk=640):
    """Per-hop mean |y|^2 of every gammatone channel, shape (len(x) // hop, channels).

    Same filter as :func:`gammatone_response`, evaluated block-wise for all
    channels together: within a block of ``block`` samples the output is the
    exact convolution with the impulse response (one matrix product), and the
    filter state carried between blocks accounts for all earlier input.
    """
    if hop % block:
        block = max(d for d in range(1, min(hop, 64) + 1) if hop % d == 0)
    poles, gains = _gammatone_poles(cfs, sample_rate, order)
    n_ch, L = len(poles), block
    n_frames = len(x) // hop
    n_blocks = n_frames * hop // L
    X = np.asarray(x[: n_blocks * L], dtype=np.float64).reshape(n_blocks, L)

    # impulse response states, zero-input responses and the block transition
    state = np.zeros((n_ch, order), complex)
    imp = np.empty((L, n_ch, order), complex)
    for t in range(L):
        imp[t] = _cascade_step(state, poles, gains if t == 0 else 0.0)
    h = imp[:, :, -1]  # (L, channels)
    free = np.empty((L, n_ch, order), complex)  # output at step i from unit state a
    jump = np.empty((n_ch, order, order), complex)  # state after L steps from unit state a
    for a in range(order):
        state = np.zeros((n_ch, order), complex)
        state[:, a] = 1.0
        for t in range(L):
            free[t, :, a] = _cascade_step(state, poles, 0.0)[:, -1]
        jump[:, :, a] = state

    # per channel: x block @ conv + [Re carry | Im carry] @ free -> [Re y | Im y].
    # The block products run in float32: the features are float32 log energies.
    lag = np.arange(L)[:, None] - np.arange(L)[None, :]
    toeplitz = np.where(lag[None] >= 0, h.T[:, np.clip(lag, 0, None)], 0)  # (ch, i, j)
    conv = np.concatenate([toeplitz.real, toeplitz.imag], axis=1).transpose(0, 2, 1)
    f = free.transpose(1, 2, 0)  # (ch, a, i)
    free_w = np.concatenate([np.concatenate([f.real, f.imag], axis=2),
                             np.concatenate([-f.imag, f.real], axis=2)], axis=1)
    # flush what would be float32 denormals (fast-decaying wide channels); they slow the GEMM down
    tiny = np.finfo(np.float32).tiny
    conv, free_w = (np.ascontiguousarray(np.where(np.abs(a) < tiny, 0.0, a), dtype=np.float32)
                    for a in (conv, free_w))
    gamma = imp[::-1].reshape(L, n_ch * order).T  # state at block end from input at j

    drive = (np.ascontiguousarray(gamma.real) @ X.T
             + 1j * (np.ascontiguousarray(gamma.imag) @ X.T)).reshape(n_ch, order, n_blocks)

    # state after each block: s[m] = jump @ s[m-1] + drive[m]. jump is lower
    # triangular, so forward substitution turns it into scalar recursions.
    state = np.empty_like(drive)
    for c in range(n_ch):
        for k in range(order):
            u = drive[c, k]
            if k:
                u[1:] += jump[c, k, :k] @ state[c, :k, :-1]
            state[c, k] = signal.lfilter([1.0], [1.0, -jump[c, k, k]], u)
    carry = np.zeros((n_ch, n_blocks, 2 * order), np.float32)  # state before each block
    carry[:, 1:, :order] = state[:, :, :-1].real.transpose(0, 2, 1)
    carry[:, 1:, order:] = state[:, :, :-1].imag.transpose(0, 2, 1)

    per_hop = hop // L
    X32 = X.astype(np.float32)
    out = np.empty((n_frames, n_ch))
    step = max(per_hop, chunk - chunk % per_hop)
    for m0 in range(0, n_blocks, step):
        y = X32[m0:m0 + step] @ conv  # (ch, blocks, 2L)
        y += carry[:, m0:m0 + step] @ free_w
        e = np.einsum("cmi,cmi->cm", y, y).reshape(n_ch, -1, per_hop).sum(axis=2, dtype=np.float64)
        out[m0 // per_hop:m0 // per_hop + e.shape[1]] = e.T / hop
    return out


def gam_spectrogram(pcm, cfg=DspConfig()):
    """Per-hop mean-square envelope energy of ERB-spaced gammatone channels."""
    _check_pcm(pcm, cfg)
    energy = gammatone_block_energy(pcm.samples, gammatone_center_frequencies(cfg),
                                    cfg.sample_rate, cfg.hop)
    return Spectrogram("gam", _log(energy, cfg), cfg.hop, cfg.sample_rate)


FRONTENDS = {"mel": mel_spectrogram, "cqt": cqt_spectrogram, "gam": gam_spectrogram}


def spectrogram(kind, pcm, cfg=DspConfig()):
    try:
        fn = FRONTENDS[kind]
    except KeyError:
        raise DspError(f"unknown spectrogram kind {kind!r}; choose from {KINDS}") from None
    if pcm.sample_rate != cfg.sample_rate:
        pcm = resample(pcm, cfg.sample_rate)
    return fn(pcm, cfg)


# -- tiling and normalization -----------------------------------------------

def patchify(spec, segment_id=""):
    """Non-overlapping 128-frame tiles; trailing frames that do not fill a tile are dropped."""
    values = spec.values if isinstance(spec, Spectrogram) else np.asarray(spec)
    if values.ndim != 2 or values.shape[1] != PATCH:
        raise BadBins(f"patchify needs 128 bins, got shape {values.shape}")
    count = values.shape[0] // PATCH
    return [Patch(values[i * PATCH:(i + 1) * PATCH], (segment_id, i), 1) for i in range(count)]


def patch_array(values):
    """(count, 128, 128) stack of the tiles of a (frames, 128) matrix."""
    values = np.asarray(values)
    if values.ndim != 2 or values.shape[1] != PATCH:
        raise BadBins(f"patchify needs 128 bins, got shape {values.shape}")
    count = values.shape[0] // PATCH
    return values[: count * PATCH].reshape(count, PATCH, PATCH)


@dataclass
class Standardizer:
    """Per-bin zero-mean / unit-variance scaling fitted on Train features."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, arrays, axis=-1):
        stacked = np.concatenate([np.asarray(a, np.float64).reshape(-1, np.shape(a)[axis])
                                  for a in arrays])
        std = stacked.std(axis=0)
        return cls(stacked.mean(axis=0), np.where(std > 1e-8, std, 1.0))

    @classmethod
    def identity(cls, width):
        return cls(np.zeros(width), np.ones(width))

    def __call__(self, values):
        return ((np.asarray(values) - self.mean) / self.std).astype(np.float32)


# -- visual frames -----------------------------------------------------------

IMAGE_SUFFIXES = (".png", ".ppm", ".jpg", ".jpeg")


def load_frames(frames_dir, size=PATCH):
    """Images of ``frames_dir`` in lexicographic order as (n, size, size, 3) floats in [0, 1]."""
    from PIL import Image

    paths = sorted(p for p in Path(frames_dir).iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if not paths:
        raise EmptyInput(f"no frame images in {frames_dir}")
    out = []
    for p in paths:
        with Image.open(p) as im:
            im = im.convert("RGB").resize((size, size), Image.BILINEAR)
            out.append(np.asarray(im, dtype=np.float32) / 255.0)
    return np.stack(out)
