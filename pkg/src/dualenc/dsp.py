"""Time-frequency analysis, log-Mel features, CMN, and stream alignment.

All functions here are pure; multi-channel audio is (n_samples, n_channels)
float64 in [-1, 1). STFT uses a periodic Hann window, no padding: frame t
covers samples [t*hop, t*hop + win).
"""

from __future__ import annotations

import numpy as np
from scipy.io import wavfile

from .errors import ConfigError, NoSignalError, RangeError, TooShortError

SAMPLE_RATE = 16000
WIN_MS = 32.0
HOP_MS = 10.0
FFT_SIZE = 512
LOG_FLOOR = 1e-10


def hann_periodic(n):
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def n_frames(n_samples, win, hop):
    if n_samples < win:
        raise TooShortError(f"signal of {n_samples} samples shorter than one {win}-sample window")
    return 1 + (n_samples - win) // hop


def stft(wav, sample_rate=SAMPLE_RATE, win_ms=WIN_MS, hop_ms=HOP_MS, fft_size=FFT_SIZE):
    """Complex STFT of a mono (n,) or multi-channel (n, C) signal.

    Returns (T, F, C) complex128 with F = fft_size//2 + 1; mono input gives
    C = 1.
    """
    x = np.asarray(wav, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    win = int(round(win_ms * sample_rate / 1000.0))
    hop = int(round(hop_ms * sample_rate / 1000.0))
    if win > fft_size:
        raise ConfigError(f"window of {win} samples exceeds fft_size {fft_size}")
    t_len = n_frames(x.shape[0], win, hop)
    window = hann_periodic(win)
    idx = hop * np.arange(t_len)[:, None] + np.arange(win)
    frames = x[idx]                              # (T, win, C)
    frames = frames * window[None, :, None]
    return np.fft.rfft(frames, n=fft_size, axis=1)


def istft(spec_1ch, sample_rate=SAMPLE_RATE, win_ms=WIN_MS, hop_ms=HOP_MS, fft_size=FFT_SIZE):
    """Overlap-add synthesis of a single-channel (T, F) complex spectrogram."""
    spec = np.asarray(spec_1ch)
    win = int(round(win_ms * sample_rate / 1000.0))
    hop = int(round(hop_ms * sample_rate / 1000.0))
    t_len = spec.shape[0]
    window = hann_periodic(win)
    out = np.zeros(hop * (t_len - 1) + win)
    norm = np.zeros_like(out)
    frames = np.fft.irfft(spec, n=fft_size, axis=1)[:, :win]
    for t in range(t_len):
        out[t * hop: t * hop + win] += frames[t] * window
        norm[t * hop: t * hop + win] += window ** 2
    return out / np.maximum(norm, 1e-8)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels, fft_size=FFT_SIZE, sample_rate=SAMPLE_RATE, fmin=20.0, fmax=None):
    """Triangular HTK-style Mel filters as an (n_mels, F) weight matrix."""
    nyquist = sample_rate / 2.0
    if fmax is None:
        fmax = nyquist
    if n_mels < 1:
        raise ConfigError(f"n_mels must be >= 1, got {n_mels}")
    if not (0.0 <= fmin < fmax <= nyquist):
        raise ConfigError(f"invalid band edges fmin={fmin}, fmax={fmax}, nyquist={nyquist}")
    n_bins = fft_size // 2 + 1
    bin_hz = np.arange(n_bins) * sample_rate / fft_size
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    fb = np.zeros((n_mels, n_bins))
    for m in range(n_mels):
        lo, mid, hi = edges[m], edges[m + 1], edges[m + 2]
        up = (bin_hz - lo) / max(mid - lo, 1e-12)
        down = (hi - bin_hz) / max(hi - mid, 1e-12)
        fb[m] = np.maximum(0.0, np.minimum(up, down))
    return fb


def log_mel(spec_1ch, n_mels=80, sample_rate=SAMPLE_RATE, fft_size=FFT_SIZE,
            fmin=20.0, fmax=None):
    """log(Mel-filtered power spectrum + floor) for a (T, F) spectrogram."""
    spec = np.asarray(spec_1ch)
    if spec.ndim == 3:
        if spec.shape[2] != 1:
            raise ConfigError(f"log_mel expects a single channel, got {spec.shape[2]}")
        spec = spec[:, :, 0]
    power = (spec.real ** 2 + spec.imag ** 2)
    fb = mel_filterbank(n_mels, fft_size=fft_size, sample_rate=sample_rate,
                        fmin=fmin, fmax=fmax)
    return np.log(power @ fb.T + LOG_FLOOR)


def cmn(feat):
    """Subtract the per-dimension mean (per utterance)."""
    feat = np.asarray(feat, dtype=np.float64)
    return feat - feat.mean(axis=0, keepdims=True)


def align_streams(a, b):
    """Truncate two feature matrices to their common length (<=2 frame slack)."""
    n = min(a.shape[0], b.shape[0])
    return a[:n], b[:n]


def estimate_offset(a, b, max_lag, phat=False):
    """Lag that best aligns b to a: argmax_l sum_n a[n] * b[n + l].

    b equal to a delayed by k gives +k. Ties break toward smaller |lag|, then
    toward the negative lag. Lags are searched in [-max_lag, max_lag].
    """
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.shape[0] < 2 * max_lag or b.shape[0] < 2 * max_lag:
        raise RangeError(f"signals must have >= {2 * max_lag} samples")
    ea, eb = np.dot(a, a), np.dot(b, b)
    if ea == 0.0 or eb == 0.0:
        raise NoSignalError("all-zero input to estimate_offset")
    n = a.shape[0] + b.shape[0]
    nfft = 1 << int(np.ceil(np.log2(n)))
    fa = np.fft.rfft(a, nfft)
    fb = np.fft.rfft(b, nfft)
    cross = np.conj(fa) * fb
    if phat:
        cross = cross / np.maximum(np.abs(cross), 1e-12)
    corr = np.fft.irfft(cross, nfft)
    # circular corr: index l (mod nfft) holds sum a[n] b[n+l]
    lags = np.arange(-max_lag, max_lag + 1)
    vals = corr[lags % nfft] / np.sqrt(ea * eb)
    best = vals.max()
    cands = lags[vals == best]
    return int(min(cands, key=lambda l: (abs(l), l)))


def apply_shift(wav, lag):
    """Integer-sample delay by `lag` (negative = advance), zero padded.

    Length and channel count are preserved.
    """
    x = np.asarray(wav, dtype=np.float64)
    n = x.shape[0]
    if abs(lag) >= n:
        raise RangeError(f"|lag| {abs(lag)} >= signal length {n}")
    out = np.zeros_like(x)
    if lag >= 0:
        out[lag:] = x[:n - lag]
    else:
        out[:n + lag] = x[-lag:]
    return out


# ---------------------------------------------------------------------------
# WAV I/O: RIFF 16-bit signed PCM little-endian, samples scaled by 1/32768
# ---------------------------------------------------------------------------

def read_wav(path):
    """Returns (sample_rate, float64 array (n,) mono or (n, C))."""
    rate, data = wavfile.read(path)
    if data.dtype != np.int16:
        raise ConfigError(f"{path}: expected 16-bit PCM, got {data.dtype}")
    return rate, data.astype(np.float64) / 32768.0


def write_wav(path, wav, sample_rate=SAMPLE_RATE):
    x = np.asarray(wav, dtype=np.float64)
    pcm = np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2")
    wavfile.write(path, sample_rate, pcm)
