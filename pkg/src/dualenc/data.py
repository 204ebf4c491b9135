"""Corpus loading, length bucketing, and batch feature assembly.

Utterance durations are quantized by token count (fixed burst/gap lengths),
so bucketing by token count yields batches with identical frame counts and
identical target lengths: no padding or masking is needed anywhere.
"""

from __future__ import annotations

import numpy as np

from . import dsp, model as model_lib, simulate
from .errors import ManifestError


def read_audio(record, base_dir):
    return simulate.load_utterance_audio(record, base_dir)


def bucket_by_token_count(records):
    buckets = {}
    for rec in records:
        buckets.setdefault(len(rec.tokens), []).append(rec)
    return buckets


def epoch_batches(records, batch_size, rng=None):
    """Batches of records with equal token count, optionally shuffled."""
    buckets = bucket_by_token_count(records)
    batches = []
    for length in sorted(buckets):
        members = list(buckets[length])
        if rng is not None:
            members = [members[i] for i in rng.permutation(len(members))]
        for start in range(0, len(members), batch_size):
            batches.append(members[start:start + batch_size])
    if rng is not None:
        batches = [batches[i] for i in rng.permutation(len(batches))]
    return batches


def target_matrix(records):
    """(B, L+1) token matrix with EOS appended; rows must share a length."""
    lengths = {len(r.tokens) for r in records}
    if len(lengths) != 1:
        raise ManifestError(f"batch mixes token counts {sorted(lengths)}")
    return np.array([list(r.tokens) + [model_lib.EOS_ID] for r in records])


def ct_batch_features(cfg, wavs, dtype=np.float32):
    """Stack per-utterance CT features into (T, B, M); equal lengths required."""
    feats = [model_lib.ct_feature_matrix(cfg, w, dtype=dtype) for w in wavs]
    t_lens = {f.shape[0] for f in feats}
    if len(t_lens) != 1:
        raise ManifestError(f"batch mixes frame counts {sorted(t_lens)}")
    return np.stack(feats, axis=1)


def ft_batch_spec(cfg, wavs, dtype=np.float32):
    """Time-major (T*B, F, C, 2) spectrogram constant for the SF layer.

    Row order is t * B + b so that reshape((T, B, ...)) recovers the batch.
    """
    specs = [model_lib.ft_spec_pairs(cfg, w, dtype=dtype) for w in wavs]
    t_lens = {s.shape[0] for s in specs}
    if len(t_lens) != 1:
        raise ManifestError(f"batch mixes frame counts {sorted(t_lens)}")
    stacked = np.stack(specs, axis=1)          # (T, B, F, C, 2)
    t_len, n_b = stacked.shape[0], stacked.shape[1]
    return stacked.reshape((t_len * n_b,) + stacked.shape[2:]), t_len


def ft_numpy_features(cfg, sf_w, sf_b, ft_wav, dtype=np.float32):
    """Forward-only FT features (T, M) through a fixed spatial filter.

    Mirrors ft_feature_graph for contexts with no gradient (selector
    pretraining, diagnostics).
    """
    spec = dsp.stft(ft_wav, sample_rate=cfg.sample_rate, win_ms=cfg.win_ms,
                    hop_ms=cfg.hop_ms, fft_size=cfg.fft_size)
    w = sf_w[..., 0] + 1j * sf_w[..., 1]
    b = sf_b[..., 0] + 1j * sf_b[..., 1]
    y = np.einsum("tfc,fdc->tfd", spec.astype(np.complex128), w) + b[None]
    pooled = (y.real ** 2 + y.imag ** 2).mean(axis=2)
    feat = np.log(pooled @ model_lib.mel_matrix(cfg, np.float64) + dsp.LOG_FLOOR)
    return dsp.cmn(feat).astype(dtype)
