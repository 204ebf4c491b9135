"""Encoder-selection network and hard/soft combination rules.

The selector takes the concatenated per-encoder input features and emits
probabilities q over the sub-encoders, either once per utterance (attention
summarization) or per decimated frame (average pooling sized so the
selector's total decimation matches the sub-encoders' stride).
"""

from __future__ import annotations

import warnings

import numpy as np

from . import tensor as T
from .errors import AlignmentError, InputError, ShapeError


def init_selector(params, prefix, input_dim, units, n_enc, kernel, rng, dtype=np.float32):
    """Two stride-2 conv layers, one unidirectional LSTM, attention head."""

    def uniform(shape, fan_in):
        k = 1.0 / np.sqrt(max(fan_in, 1))
        return T.Tensor(rng.uniform(-k, k, size=shape).astype(dtype), requires_grad=True)

    params[f"{prefix}/conv1/k"] = uniform((kernel, input_dim, units), kernel * input_dim)
    params[f"{prefix}/conv1/b"] = T.Tensor(np.zeros(units, dtype=dtype), requires_grad=True)
    params[f"{prefix}/conv2/k"] = uniform((kernel, units, units), kernel * units)
    params[f"{prefix}/conv2/b"] = T.Tensor(np.zeros(units, dtype=dtype), requires_grad=True)
    params[f"{prefix}/lstm/W"] = uniform((units, 4 * units), units)
    params[f"{prefix}/lstm/U"] = uniform((units, 4 * units), units)
    params[f"{prefix}/lstm/b"] = T.Tensor(np.zeros(4 * units, dtype=dtype), requires_grad=True)
    params[f"{prefix}/att/W"] = uniform((units, units), units)
    params[f"{prefix}/att/b"] = T.Tensor(np.zeros(units, dtype=dtype), requires_grad=True)
    params[f"{prefix}/att/v"] = uniform((units,), units)
    params[f"{prefix}/out/W"] = uniform((units, n_enc), units)
    params[f"{prefix}/out/b"] = T.Tensor(np.zeros(n_enc, dtype=dtype), requires_grad=True)


def selector_forward(params, prefix, feats, unit="utt", pool_size=1):
    """Selection probabilities from concatenated features (T, B, sum_of_M).

    unit="utt" returns (B, E); unit="frame" returns (L, B, E) with L equal
    to the sub-encoder output length (conv strides 2*2 times `pool_size`).
    """
    if unit not in ("utt", "frame"):
        raise InputError(f"unknown selection unit {unit!r}")
    h = feats if isinstance(feats, T.Tensor) else T.Tensor(feats)
    if h.ndim == 2:
        h = h.reshape((h.shape[0], 1, h.shape[1]))
    h = T.forward_op("tanh", T.forward_op("conv1d", h, params[f"{prefix}/conv1/k"],
                                          params[f"{prefix}/conv1/b"], stride=2))
    h = T.forward_op("tanh", T.forward_op("conv1d", h, params[f"{prefix}/conv2/k"],
                                          params[f"{prefix}/conv2/b"], stride=2))
    h = T.forward_op("lstm_seq", h, params[f"{prefix}/lstm/W"],
                     params[f"{prefix}/lstm/U"], params[f"{prefix}/lstm/b"])
    t_len, n_batch, units = h.shape
    if unit == "utt":
        proj = T.forward_op("linear", h.reshape((t_len * n_batch, units)),
                            params[f"{prefix}/att/W"], params[f"{prefix}/att/b"])
        scores = T.forward_op("tanh", proj) @ params[f"{prefix}/att/v"]
        alpha = T.forward_op("softmax", scores.reshape((t_len, n_batch)), axis=0)
        summary = (T.forward_op("expand", alpha, n=units, axis=2) * h).sum(axis=0)
        logits = T.forward_op("linear", summary, params[f"{prefix}/out/W"],
                              params[f"{prefix}/out/b"])
        return T.forward_op("softmax", logits, axis=1)
    if pool_size > 1:
        h = T.forward_op("mean_pool", h, size=pool_size, axis=0)
    l_len = h.shape[0]
    logits = T.forward_op("linear", h.reshape((l_len * n_batch, units)),
                          params[f"{prefix}/out/W"], params[f"{prefix}/out/b"])
    n_enc = logits.shape[1]
    return T.forward_op("softmax", logits.reshape((l_len, n_batch, n_enc)), axis=2)


def combine_soft(enc_outputs, q, unit="utt"):
    """Probability-weighted sum of the sub-encoder outputs.

    Utterance mode broadcasts each scalar q_k over frames; frame mode weights
    per output frame.
    """
    shapes = {tuple(e.shape) for e in enc_outputs}
    if len(shapes) != 1:
        raise ShapeError(f"sub-encoder output shapes differ: {sorted(shapes)}")
    t_len, n_batch, h_dim = enc_outputs[0].shape
    _check_q(q, len(enc_outputs), t_len, n_batch, unit)
    out = None
    for k, enc in enumerate(enc_outputs):
        qk = T.forward_op("slice", q, slices=_q_slice(q, k))
        if unit == "utt":
            w = T.forward_op("expand", qk.reshape((n_batch,)), n=t_len, axis=0)
        else:
            w = qk.reshape((t_len, n_batch))
        w = T.forward_op("expand", w, n=h_dim, axis=2)
        term = w * enc
        out = term if out is None else out + term
    return out


def combine_hard(enc_sources, q, unit="utt"):
    """Argmax selection. Utterance mode evaluates only the winning encoder
    (sources may be thunks); frame mode interleaves rows of all outputs.
    Ties break toward the lower encoder index.
    """
    q_val = q.data if isinstance(q, T.Tensor) else np.asarray(q)
    if unit == "utt":
        if q_val.ndim != 2:
            raise ShapeError(f"utterance-mode q must be (B, E), got {q_val.shape}")
        picks = np.argmax(q_val, axis=1)     # argmax takes the first maximum
        if np.all(picks == picks[0]):
            return _materialize(enc_sources[picks[0]])
        outs = {k: _materialize(enc_sources[k]) for k in sorted(set(picks.tolist()))}
        cols = [T.forward_op("slice", outs[picks[b]],
                             slices=(slice(None), slice(b, b + 1))) for b in range(len(picks))]
        return T.forward_op("concat", *cols, axis=1)
    outs = [_materialize(src) for src in enc_sources]
    t_len, n_batch, h_dim = outs[0].shape
    if q_val.shape[0] != t_len:
        raise AlignmentError(f"frame-mode q has {q_val.shape[0]} rows for {t_len} encoder frames")
    picks = np.argmax(q_val, axis=2)         # (T, B)
    masks = [T.Tensor(np.repeat((picks == k)[:, :, None], h_dim, axis=2).astype(outs[0].dtype))
             for k in range(len(outs))]
    out = None
    for mask, enc in zip(masks, outs):
        term = enc * mask
        out = term if out is None else out + term
    return out


def _materialize(source):
    return source() if callable(source) else source


def _q_slice(q, k):
    if q.ndim == 2:
        return (slice(None), slice(k, k + 1))
    return (slice(None), slice(None), slice(k, k + 1))


def _check_q(q, n_enc, t_len, n_batch, unit):
    if unit == "utt":
        if q.shape != (n_batch, n_enc):
            raise ShapeError(f"utterance-mode q shape {q.shape} != ({n_batch}, {n_enc})")
    else:
        if q.shape != (t_len, n_batch, n_enc):
            raise AlignmentError(
                f"frame-mode q shape {q.shape} != ({t_len}, {n_batch}, {n_enc})")


def selection_entropy_warning(labels):
    if len(set(labels)) < 2:
        warnings.warn("single-class corpus: selector accuracy is degenerate")


def pretrain_selector(params, prefix, feature_batches, label_batches, cfg,
                      heldout_features=None, heldout_labels=None):
    """Cross-entropy pretraining on speaker-role targets (utterance mode).

    feature_batches: list of (T, B, sum_of_M) arrays; label_batches: matching
    (B,) int arrays (0 = close-talk class). Returns held-out accuracy (or
    training accuracy when no held-out set is given). The caller freezes the
    returned parameters during dual-encoder training if desired.
    """
    from .optim import Sgd

    sel_params = {n: t for n, t in params.items() if n.startswith(prefix + "/")}
    opt = Sgd(sel_params, lr=cfg.lr_pretrain, momentum=cfg.momentum, clip_norm=cfg.clip_norm)
    all_labels = np.concatenate([np.asarray(lb) for lb in label_batches])
    selection_entropy_warning(all_labels.tolist())
    rng = np.random.default_rng(cfg.seed)
    n_enc = params[f"{prefix}/out/b"].shape[0]
    for _ in range(cfg.epochs):
        order = rng.permutation(len(feature_batches))
        for idx in order:
            feats, labels = feature_batches[idx], np.asarray(label_batches[idx])
            q = selector_forward(params, prefix, T.Tensor(feats), unit="utt")
            onehot = np.zeros((len(labels), n_enc), dtype=q.dtype)
            onehot[np.arange(len(labels)), labels] = 1.0
            floor = T.Tensor(np.asarray(1e-8, dtype=q.dtype))
            loss = (T.forward_op("log", q + floor) * T.Tensor(onehot)).sum()
            loss = loss * T.Tensor(np.asarray(-1.0 / len(labels), dtype=q.dtype))
            opt.zero_grad()
            T.backward(loss)
            opt.step()
    if heldout_features is None:
        heldout_features, heldout_labels = feature_batches, label_batches
    correct = total = 0
    with T.no_grad():
        for feats, labels in zip(heldout_features, heldout_labels):
            q = selector_forward(params, prefix, T.Tensor(feats), unit="utt")
            correct += int(np.sum(np.argmax(q.data, axis=1) == np.asarray(labels)))
            total += len(labels)
    return correct / max(total, 1)
