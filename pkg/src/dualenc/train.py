"""Training recipes: seed CT model, FT adaptation, dual-encoder adaptation.

All recipes run single-threaded mini-batch SGD with momentum; batches are
bucketed by token count so shapes never need padding. Every random draw
(shuffling, dropout, SpecAugment, stream shifts) comes from one seeded
generator in a fixed order, making final losses reproducible to 1e-6.
"""

from __future__ import annotations

import copy

import numpy as np

from . import data, dsp, model as model_lib, selection
from . import tensor as T
from .errors import DivergenceError, ManifestError
from .optim import Sgd


# ---------------------------------------------------------------------------
# SpecAugment
# ---------------------------------------------------------------------------

def specaug_keep_mask(t_len, n_dims, t_max, m_t, f_max, m_f, rng):
    """Binary keep-mask (T, M); masked widths are U[0, max], clipped."""
    keep = np.ones((t_len, n_dims), dtype=np.float32)
    for _ in range(m_t):
        width = int(rng.integers(0, t_max + 1)) if t_max > 0 else 0
        width = min(width, t_len)
        if width:
            start = int(rng.integers(0, t_len - width + 1))
            keep[start:start + width, :] = 0.0
    for _ in range(m_f):
        width = int(rng.integers(0, f_max + 1)) if f_max > 0 else 0
        width = min(width, n_dims)
        if width:
            start = int(rng.integers(0, n_dims - width + 1))
            keep[:, start:start + width] = 0.0
    return keep


def spec_augment(feat, t_max, m_t, f_max, m_f, mask_seed):
    """Masked copy of a feature matrix; masked cells take the per-dim mean.

    The same mask_seed yields identical mask positions on any stream of the
    same shape (the shared-mask contract across encoders).
    """
    feat = np.asarray(feat)
    rng = np.random.default_rng(mask_seed)
    keep = specaug_keep_mask(feat.shape[0], feat.shape[1], t_max, m_t, f_max, m_f, rng)
    fill = feat.mean(axis=0, keepdims=True)
    return keep * feat + (1.0 - keep) * fill


# ---------------------------------------------------------------------------
# batch assembly
# ---------------------------------------------------------------------------

class _CtFeatureCache:
    """Per-record CT features, valid only for unshifted streams."""

    def __init__(self, cfg, base_dir):
        self.cfg = cfg
        self.base_dir = base_dir
        self.cache = {}

    def get(self, record):
        feats = self.cache.get(record.id)
        if feats is None:
            ct, _ = data.read_audio(record, self.base_dir)
            feats = model_lib.ct_feature_matrix(self.cfg, ct)
            self.cache[record.id] = feats
        return feats


def _batch_masks(records, t_len, n_mels, tcfg, rng):
    masks = []
    for _ in records:
        masks.append(specaug_keep_mask(t_len, n_mels, tcfg.spec_t_max, tcfg.spec_m_t,
                                       tcfg.spec_f_max, tcfg.spec_m_f, rng))
    return np.stack(masks, axis=1)          # (T, B, M)


def _apply_const_mask(feats, mask):
    # features are CMN-normalized: the per-dimension mean is zero
    return feats * mask


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

def _loss_for_batch(model, batch, base_dir, tcfg, mode, rng, ct_cache, augment=True):
    cfg = model.cfg
    targets = data.target_matrix(batch)
    dropout = tcfg.dropout if augment else 0.0

    if mode == "ct":
        feats = np.stack([ct_cache.get(r) for r in batch], axis=1)
        if augment:
            feats = _apply_const_mask(feats, _batch_masks(batch, feats.shape[0],
                                                          cfg.n_mels, tcfg, rng))
        enc = model_lib.encoder_forward(model, "enc_ct", feats,
                                        dropout=dropout, rng=rng)
        return model_lib.decode_train(model, enc, targets, dropout=dropout, rng=rng)

    if mode == "ft":
        wavs = []
        for rec in batch:
            ct, ft = data.read_audio(rec, base_dir)
            wavs.append(np.concatenate([ct[:, None], ft], axis=1)
                        if model.sf_concat_ct else ft)
        spec_tm, t_len = data.ft_batch_spec(cfg, wavs)
        mask = _batch_masks(batch, t_len, cfg.n_mels, tcfg, rng) if augment else None
        feats = model_lib.ft_feature_graph(model, spec_tm, t_len, len(batch),
                                           mask=mask, fill=0.0)
        enc = model_lib.encoder_forward(model, "enc_ft", feats,
                                        dropout=dropout, rng=rng)
        return model_lib.decode_train(model, enc, targets, dropout=dropout, rng=rng)

    if mode == "dual":
        ct_feats, ft_wavs = [], []
        for rec in batch:
            ct, ft = data.read_audio(rec, base_dir)
            if tcfg.max_train_shift > 0:
                shift = int(rng.integers(-tcfg.max_train_shift, tcfg.max_train_shift + 1))
                if shift:
                    ct = dsp.apply_shift(ct, shift)
                ct_feats.append(model_lib.ct_feature_matrix(cfg, ct))
            else:
                ct_feats.append(ct_cache.get(rec))
            ft_wavs.append(ft)
        ct_const = np.stack(ct_feats, axis=1)
        spec_tm, t_len = data.ft_batch_spec(cfg, ft_wavs)
        mask = _batch_masks(batch, t_len, cfg.n_mels, tcfg, rng) if augment else None
        if mask is not None:
            ct_const = _apply_const_mask(ct_const, mask)    # shared mask
        ft_feats = model_lib.ft_feature_graph(model, spec_tm, t_len, len(batch),
                                              mask=mask, fill=0.0)
        enc, _ = model_lib.forward_dual(model, ct_const, ft_feats, sel_mode="soft",
                                        sel_unit=tcfg.sel_unit, training=True,
                                        dropout=dropout, rng=rng)
        return model_lib.decode_train(model, enc, targets, dropout=dropout, rng=rng)

    raise ManifestError(f"unknown training mode {mode!r}")


def run_training(model, records, base_dir, tcfg, lr, mode, val_records=None,
                 val_limit=48, log=None):
    """SGD over the corpus; returns a list of per-epoch log dicts."""
    opt = Sgd(model.params, lr=lr, momentum=tcfg.momentum,
              clip_norm=tcfg.clip_norm, freeze=tcfg.freeze)
    rng = np.random.default_rng(tcfg.seed)
    ct_cache = _CtFeatureCache(model.cfg, base_dir)
    history = []
    for epoch in range(tcfg.epochs):
        batches = data.epoch_batches(records, tcfg.batch_size, rng)
        total_loss, total_batches = 0.0, 0
        for batch in batches:
            loss = _loss_for_batch(model, batch, base_dir, tcfg, mode, rng, ct_cache)
            value = float(loss.data)
            if not np.isfinite(value):
                raise DivergenceError(f"non-finite loss at epoch {epoch}")
            opt.zero_grad()
            T.backward(loss)
            opt.step()
            total_loss += value
            total_batches += 1
        entry = {"epoch": epoch, "loss": total_loss / max(total_batches, 1)}
        if val_records:
            entry["val_token_error"] = _token_error(model, val_records[:val_limit],
                                                    base_dir, mode, tcfg)
        history.append(entry)
        if log:
            log("  " + "  ".join(f"{k}={v:.4f}" if isinstance(v, float) else f"{k}={v}"
                                 for k, v in entry.items()))
    return history


def _token_error(model, records, base_dir, mode, tcfg):
    from .evaluate import levenshtein

    edits = total = 0
    for rec in records:
        ct, ft = data.read_audio(rec, base_dir)
        with T.no_grad():
            if mode == "ct":
                enc = model_lib.encode(model, ct, encoder="ct")
            elif mode == "ft":
                audio = np.concatenate([ct[:, None], ft], axis=1) if model.sf_concat_ct else ft
                enc = model_lib.encode(model, audio, encoder="ft")
            else:
                ct_f = model_lib.ct_feature_matrix(model.cfg, ct)[:, None, :]
                spec_tm, t_len = data.ft_batch_spec(model.cfg, [ft])
                ft_f = model_lib.ft_feature_graph(model, spec_tm, t_len, 1)
                enc, _ = model_lib.forward_dual(model, ct_f, ft_f, sel_mode="soft",
                                                sel_unit=tcfg.sel_unit)
            hyp = model_lib.decode_beam(model, enc, beam_size=1)
        edits += levenshtein(list(rec.tokens), hyp)
        total += len(rec.tokens)
    return edits / max(total, 1)


# ---------------------------------------------------------------------------
# recipes
# ---------------------------------------------------------------------------

def train_seed(manifest_path, mcfg, tcfg, val_manifest=None, log=None):
    """CT-only seed model trained from scratch."""
    from . import simulate

    records = simulate.load_manifest(manifest_path)
    base_dir = simulate.manifest_dir(manifest_path)
    val = simulate.load_manifest(val_manifest) if val_manifest else None
    model = model_lib.build_ct_model(mcfg, seed=tcfg.seed)
    history = run_training(model, records, base_dir, tcfg, lr=tcfg.lr_seed,
                           mode="ct", val_records=val, log=log)
    return model, history


def adapt_ft(seed_model, manifest_path, tcfg, geometry, concat_ct=False,
             val_manifest=None, log=None):
    """Clone the seed, add the SF frontend, fine-tune everything jointly."""
    from . import simulate

    records = simulate.load_manifest(manifest_path)
    base_dir = simulate.manifest_dir(manifest_path)
    val = simulate.load_manifest(val_manifest) if val_manifest else None
    model = model_lib.build_ft_model(seed_model.cfg, seed=tcfg.seed, geometry=geometry,
                                     from_model=seed_model, concat_ct=concat_ct)
    history = run_training(model, records, base_dir, tcfg, lr=tcfg.lr_finetune,
                           mode="ft", val_records=val, log=log)
    return model, history


def adapt_dual(seed_model, manifest_path, tcfg, geometry, selector_init="joint",
               pretrain_tcfg=None, val_manifest=None, log=None):
    """Dual-encoder adaptation with soft selection.

    selector_init="pretrained" first trains the selector on speaker roles and
    keeps it frozen afterwards.
    """
    from . import simulate

    records = simulate.load_manifest(manifest_path)
    base_dir = simulate.manifest_dir(manifest_path)
    val = simulate.load_manifest(val_manifest) if val_manifest else None
    model = model_lib.build_dual_model(seed_model.cfg, seed=tcfg.seed,
                                       geometry=geometry, from_model=seed_model)
    accuracy = None
    if selector_init == "pretrained":
        accuracy = pretrain_selector_on_roles(model, records, base_dir,
                                              pretrain_tcfg or tcfg, log=log)
        tcfg = _with_freeze(tcfg, ("sel/",))
    elif selector_init != "joint":
        raise ManifestError(f"unknown selector_init {selector_init!r}")
    history = run_training(model, records, base_dir, tcfg, lr=tcfg.lr_finetune,
                           mode="dual", val_records=val, log=log)
    return model, history, accuracy


def _with_freeze(tcfg, extra):
    out = copy.copy(tcfg)
    out.freeze = tuple(tcfg.freeze) + tuple(extra)
    return out


ROLE_TO_CLASS = {"doctor": 0, "other": 1}


def selector_batches(model, records, base_dir, batch_size):
    """Concatenated CT/FT feature batches plus role labels for pretraining."""
    cfg = model.cfg
    sf_w = model.params["sf/w"].data
    sf_b = model.params["sf/b"].data
    feature_batches, label_batches = [], []
    for batch in data.epoch_batches(records, batch_size):
        feats, labels = [], []
        for rec in batch:
            if rec.role not in ROLE_TO_CLASS:
                raise ManifestError(f"{rec.id}: missing or unknown role {rec.role!r}")
            ct, ft = data.read_audio(rec, base_dir)
            ct_f = model_lib.ct_feature_matrix(cfg, ct)
            ft_f = data.ft_numpy_features(cfg, sf_w, sf_b, ft)
            n = min(ct_f.shape[0], ft_f.shape[0])
            feats.append(np.concatenate([ct_f[:n], ft_f[:n]], axis=1))
            labels.append(ROLE_TO_CLASS[rec.role])
        feature_batches.append(np.stack(feats, axis=1))
        label_batches.append(np.array(labels))
    return feature_batches, label_batches


def pretrain_selector_on_roles(model, records, base_dir, tcfg, heldout_records=None,
                               heldout_dir=None, log=None):
    """Train the selector as a role classifier; returns held-out accuracy."""
    feats, labels = selector_batches(model, records, base_dir, tcfg.batch_size)
    ho_feats = ho_labels = None
    if heldout_records:
        ho_feats, ho_labels = selector_batches(model, heldout_records,
                                               heldout_dir or base_dir, tcfg.batch_size)
    acc = selection.pretrain_selector(model.params, "sel", feats, labels, tcfg,
                                      heldout_features=ho_feats, heldout_labels=ho_labels)
    if log:
        log(f"  selector accuracy={acc:.4f}")
    return acc
