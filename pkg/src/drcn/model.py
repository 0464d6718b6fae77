"""Densely-connected recurrent and co-attentive matching network."""

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .config import ConfigError
from .tensor import Tensor


# ------------------------------------------------------------------ widths

def _dense_keep(cfg, kind):
    return {"rec": cfg.dense_rec, "attn": cfg.dense_attn,
            "emb": cfg.dense_emb, "ae": cfg.dense_emb}[kind]


def layer_widths(cfg):
    """Input width of every recurrent layer plus the final feature width.

    Returns ``(inputs, pre_ae, final)`` where ``pre_ae[l]`` is the width
    entering the autoencoder after layer ``l`` (1-based keys).
    """
    w = cfg.word_feature_width
    h2 = 2 * cfg.lstm_hidden
    inputs, pre_ae = [], {}
    if cfg.connection_mode == "residual":
        step = h2
        if cfg.ae_layers:
            raise ConfigError("autoencoders are not supported in residual mode")
        if w != step and not cfg.residual_projection:
            raise ConfigError(
                f"residual sum of width {step} with input width {w} needs residual_projection")
        x = w
        for _ in range(cfg.num_layers):
            inputs.append(x)
            x = step + w * cfg.dense_emb
        return inputs, pre_ae, x

    segs = [("emb", w)]
    for layer in range(1, cfg.num_layers + 1):
        inputs.append(sum(n for _, n in segs))
        new = [("rec", h2)] + ([("attn", h2)] if cfg.use_attention else [])
        if cfg.connection_mode == "dense":
            new += [s for s in segs if _dense_keep(cfg, s[0])]
        width = sum(n for _, n in new)
        if layer in cfg.ae_layers:
            if not cfg.ae_hidden < width:
                raise ConfigError(
                    f"ae_hidden={cfg.ae_hidden} must be below its input width {width} "
                    f"(layer {layer})")
            pre_ae[layer] = width
            new = [("ae", cfg.ae_hidden)]
        segs = new
    return inputs, pre_ae, sum(n for _, n in segs)


# ------------------------------------------------------------- components

def glorot(rng, fan_in, fan_out, dtype):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dtype)


def char_features(table, conv_w, conv_b, chars, kernel):
    """Char-embedding lookup, width-``kernel`` convolution, ReLU, max over chars.

    ``chars`` is (B, T, Lw) with PAD=0 filling.  A word shorter than the
    kernel still yields one window (padded with zero rows).
    """
    chars = np.asarray(chars)
    Lw = chars.shape[-1]
    if Lw < kernel:
        chars = np.pad(chars, [(0, 0)] * (chars.ndim - 1) + [(0, kernel - Lw)])
        Lw = kernel
    emb = T.embedding(table, chars)
    n_win = Lw - kernel + 1
    windows = T.concat([emb[..., k:k + n_win, :] for k in range(kernel)], axis=-1)
    act = T.relu(T.linear(windows, conv_w, conv_b))
    lengths = (chars != 0).sum(axis=-1)
    valid = np.maximum(1, lengths - kernel + 1)
    win_mask = (np.arange(n_win) < valid[..., None]).astype(float)
    pooled, _ = T.max_pool_time(act, win_mask)
    return pooled


def bilstm_layer(x, mask, fw, bw):
    """Forward and backward LSTMs over ``x``; outputs concatenated per step.

    ``fw``/``bw`` are ``(w_input, w_hidden, bias)`` triples.
    """
    return T.concat([T.lstm(x, mask, *fw, reverse=False),
                     T.lstm(x, mask, *bw, reverse=True)], axis=-1)


@dataclass
class AttentionResult:
    scores: np.ndarray     # cosine matrix, rows = this side
    alpha: np.ndarray      # row-stochastic over the other side's real tokens
    context: Tensor        # weighted sums of the other side's hidden states


def co_attention(h_p, h_q, mask_p, mask_q):
    """Cosine co-attention; the Q side reuses the transposed score matrix."""
    e = T.cosine_matrix(h_p, h_q)
    alpha_p = T.softmax_masked(e, np.asarray(mask_q)[..., None, :])
    alpha_q = T.softmax_masked(T.swapaxes(e, -1, -2), np.asarray(mask_p)[..., None, :])
    a_p = T.matmul(alpha_p, h_q)
    a_q = T.matmul(alpha_q, h_p)
    return (AttentionResult(e.data, alpha_p.data, a_p),
            AttentionResult(np.swapaxes(e.data, -1, -2), alpha_q.data, a_q))


def layer_transition(x, h, a, mode, proj=None):
    """Next-layer input from the layer input ``x``, hidden ``h`` and context ``a``.

    dense: ``[h; a; x]``; plain: ``[h; a]``; residual: ``h + a + proj(x)``.
    ``a`` is None when attention is off; ``proj`` None means identity.
    """
    if mode == "dense":
        return T.concat([h] + ([a] if a is not None else []) + [x], axis=-1)
    if mode == "plain":
        return T.concat([h] + ([a] if a is not None else []), axis=-1)
    if mode != "residual":
        raise ConfigError(f"unknown connection mode {mode!r}")
    s = h if a is None else T.add(h, a)
    if proj is not None:
        x = T.matmul(x, proj)
    elif x.shape[-1] != s.shape[-1]:
        raise ConfigError(f"residual width mismatch {x.shape[-1]} vs {s.shape[-1]}")
    return T.add(s, x)


def bottleneck(x, mask, enc_w, enc_b, dec_w, dec_b, activation=T.relu):
    """Encode ``x`` to the bottleneck width; masked MSE of the decoded copy.

    Gradients reach ``x`` through both the encoder and the target.
    """
    encoded = activation(T.linear(x, enc_w, enc_b))
    recon = T.linear(encoded, dec_w, dec_b)
    m = np.asarray(mask, dtype=x.dtype)[..., None]
    diff = T.mul(T.sub(recon, x), m)
    denom = m.sum() * x.shape[-1]
    return encoded, T.mul(T.sum_(T.mul(diff, diff)), 1.0 / denom)


def interact(p, q):
    """``[p; q; p+q; p-q; |p-q|]`` along the last axis."""
    d = T.sub(p, q)
    return T.concat([p, q, T.add(p, q), d, T.abs_(d)], axis=-1)


def pool_and_interact(feat_p, feat_q, mask_p, mask_q):
    p, rec_p = T.max_pool_time(feat_p, mask_p)
    q, rec_q = T.max_pool_time(feat_q, mask_q)
    return interact(p, q), rec_p, rec_q


# ------------------------------------------------------------------- model

@dataclass
class Diagnostics:
    alpha_p: list = field(default_factory=list)     # per layer, B x I x J
    alpha_q: list = field(default_factory=list)
    scores: list = field(default_factory=list)
    pool_p: object = None
    pool_q: object = None
    inputs_p: list = field(default_factory=list)    # x^l per layer, when kept
    inputs_q: list = field(default_factory=list)


@dataclass
class ForwardResult:
    logits: Tensor
    probs: np.ndarray
    recon: Tensor
    diagnostics: Diagnostics


@dataclass
class LossResult:
    total: Tensor
    xent: float
    recon: float
    forward: ForwardResult


class DRCN:
    def __init__(self, config, seed=0, word_vectors=None):
        self.config = config.validate()
        cfg = config
        if cfg.vocab_size < 2 or cfg.char_vocab_size < 2:
            raise ConfigError("vocab_size and char_vocab_size must be set (>= 2)")
        dt = np.dtype(cfg.dtype).type
        rng = np.random.default_rng(seed)
        self.params = {}
        self.buffers = {}

        def param(name, arr):
            self.params[name] = Tensor(np.asarray(arr, dtype=dt), requires_grad=True, name=name)

        V, d = cfg.vocab_size, cfg.word_dim
        if word_vectors is None:
            word_vectors = rng.normal(0.0, 0.1, size=(V, d))
            word_vectors[0] = 0.0
        word_vectors = np.asarray(word_vectors, dtype=dt)
        if word_vectors.shape != (V, d):
            raise ConfigError(f"word vectors {word_vectors.shape} != ({V}, {d})")
        if cfg.use_trainable_emb:
            param("emb.trainable", word_vectors.copy())
        if cfg.use_fixed_emb:
            self.buffers["emb.fixed"] = word_vectors.copy()
        chars = rng.normal(0.0, 0.1, size=(cfg.char_vocab_size, cfg.char_emb_dim))
        chars[0] = 0.0
        param("char.emb", chars)
        param("char.conv.w", glorot(rng, cfg.char_kernel * cfg.char_emb_dim, cfg.char_out_dim, dt))
        param("char.conv.b", np.zeros(cfg.char_out_dim))

        inputs, pre_ae, final = layer_widths(cfg)
        H = cfg.lstm_hidden
        for layer, width in enumerate(inputs, 1):
            for side in ("fw", "bw"):
                param(f"l{layer}.{side}.w", glorot(rng, width, 4 * H, dt))
                param(f"l{layer}.{side}.u", glorot(rng, H, 4 * H, dt))
                b = np.zeros(4 * H)
                b[H:2 * H] = 1.0
                param(f"l{layer}.{side}.b", b)
            if layer in pre_ae:
                param(f"ae{layer}.enc.w", glorot(rng, pre_ae[layer], cfg.ae_hidden, dt))
                param(f"ae{layer}.enc.b", np.zeros(cfg.ae_hidden))
                param(f"ae{layer}.dec.w", glorot(rng, cfg.ae_hidden, pre_ae[layer], dt))
                param(f"ae{layer}.dec.b", np.zeros(pre_ae[layer]))
        if cfg.connection_mode == "residual" and cfg.word_feature_width != 2 * H:
            param("res.proj", glorot(rng, cfg.word_feature_width, 2 * H, dt))

        sizes = [5 * final, cfg.fc_hidden, cfg.fc_hidden, cfg.num_classes]
        for k in range(3):
            param(f"fc{k + 1}.w", glorot(rng, sizes[k], sizes[k + 1], dt))
            param(f"fc{k + 1}.b", np.zeros(sizes[k + 1]))
        if cfg.use_batch_norm:
            for k in (1, 2):
                param(f"bn{k}.gamma", np.ones(cfg.fc_hidden))
                param(f"bn{k}.beta", np.zeros(cfg.fc_hidden))
                self.buffers[f"bn{k}.mean"] = np.zeros(cfg.fc_hidden, dtype=dt)
                self.buffers[f"bn{k}.var"] = np.ones(cfg.fc_hidden, dtype=dt)
        self.final_width = final

    # --------------------------------------------------------- bookkeeping

    EMBEDDING_PARAMS = ("emb.trainable", "char.emb")

    def parameters(self):
        return list(self.params.values())

    def num_parameters(self, include_embeddings=False):
        return sum(p.data.size for n, p in self.params.items()
                   if include_embeddings or n not in self.EMBEDDING_PARAMS)

    def state_dict(self):
        state = {n: p.data for n, p in self.params.items()}
        state.update(self.buffers)
        return state

    def load_state_dict(self, state):
        expected = set(self.params) | set(self.buffers)
        if set(state) != expected:
            raise ConfigError(f"checkpoint tensors differ from model: "
                              f"{sorted(expected.symmetric_difference(state))}")
        for n, arr in state.items():
            target = self.params[n].data if n in self.params else self.buffers[n]
            if target.shape != arr.shape:
                raise ConfigError(f"tensor {n}: shape {arr.shape} != {target.shape}")
            target[...] = arr

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    # ------------------------------------------------------------- forward

    def word_rep(self, side, training=False, rng=None):
        """Per-token ``[e_tr; e_fix; char; flag]`` for one padded side."""
        cfg = self.config
        parts = []
        if cfg.use_trainable_emb:
            parts.append(T.dropout(T.embedding(self.params["emb.trainable"], side.ids),
                                   cfg.keep_emb, rng, training))
        if cfg.use_fixed_emb:
            parts.append(T.dropout(T.embedding(Tensor(self.buffers["emb.fixed"]), side.ids),
                                   cfg.keep_emb, rng, training))
        c = char_features(self.params["char.emb"], self.params["char.conv.w"],
                          self.params["char.conv.b"], side.chars, cfg.char_kernel)
        parts.append(T.dropout(c, cfg.keep_emb, rng, training))
        if cfg.use_match_flag:
            parts.append(Tensor(np.asarray(side.flags, dtype=np.dtype(cfg.dtype))[..., None]))
        return T.concat(parts, axis=-1)

    def _lstm(self, layer):
        p = self.params
        return ([p[f"l{layer}.fw.{k}"] for k in "wub"], [p[f"l{layer}.bw.{k}"] for k in "wub"])

    def encode(self, batch, training=False, rng=None, keep_states=False):
        """Run the recurrent stack on both sides; returns final features."""
        cfg = self.config
        mode = cfg.connection_mode
        mp, mq = batch.p.mask, batch.q.mask
        wp = self.word_rep(batch.p, training, rng)
        wq = self.word_rep(batch.q, training, rng)
        diag = Diagnostics()
        recon = None
        xp, xq = wp, wq
        segs_p, segs_q = [("emb", wp)], [("emb", wq)]
        for layer in range(1, cfg.num_layers + 1):
            if keep_states:
                diag.inputs_p.append(xp.data)
                diag.inputs_q.append(xq.data)
            fw, bw = self._lstm(layer)
            hp = bilstm_layer(xp, mp, fw, bw)
            hq = bilstm_layer(xq, mq, fw, bw)
            ap = aq = None
            if cfg.use_attention:
                att_p, att_q = co_attention(hp, hq, mp, mq)
                ap, aq = att_p.context, att_q.context
                diag.alpha_p.append(att_p.alpha)
                diag.alpha_q.append(att_q.alpha)
                diag.scores.append(att_p.scores)

            if mode == "dense":
                segs_p = self._dense_segments(hp, ap, segs_p)
                segs_q = self._dense_segments(hq, aq, segs_q)
                xp = T.concat([t for _, t in segs_p], axis=-1)
                xq = T.concat([t for _, t in segs_q], axis=-1)
            elif mode == "residual":
                proj = self.params.get("res.proj") if layer == 1 else None
                base_p = wp if layer == 1 else rp
                base_q = wq if layer == 1 else rq
                rp = layer_transition(base_p, hp, ap, "residual", proj)
                rq = layer_transition(base_q, hq, aq, "residual", proj)
                xp = T.concat([rp, wp], axis=-1) if cfg.dense_emb else rp
                xq = T.concat([rq, wq], axis=-1) if cfg.dense_emb else rq
            else:
                xp = layer_transition(xp, hp, ap, "plain")
                xq = layer_transition(xq, hq, aq, "plain")

            if layer in cfg.ae_layers:
                ae = [self.params[f"ae{layer}.{k}"] for k in ("enc.w", "enc.b", "dec.w", "dec.b")]
                xp, rec_p = bottleneck(xp, mp, *ae)
                xq, rec_q = bottleneck(xq, mq, *ae)
                xp = T.dropout(xp, cfg.keep_ae, rng, training)
                xq = T.dropout(xq, cfg.keep_ae, rng, training)
                term = T.mul(T.add(rec_p, rec_q), 0.5)
                recon = term if recon is None else T.add(recon, term)
                segs_p, segs_q = [("ae", xp)], [("ae", xq)]
        return xp, xq, recon, diag

    def _dense_segments(self, h, a, segs):
        new = [("rec", h)] + ([("attn", a)] if a is not None else [])
        return new + [s for s in segs if _dense_keep(self.config, s[0])]

    def classify(self, v, training=False, rng=None):
        """Three FC layers (ReLU on the hidden two) with dropout before each."""
        cfg = self.config
        p = self.params
        x = v
        for k in (1, 2):
            x = T.dropout(x, cfg.keep_fc, rng, training)
            x = T.relu(T.linear(x, p[f"fc{k}.w"], p[f"fc{k}.b"]))
            if cfg.use_batch_norm:
                x = T.batch_norm(x, p[f"bn{k}.gamma"], p[f"bn{k}.beta"],
                                 self.buffers[f"bn{k}.mean"], self.buffers[f"bn{k}.var"],
                                 training)
        x = T.dropout(x, cfg.keep_fc, rng, training)
        return T.linear(x, p["fc3.w"], p["fc3.b"])

    def forward(self, batch, training=False, rng=None, keep_states=False):
        if training and rng is None:
            raise ValueError("training forward needs an rng for dropout")
        fp, fq, recon, diag = self.encode(batch, training, rng, keep_states)
        if keep_states:
            diag.inputs_p.append(fp.data)
            diag.inputs_q.append(fq.data)
        v, diag.pool_p, diag.pool_q = pool_and_interact(fp, fq, batch.p.mask, batch.q.mask)
        logits = self.classify(v, training, rng)
        return ForwardResult(logits, T.softmax_np(logits.data), recon, diag)

    def loss(self, batch, training=False, rng=None):
        out = self.forward(batch, training, rng)
        xent = T.cross_entropy(out.logits, batch.labels)
        if out.recon is None:
            return LossResult(xent, float(xent.data), 0.0, out)
        total = T.add(xent, T.mul(out.recon, self.config.ae_loss_weight))
        return LossResult(total, float(xent.data), float(out.recon.data), out)

    def predict_proba(self, batch):
        with T.no_grad():
            return self.forward(batch).probs
