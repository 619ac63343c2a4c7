"""Window-gated recursive encoder with a BiLSTM decoder over BMES tags.

Each character position embeds its surrounding window of k characters.  A
stack of gated filter cells (filter width f) combines adjacent vectors until
one d-dimensional vector per position remains; a bidirectional LSTM reads
those and a linear layer scores the four tags.  Training optimizes
position-wise cross-entropy; decoding runs a Viterbi search constrained to
legal BMES transitions.

All weight matrices are stored (out, in) and applied as `x @ W.T + b`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import corpus as corpus_mod
from .corpus import PAD_ID, TAGS, TAG_TO_ID, TaggedSentence, Vocab, from_bmes
from .nn import (
    ParamStore,
    load_container,
    log_softmax,
    make_rng,
    save_container,
    sigmoid,
    softmax,
    xavier_uniform,
)

_B, _M, _E, _S = (TAG_TO_ID[t] for t in TAGS)
# legal predecessors of each tag in a BMES path
_PRED = {
    _B: (_E, _S),
    _M: (_B, _M),
    _E: (_B, _M),
    _S: (_E, _S),
}
_START = (_B, _S)
_END = (_E, _S)


@dataclass
class ModelConfig:
    dim: int = 100
    window: int = 5
    filter_size: int = 2
    use_bigrams: bool = True
    char_vocab: int = 0
    bigram_vocab: int = 0

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be positive")
        if self.window < 1 or self.window % 2 == 0:
            raise ValueError("window must be odd and >= 1")
        if self.filter_size < 2:
            raise ValueError("filter_size must be >= 2")
        if (self.window - 1) % (self.filter_size - 1) != 0:
            raise ValueError(
                "window %d cannot telescope to width 1 with filter %d"
                % (self.window, self.filter_size)
            )

    @property
    def depth(self):
        return (self.window - 1) // (self.filter_size - 1)

    def to_json_dict(self):
        return {
            "dim": self.dim,
            "window": self.window,
            "filter_size": self.filter_size,
            "use_bigrams": self.use_bigrams,
            "char_vocab": self.char_vocab,
            "bigram_vocab": self.bigram_vocab,
        }

    @classmethod
    def from_json_dict(cls, d):
        return cls(**{k: d[k] for k in (
            "dim", "window", "filter_size", "use_bigrams", "char_vocab", "bigram_vocab")})


@dataclass
class GateCellWeights:
    """One gated filter cell.

    For filter width f over d-dimensional inputs: U is ((f+1)d, (f+1)d),
    W is (d, fd), G is (fd, fd); biases match their gate widths.
    """

    U: np.ndarray
    W: np.ndarray
    G: np.ndarray
    bU: np.ndarray
    bW: np.ndarray
    bG: np.ndarray


def window_context(E, window, pad_vec):
    """Stack each position's window of vectors: out[i, j] = E[i - p + j]
    with pad_vec outside the sentence, p = (window - 1) / 2."""
    E = np.asarray(E, dtype=np.float64)
    n, d = E.shape
    p = (window - 1) // 2
    pad_block = np.tile(np.asarray(pad_vec, dtype=np.float64), (p, 1))
    padded = np.concatenate([pad_block, E, pad_block], axis=0)
    if n == 0:
        return np.zeros((0, window, d))
    return np.stack([padded[j : j + n] for j in range(window)], axis=1)


def gate_cell_forward(X, w):
    """Combine f adjacent d-vectors per row of X (shape (batch, f*d)).

    Reset gates modulate the inputs before the candidate, update gates mix
    the candidate with each raw input:
        r = sigmoid(X G^T + bG),  h' = tanh((r * X) W^T + bW)
        z = sigmoid([h'; X] U^T + bU)
        out = z_h * h' + sum_i z_i * x_i
    """
    d = w.W.shape[0]
    r = sigmoid(X @ w.G.T + w.bG)
    u = r * X
    hp = np.tanh(u @ w.W.T + w.bW)
    cat = np.concatenate([hp, X], axis=1)
    z = sigmoid(cat @ w.U.T + w.bU)
    batch = X.shape[0]
    f = X.shape[1] // d
    zin = z[:, d:].reshape(batch, f, d)
    Xb = X.reshape(batch, f, d)
    out = z[:, :d] * hp + np.sum(zin * Xb, axis=1)
    return out, (X, r, u, hp, z)


def gate_cell_backward(g, w, cache):
    """Gradient of a scalar loss through one cell application.

    `g` is d(loss)/d(out), shape (batch, d).  Returns (dX, grads) with
    grads keyed U, W, G, bU, bW, bG and summed over the batch.
    """
    X, r, u, hp, z = cache
    d = w.W.shape[0]
    batch = X.shape[0]
    f = X.shape[1] // d
    Xb = X.reshape(batch, f, d)
    zh = z[:, :d]
    zin = z[:, d:].reshape(batch, f, d)

    dz = np.concatenate([g * hp, (g[:, None, :] * Xb).reshape(batch, f * d)], axis=1)
    dX = (zin * g[:, None, :]).reshape(batch, f * d).copy()
    dhp = g * zh

    da = dz * z * (1.0 - z)
    cat = np.concatenate([hp, X], axis=1)
    dU = da.T @ cat
    dbU = da.sum(axis=0)
    dcat = da @ w.U
    dhp += dcat[:, :d]
    dX += dcat[:, d:]

    ds = dhp * (1.0 - hp * hp)
    dW = ds.T @ u
    dbW = ds.sum(axis=0)
    du = ds @ w.W
    dX += du * r
    dr = du * X

    dq = dr * r * (1.0 - r)
    dG = dq.T @ X
    dbG = dq.sum(axis=0)
    dX += dq @ w.G

    return dX, {"U": dU, "W": dW, "G": dG, "bU": dbU, "bW": dbW, "bG": dbG}


def encoder_forward(H0, cells, filter_size):
    """Run the telescoping cell stack: (n, k, d) -> (n, d).

    Layer l applies its cell to every run of f adjacent vectors, shrinking
    the window width by f - 1.  All slots of a layer share that layer's
    weights.
    """
    n, width, d = H0.shape
    H = H0
    caches = []
    f = filter_size
    for w in cells:
        slots = width - f + 1
        X = np.stack(
            [H[:, j : j + f, :].reshape(n, f * d) for j in range(slots)], axis=1
        ).reshape(n * slots, f * d)
        out, cache = gate_cell_forward(X, w)
        caches.append((cache, width))
        H = out.reshape(n, slots, d)
        width = slots
    if width != 1:
        raise ValueError("encoder stack left width %d, expected 1" % width)
    return H.reshape(n, d), caches


def encoder_backward(dHL, cells, caches, filter_size):
    """Backward pass of encoder_forward.  Returns (dH0, per-layer grads)."""
    n, d = dHL.shape
    f = filter_size
    dH = dHL.reshape(n, 1, d)
    layer_grads = [None] * len(cells)
    for l in range(len(cells) - 1, -1, -1):
        cache, width = caches[l]
        slots = dH.shape[1]
        g = dH.reshape(n * slots, d)
        dX, grads = gate_cell_backward(g, cells[l], cache)
        layer_grads[l] = grads
        dX4 = dX.reshape(n, slots, f, d)
        dH_prev = np.zeros((n, width, d))
        for j in range(slots):
            dH_prev[:, j : j + f, :] += dX4[:, j]
        dH = dH_prev
    return dH, layer_grads


def lstm_forward(X, W, b):
    """Unidirectional LSTM over X (n, d_in); returns (states (n, h), caches).

    W is (4h, d_in + h) with gate blocks ordered input, forget, cell,
    output.  Initial hidden and cell states are zero.
    """
    n = X.shape[0]
    h = W.shape[0] // 4
    states = np.zeros((n, h))
    caches = []
    hprev = np.zeros(h)
    cprev = np.zeros(h)
    for t in range(n):
        cat = np.concatenate([X[t], hprev])
        zraw = cat @ W.T + b
        gi = sigmoid(zraw[:h])
        gf = sigmoid(zraw[h : 2 * h])
        gc = np.tanh(zraw[2 * h : 3 * h])
        go = sigmoid(zraw[3 * h :])
        c = gf * cprev + gi * gc
        tc = np.tanh(c)
        hcur = go * tc
        states[t] = hcur
        caches.append((cat, gi, gf, gc, go, tc, cprev))
        hprev, cprev = hcur, c
    return states, caches


def lstm_backward(dstates, W, caches):
    """Backward pass of lstm_forward.  Returns (dX, dW, db)."""
    n = dstates.shape[0]
    h = W.shape[0] // 4
    d_in = W.shape[1] - h
    dW = np.zeros_like(W)
    db = np.zeros(4 * h)
    dX = np.zeros((n, d_in))
    dh_next = np.zeros(h)
    dc_next = np.zeros(h)
    for t in range(n - 1, -1, -1):
        cat, gi, gf, gc, go, tc, cprev = caches[t]
        dh = dstates[t] + dh_next
        dgo = dh * tc
        dc = dc_next + dh * go * (1.0 - tc * tc)
        dgi = dc * gc
        dgc = dc * gi
        dgf = dc * cprev
        dc_next = dc * gf
        dz = np.concatenate(
            [
                dgi * gi * (1.0 - gi),
                dgf * gf * (1.0 - gf),
                dgc * (1.0 - gc * gc),
                dgo * go * (1.0 - go),
            ]
        )
        dW += np.outer(dz, cat)
        db += dz
        dcat = dz @ W
        dX[t] = dcat[:d_in]
        dh_next = dcat[d_in:]
    return dX, dW, db


def viterbi_bmes(scores):
    """Best tag sequence under hard BMES transition constraints.

    Paths must start in B or S, end in E or S, and only use transitions
    B->M|E, M->M|E, E->B|S, S->B|S.  Returns tag strings.
    """
    n = scores.shape[0]
    if n == 0:
        return []
    neg = -np.inf
    dp = np.full(4, neg)
    for t in _START:
        dp[t] = scores[0, t]
    back = np.zeros((n, 4), dtype=np.int64)
    for pos in range(1, n):
        new = np.full(4, neg)
        for t in range(4):
            best_s, best_v = -1, neg
            for s in _PRED[t]:
                if dp[s] > best_v:
                    best_s, best_v = s, dp[s]
            if best_s >= 0 and best_v > neg:
                new[t] = best_v + scores[pos, t]
                back[pos, t] = best_s
        dp = new
    final = np.full(4, neg)
    for t in _END:
        final[t] = dp[t]
    tag = int(np.argmax(final))
    path = [tag]
    for pos in range(n - 1, 0, -1):
        tag = int(back[pos, tag])
        path.append(tag)
    path.reverse()
    return [TAGS[t] for t in path]


class SegModel:
    """The full tagger: embeddings, encoder stack, BiLSTM decoder, scorer."""

    def __init__(self, config, vocab, store):
        if config.char_vocab != vocab.size:
            raise ValueError("config char_vocab does not match vocab")
        if config.use_bigrams and config.bigram_vocab != vocab.bigram_size:
            raise ValueError("config bigram_vocab does not match vocab")
        self.config = config
        self.vocab = vocab
        self.store = store

    @classmethod
    def new(cls, config, vocab, seed, char_embeddings=None):
        """Fresh model.  Embedding tables draw from uniform [-0.05, 0.05),
        affine maps from the fan-balanced uniform, biases start at zero.
        `char_embeddings` (e.g. from load_embeddings) overrides the random
        character table."""
        config = ModelConfig(
            dim=config.dim,
            window=config.window,
            filter_size=config.filter_size,
            use_bigrams=config.use_bigrams,
            char_vocab=vocab.size,
            bigram_vocab=vocab.bigram_size if config.use_bigrams else 0,
        )
        rng = make_rng(seed, "init")
        d = config.dim
        f = config.filter_size
        store = ParamStore()
        if char_embeddings is not None:
            emb = np.array(char_embeddings, dtype=np.float64)
            if emb.shape != (vocab.size, d):
                raise ValueError("char_embeddings shape mismatch")
            store.add("char_emb", emb)
        else:
            store.add("char_emb", rng.uniform(-0.05, 0.05, size=(vocab.size, d)))
        if config.use_bigrams:
            store.add("bigram_emb", rng.uniform(-0.05, 0.05, size=(vocab.bigram_size, d)))
            store.add("proj.W", xavier_uniform(rng, (d, 2 * d)))
            store.add("proj.b", np.zeros(d))
        for l in range(config.depth):
            store.add("enc%d.U" % l, xavier_uniform(rng, ((f + 1) * d, (f + 1) * d)))
            store.add("enc%d.W" % l, xavier_uniform(rng, (d, f * d)))
            store.add("enc%d.G" % l, xavier_uniform(rng, (f * d, f * d)))
            store.add("enc%d.bU" % l, np.zeros((f + 1) * d))
            store.add("enc%d.bW" % l, np.zeros(d))
            store.add("enc%d.bG" % l, np.zeros(f * d))
        for direction in ("lstm_f", "lstm_b"):
            store.add("%s.W" % direction, xavier_uniform(rng, (4 * d, 2 * d)))
            store.add("%s.b" % direction, np.zeros(4 * d))
        store.add("out.W", xavier_uniform(rng, (len(TAGS), 2 * d)))
        store.add("out.b", np.zeros(len(TAGS)))
        return cls(config, vocab, store)

    def cells(self):
        p = self.store.params
        return [
            GateCellWeights(
                U=p["enc%d.U" % l],
                W=p["enc%d.W" % l],
                G=p["enc%d.G" % l],
                bU=p["enc%d.bU" % l],
                bW=p["enc%d.bW" % l],
                bG=p["enc%d.bG" % l],
            )
            for l in range(self.config.depth)
        ]

    def encode(self, tagged):
        """Map a TaggedSentence to (char_ids, bigram_ids, tag_ids) arrays."""
        chars = tagged.chars
        char_ids = np.array([self.vocab.char_id(c) for c in chars], dtype=np.int64)
        if self.config.use_bigrams:
            pairs = corpus_mod._sentence_bigrams(chars)
            bigram_ids = np.array([self.vocab.bigram_id(p) for p in pairs], dtype=np.int64)
        else:
            bigram_ids = None
        tag_ids = np.array([TAG_TO_ID[t] for t in tagged.tags], dtype=np.int64)
        return char_ids, bigram_ids, tag_ids

    def encode_chars(self, tokens):
        char_ids = np.array([self.vocab.char_id(c) for c in tokens], dtype=np.int64)
        if self.config.use_bigrams:
            pairs = corpus_mod._sentence_bigrams(tokens)
            bigram_ids = np.array([self.vocab.bigram_id(p) for p in pairs], dtype=np.int64)
        else:
            bigram_ids = None
        return char_ids, bigram_ids

    def _padded_ids(self, char_ids, bigram_ids):
        p = (self.config.window - 1) // 2
        pad_c = np.full(p, PAD_ID, dtype=np.int64)
        cp = np.concatenate([pad_c, char_ids, pad_c])
        if self.config.use_bigrams:
            pad_b = np.full(p, Vocab.BIGRAM_PAD_ID, dtype=np.int64)
            bp = np.concatenate([pad_b, bigram_ids, pad_b])
        else:
            bp = None
        return cp, bp

    def forward(self, char_ids, bigram_ids=None):
        """Tag scores for one sentence: returns (scores (n, 4), cache)."""
        params = self.store.params
        cfg = self.config
        n = len(char_ids)
        k = cfg.window
        d = cfg.dim
        cp, bp = self._padded_ids(char_ids, bigram_ids)
        Echar = params["char_emb"][cp]
        if cfg.use_bigrams:
            Ebi = params["bigram_emb"][bp]
            X2 = np.concatenate([Echar, Ebi], axis=1)
            e = X2 @ params["proj.W"].T + params["proj.b"]
        else:
            X2 = None
            e = Echar
        if n:
            H0 = np.stack([e[j : j + n] for j in range(k)], axis=1)
        else:
            H0 = np.zeros((0, k, d))
        HL, enc_caches = encoder_forward(H0, self.cells(), cfg.filter_size)
        sf, cf = lstm_forward(HL, params["lstm_f.W"], params["lstm_f.b"])
        sb_rev, cb = lstm_forward(HL[::-1], params["lstm_b.W"], params["lstm_b.b"])
        sb = sb_rev[::-1]
        states = np.concatenate([sf, sb], axis=1)
        scores = states @ params["out.W"].T + params["out.b"]
        cache = {
            "n": n,
            "cp": cp,
            "bp": bp,
            "Echar": Echar,
            "X2": X2,
            "e": e,
            "enc_caches": enc_caches,
            "HL": HL,
            "cf": cf,
            "cb": cb,
            "states": states,
        }
        return scores, cache

    def sentence_loss(self, scores, tag_ids):
        """Mean cross-entropy over positions; also returns d(loss)/d(scores)."""
        n = scores.shape[0]
        if n == 0:
            raise ValueError("empty sentence has no loss")
        logp = log_softmax(scores, axis=1)
        loss = -float(np.mean(logp[np.arange(n), tag_ids]))
        dscores = softmax(scores, axis=1)
        dscores[np.arange(n), tag_ids] -= 1.0
        dscores /= n
        return loss, dscores

    def _backward(self, dscores, cache, grads, scale=1.0):
        """Accumulate scale * d(loss)/d(params) into `grads` in place."""
        params = self.store.params
        cfg = self.config
        n = cache["n"]
        k = cfg.window
        d = cfg.dim
        if scale != 1.0:
            dscores = dscores * scale
        states = cache["states"]
        grads["out.W"] += dscores.T @ states
        grads["out.b"] += dscores.sum(axis=0)
        dstates = dscores @ params["out.W"]
        dsf = dstates[:, :d]
        dsb = dstates[:, d:]
        dHL_f, dWf, dbf = lstm_backward(dsf, params["lstm_f.W"], cache["cf"])
        dHL_b_rev, dWb, dbb = lstm_backward(dsb[::-1], params["lstm_b.W"], cache["cb"])
        grads["lstm_f.W"] += dWf
        grads["lstm_f.b"] += dbf
        grads["lstm_b.W"] += dWb
        grads["lstm_b.b"] += dbb
        dHL = dHL_f + dHL_b_rev[::-1]
        dH0, layer_grads = encoder_backward(dHL, self.cells(), cache["enc_caches"], cfg.filter_size)
        for l, lg in enumerate(layer_grads):
            for key, val in lg.items():
                grads["enc%d.%s" % (l, key)] += val
        de = np.zeros_like(cache["e"])
        for j in range(k):
            de[j : j + n] += dH0[:, j]
        if cfg.use_bigrams:
            grads["proj.W"] += de.T @ cache["X2"]
            grads["proj.b"] += de.sum(axis=0)
            dX2 = de @ params["proj.W"]
            np.add.at(grads["char_emb"], cache["cp"], dX2[:, :d])
            np.add.at(grads["bigram_emb"], cache["bp"], dX2[:, d:])
        else:
            np.add.at(grads["char_emb"], cache["cp"], de)

    def loss_and_grads(self, batch, scales=None):
        """Weighted-mean loss and gradients over a batch of encoded
        sentences [(char_ids, bigram_ids, tag_ids), ..].

        With `scales` (one weight per sentence) both the loss and the
        gradient are sum(scale_i * x_i) / sum(scale_i); the default is the
        plain mean.  Zero-weight sentences are skipped entirely.
        """
        if not batch:
            raise ValueError("empty batch")
        if scales is None:
            scales = [1.0] * len(batch)
        if len(scales) != len(batch):
            raise ValueError("one scale per sentence required")
        total = float(np.sum(scales))
        if total <= 0.0:
            raise ValueError("batch weights sum to zero")
        grads = {name: np.zeros_like(p) for name, p in self.store.params.items()}
        loss_sum = 0.0
        for (char_ids, bigram_ids, tag_ids), scale in zip(batch, scales):
            if scale == 0.0:
                continue
            scores, cache = self.forward(char_ids, bigram_ids)
            loss, dscores = self.sentence_loss(scores, tag_ids)
            loss_sum += scale * loss
            self._backward(dscores, cache, grads, scale=scale)
        for g in grads.values():
            g /= total
        return loss_sum / total, grads

    def batch_loss(self, batch, scales=None):
        """Weighted-mean loss only, no gradients."""
        if not batch:
            raise ValueError("empty batch")
        if scales is None:
            scales = [1.0] * len(batch)
        total = float(np.sum(scales))
        if total <= 0.0:
            raise ValueError("batch weights sum to zero")
        loss_sum = 0.0
        for (char_ids, bigram_ids, tag_ids), scale in zip(batch, scales):
            if scale == 0.0:
                continue
            scores, _ = self.forward(char_ids, bigram_ids)
            loss, _ = self.sentence_loss(scores, tag_ids)
            loss_sum += scale * loss
        return loss_sum / total

    def predict(self, tokens):
        """Tag a token sequence; returns a structurally valid TaggedSentence."""
        tokens = list(tokens)
        if not tokens:
            return TaggedSentence([], [])
        char_ids, bigram_ids = self.encode_chars(tokens)
        scores, _ = self.forward(char_ids, bigram_ids)
        return TaggedSentence(tokens, viterbi_bmes(scores))

    def segment(self, tokens):
        """Predicted word list for a token sequence."""
        return from_bmes(self.predict(tokens))

    def save(self, path):
        meta = {
            "format": 1,
            "kind": "cwseg-segmenter",
            "config": self.config.to_json_dict(),
            "tag_scheme": "".join(TAGS),
            "vocab": self.vocab.to_json_dict(),
            "vocab_hash": self.vocab.content_hash(),
        }
        save_container(path, self.store.params, meta)

    @classmethod
    def load(cls, path):
        params, meta = load_container(path)
        if meta.get("kind") != "cwseg-segmenter":
            raise ValueError("container does not hold a segmenter model")
        config = ModelConfig.from_json_dict(meta["config"])
        vocab = Vocab.from_json_dict(meta["vocab"])
        store = ParamStore()
        for name, arr in params.items():
            store.add(name, arr)
        return cls(config, vocab, store)
