import itertools
import math

import numpy as np
import pytest

import checks
from cwseg.corpus import TAG_TO_ID, TAGS, TaggedSentence, build_vocab, to_bmes
from cwseg.model import (
    GateCellWeights,
    ModelConfig,
    SegModel,
    encoder_forward,
    gate_cell_forward,
    lstm_forward,
    viterbi_bmes,
    window_context,
)
from cwseg.nn import make_rng, sigmoid


def zero_cell(d, f):
    return GateCellWeights(
        U=np.zeros(((f + 1) * d, (f + 1) * d)),
        W=np.zeros((d, f * d)),
        G=np.zeros((f * d, f * d)),
        bU=np.zeros((f + 1) * d),
        bW=np.zeros(d),
        bG=np.zeros(f * d),
    )


def small_vocab():
    return build_vocab([to_bmes(["他", "来到", "北京"])], bigram_min_count=1)


def test_config_validation():
    ModelConfig(dim=8, window=5, filter_size=2)
    with pytest.raises(ValueError):
        ModelConfig(dim=0)
    with pytest.raises(ValueError):
        ModelConfig(window=4)
    with pytest.raises(ValueError):
        ModelConfig(filter_size=1)
    with pytest.raises(ValueError):
        ModelConfig(window=5, filter_size=4)  # 4 does not divide the shrink


def test_config_depth_and_json():
    assert ModelConfig(window=5, filter_size=2).depth == 4
    assert ModelConfig(window=3, filter_size=2).depth == 2
    assert ModelConfig(window=5, filter_size=3).depth == 2
    cfg = ModelConfig(dim=16, window=3, filter_size=2, use_bigrams=False, char_vocab=9)
    assert ModelConfig.from_json_dict(cfg.to_json_dict()) == cfg


def test_parameter_shapes_match_dimensions():
    v = small_vocab()
    m = SegModel.new(ModelConfig(dim=100, window=3, filter_size=2), v, seed=0)
    p = m.store.params
    assert p["enc0.U"].shape == (300, 300)
    assert p["enc0.W"].shape == (100, 200)
    assert p["enc0.G"].shape == (200, 200)
    assert p["char_emb"].shape == (v.size, 100)
    assert p["proj.W"].shape == (100, 200)
    assert p["lstm_f.W"].shape == (400, 200)
    assert p["out.W"].shape == (4, 200)


def test_window_context_example():
    e = np.array([[1.0, 2.0], [3.0, 4.0]])  # rows for 北, 京
    pad = np.zeros(2)
    H0 = window_context(e, 5, pad)
    assert H0.shape == (2, 5, 2)
    assert H0[0].tolist() == [[0, 0], [0, 0], [1, 2], [3, 4], [0, 0]]
    assert H0[1].tolist() == [[0, 0], [1, 2], [3, 4], [0, 0], [0, 0]]


def test_gate_cell_zero_weights_halves_sum():
    rng = np.random.default_rng(0)
    d, f = 6, 2
    a, b = rng.normal(size=(2, d))
    out, _ = gate_cell_forward(np.concatenate([a, b])[None, :], zero_cell(d, f))
    assert np.allclose(out[0], 0.5 * (a + b), atol=1e-15)


def test_encoder_zero_weights_binomial_mix():
    # two zero-weight layers average pairs twice: 0.25*(a + 2b + c)
    rng = np.random.default_rng(1)
    d, f = 4, 2
    a, b, c = rng.normal(size=(3, d))
    H0 = np.stack([a, b, c])[None, :, :]
    HL, _ = encoder_forward(H0, [zero_cell(d, f) for _ in range(2)], f)
    assert np.allclose(HL[0], 0.25 * (a + 2 * b + c), atol=1e-15)


def test_encoder_rejects_wrong_depth():
    H0 = np.zeros((2, 5, 3))
    with pytest.raises(ValueError):
        encoder_forward(H0, [zero_cell(3, 2) for _ in range(2)], 2)


def test_lstm_zero_weights_zero_states():
    X = np.random.default_rng(2).normal(size=(5, 3))
    states, _ = lstm_forward(X, np.zeros((12, 6)), np.zeros(12))
    assert np.all(states == 0.0)


def test_lstm_matches_loop_oracle():
    rng = np.random.default_rng(3)
    n, din, h = 6, 4, 5
    X = rng.normal(size=(n, din))
    W = rng.normal(0, 0.5, size=(4 * h, din + h))
    b = rng.normal(0, 0.5, size=4 * h)
    states, _ = lstm_forward(X, W, b)

    hid = np.zeros(h)
    cell = np.zeros(h)
    for t in range(n):
        z = W @ np.concatenate([X[t], hid]) + b
        gi = sigmoid(z[:h])
        gf = sigmoid(z[h : 2 * h])
        gc = np.tanh(z[2 * h : 3 * h])
        go = sigmoid(z[3 * h :])
        cell = gf * cell + gi * gc
        hid = go * np.tanh(cell)
        assert np.allclose(states[t], hid, atol=1e-12)


def test_gate_cell_gradients():
    assert checks.gate_cell_check() < 1e-5


def test_encoder_stack_gradients():
    assert checks.encoder_stack_check() < 1e-5


def test_decoder_gradients():
    assert checks.decoder_check() < 1e-5


def test_full_model_gradients_two_seeds():
    # the acceptance suite runs all five frozen seeds
    for seed in checks.FULL_MODEL_SEEDS[:2]:
        assert checks.full_model_check(seed) <= 1e-4


def valid_tag_paths(n):
    for seq in itertools.product(range(4), repeat=n):
        tags = [TAGS[t] for t in seq]
        if TaggedSentence(["x"] * n, tags).structurally_valid():
            yield seq


def test_viterbi_matches_exhaustive_search():
    rng = np.random.default_rng(5)
    for _ in range(120):
        n = int(rng.integers(1, 7))
        scores = rng.normal(size=(n, 4))
        path = viterbi_bmes(scores)
        assert TaggedSentence(["x"] * n, path).structurally_valid()
        got = sum(scores[i, TAG_TO_ID[t]] for i, t in enumerate(path))
        best = max(
            sum(scores[i, s] for i, s in enumerate(seq)) for seq in valid_tag_paths(n)
        )
        assert abs(got - best) < 1e-12


def test_viterbi_single_char_is_s():
    assert viterbi_bmes(np.array([[9.0, 9.0, 9.0, 0.0]])) == ["S"]


def make_model(dim=8, window=3, use_bigrams=True, seed=0):
    v = small_vocab()
    cfg = ModelConfig(dim=dim, window=window, filter_size=2, use_bigrams=use_bigrams)
    return SegModel.new(cfg, v, seed=seed)


def test_sentence_loss_reference_values():
    m = make_model()
    loss, _ = m.sentence_loss(np.zeros((1, 4)), np.array([0]))
    assert abs(loss - math.log(4.0)) < 1e-12
    scores = np.array([[10.0, 0.0, 0.0, 0.0]])
    loss, _ = m.sentence_loss(scores, np.array([0]))
    direct = math.log(np.exp(scores[0]).sum()) - scores[0, 0]
    assert abs(loss - direct) < 1e-12
    assert abs(loss - 1.3619051e-4) < 1e-9


def test_sentence_loss_gradient_form():
    m = make_model()
    rng = np.random.default_rng(0)
    scores = rng.normal(size=(3, 4))
    gold = np.array([0, 1, 3])
    _, dscores = m.sentence_loss(scores, gold)
    assert np.allclose(dscores.sum(axis=1), 0.0, atol=1e-12)
    direct = np.exp(scores) / np.exp(scores).sum(axis=1, keepdims=True)
    direct[np.arange(3), gold] -= 1.0
    assert np.allclose(dscores, direct / 3.0, atol=1e-12)


def test_batch_mean_semantics():
    m = make_model()
    s = m.encode(to_bmes(["他", "来到"]))
    loss1, g1 = m.loss_and_grads([s])
    loss2, g2 = m.loss_and_grads([s, s])
    assert abs(loss1 - loss2) < 1e-15
    for name in g1:
        assert np.allclose(g1[name], g2[name], atol=1e-12)


def test_zero_scales_drop_sentences():
    m = make_model()
    a = m.encode(to_bmes(["他", "来到"]))
    b = m.encode(to_bmes(["北京"]))
    loss_ref, g_ref = m.loss_and_grads([a])
    loss, g = m.loss_and_grads([a, b], scales=[1.0, 0.0])
    assert loss == loss_ref
    for name in g_ref:
        assert np.array_equal(g[name], g_ref[name])
    with pytest.raises(ValueError):
        m.loss_and_grads([a, b], scales=[0.0, 0.0])
    with pytest.raises(ValueError):
        m.loss_and_grads([a, b], scales=[1.0])
    with pytest.raises(ValueError):
        m.loss_and_grads([])


def test_batch_loss_matches_loss_and_grads():
    m = make_model()
    batch = [m.encode(to_bmes(["他", "来到"])), m.encode(to_bmes(["北京", "他"]))]
    loss, _ = m.loss_and_grads(batch, scales=[0.3, 1.7])
    assert abs(loss - m.batch_loss(batch, scales=[0.3, 1.7])) < 1e-15


def test_predict_structure_and_unknowns():
    m = make_model()
    out = m.predict(["他", "来", "未", "知"])  # includes chars outside the vocab
    assert out.chars == ["他", "来", "未", "知"]
    assert out.structurally_valid()
    assert m.predict([]).chars == []
    words = m.segment(["他", "来", "到"])
    assert "".join(words) == "他来到"


def test_no_bigram_variant_drops_parameters():
    m = make_model(use_bigrams=False)
    names = set(m.store.names())
    assert "bigram_emb" not in names and "proj.W" not in names
    assert m.predict(["他", "来"]).structurally_valid()


def test_injected_embeddings_are_used():
    v = small_vocab()
    cfg = ModelConfig(dim=4, window=3, filter_size=2)
    table = np.arange(v.size * 4, dtype=np.float64).reshape(v.size, 4)
    m = SegModel.new(cfg, v, seed=0, char_embeddings=table)
    assert np.array_equal(m.store["char_emb"], table)
    with pytest.raises(ValueError):
        SegModel.new(cfg, v, seed=0, char_embeddings=table[:, :2])


def test_constructor_checks_vocab_sizes():
    m = make_model()
    other = build_vocab([to_bmes(["完", "全", "不", "同"])], bigram_min_count=1)
    with pytest.raises(ValueError):
        SegModel(m.config, other, m.store)


def test_save_load_round_trip(tmp_path):
    m = make_model(dim=6)
    path = tmp_path / "m.cwseg"
    m.save(path)
    m2 = SegModel.load(path)
    assert m2.config == m.config
    assert m2.vocab == m.vocab
    for name in m.store.names():
        expect = m.store[name].astype(np.float32).astype(np.float64)
        assert np.array_equal(m2.store[name], expect)
    tokens = ["他", "来", "到", "北", "京"]
    assert m2.predict(tokens).structurally_valid()


def test_save_is_deterministic(tmp_path):
    m = make_model(dim=6, seed=3)
    pa, pb = tmp_path / "a.cwseg", tmp_path / "b.cwseg"
    m.save(pa)
    m.save(pb)
    assert pa.read_bytes() == pb.read_bytes()


def test_load_rejects_other_containers(tmp_path):
    from cwseg.nn import save_container

    p = tmp_path / "x.bin"
    save_container(p, {"w": np.zeros(2)}, {"kind": "something-else"})
    with pytest.raises(ValueError):
        SegModel.load(p)
