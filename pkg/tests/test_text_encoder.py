import numpy as np
import pytest

from camp import data
from camp import tensor as T
from camp.config import TrainConfig
from camp.model import DualEncoder, build_vocab
from camp.prompts import PromptConfig, build_mask, build_sequence, tokenize
from camp.tensor import Tensor, backward
from camp.text_encoder import CapacityError, SegmentEmbeddings, TextEncoder, project_and_concat, set_trainable


def make_encoder(seed=0, K=6, width=32, layers=2, heads=4, out_dim=None, max_len=128):
    vocab = build_vocab(TrainConfig(K=K))
    rng = np.random.default_rng(seed)
    enc = TextEncoder(rng, len(vocab), vocab.apt_rows(), vocab.n_apt, out_dim or 96 // K, width, layers, heads, max_len)
    return enc, vocab


def caption(seed):
    rng = np.random.default_rng(seed)
    return data.caption_of(data.ALL_FACTORS[rng.integers(len(data.ALL_FACTORS))])


@pytest.mark.parametrize("K", [1, 3, 6])
@pytest.mark.parametrize("negation", [False, True])
def test_singlepass_equals_multipass(K, negation):
    for seed in range(5):
        enc, vocab = make_encoder(seed, K=K)
        seq = build_sequence(tokenize(caption(seed), vocab), PromptConfig(K=K, include_negation=negation), vocab)
        with T.no_grad():
            single = enc.forward_singlepass(seq, build_mask(seq))
            multi = enc.forward_multipass(seq)
        assert single.pooled.shape == (seq.n_segments, 32)
        assert np.abs(single.pooled.data - multi.pooled.data).max() < 1e-5
        assert np.abs(single.projected.data - multi.projected.data).max() < 1e-5


def test_k1_singlepass_is_plain_causal():
    enc, vocab = make_encoder(K=1)
    seq = build_sequence(tokenize(caption(1), vocab), PromptConfig(K=1), vocab)
    a = enc.forward_singlepass(seq, build_mask(seq)).pooled.data
    b = enc.forward_singlepass(seq, np.tri(len(seq), dtype=bool)).pooled.data
    assert a.tobytes() == b.tobytes()


def test_segment_isolation_and_prefix_sensitivity():
    enc, vocab = make_encoder(3, K=3)
    seq = build_sequence(tokenize(caption(2), vocab), PromptConfig(K=3), vocab)
    base = enc.forward_singlepass(seq).pooled.data
    # perturb a non-final token of segment 2
    pert = build_sequence(tokenize(caption(2), vocab), PromptConfig(K=3), vocab)
    j = pert.segment_slice(2)[2]
    pert.token_ids[j] = vocab.id_of("red")
    out = enc.forward_singlepass(pert).pooled.data
    assert out[0].tobytes() == base[0].tobytes()
    assert out[2].tobytes() == base[2].tobytes()
    assert not np.array_equal(out[1], base[1])
    # prefix perturbation reaches every row
    pre = build_sequence(tokenize(caption(2), vocab), PromptConfig(K=3), vocab)
    pre.token_ids[1] = vocab.id_of("zzz") if "zzz" in vocab else vocab.unk_id
    out = enc.forward_singlepass(pre).pooled.data
    assert all(not np.array_equal(out[s], base[s]) for s in range(3))


def test_position_reset_is_required_for_equivalence():
    enc, vocab = make_encoder(4, K=3)
    seq = build_sequence(tokenize(caption(4), vocab), PromptConfig(K=3, reset_positions=False), vocab)
    single = enc.forward_singlepass(seq).pooled.data
    # multipass reference built from the reset layout
    ref = build_sequence(tokenize(caption(4), vocab), PromptConfig(K=3), vocab)
    multi = enc.forward_multipass(ref).pooled.data
    assert np.abs(single - multi).max() > 1e-3


def test_apt_rows_are_distinct():
    enc, vocab = make_encoder(5, K=6)
    seq = build_sequence(tokenize(caption(5), vocab), PromptConfig(K=6), vocab)
    pooled = enc.forward_singlepass(seq).pooled.data
    for i in range(6):
        for j in range(i + 1, 6):
            assert not np.allclose(pooled[i], pooled[j])


def test_capacity_error():
    enc, vocab = make_encoder(K=6, max_len=20)
    seq = build_sequence(tokenize(caption(0), vocab), PromptConfig(K=6), vocab)
    with pytest.raises(CapacityError):
        enc.forward_singlepass(seq)


def test_project_and_concat_layout():
    rows = np.arange(8, dtype=np.float64).reshape(2, 4) + 1.0
    joint, neg = project_and_concat(Tensor(rows), K=2)
    assert neg is None
    expected = rows.reshape(-1) / np.linalg.norm(rows)
    np.testing.assert_allclose(joint.data, expected)
    np.testing.assert_allclose(joint.data[:4] * np.linalg.norm(rows), rows[0])
    assert abs(np.linalg.norm(joint.data) - 1) < 1e-6


def test_project_and_concat_average_and_negation():
    row = np.array([1.0, 2.0, 2.0])
    avg, _ = project_and_concat(Tensor(np.stack([row, row, row])), K=3, combine_mode="average")
    np.testing.assert_allclose(avg.data, row / 3.0)
    rng = np.random.default_rng(0)
    x = rng.normal(size=(5, 4, 3))
    pos, neg = project_and_concat(Tensor(x), K=2)
    np.testing.assert_allclose(neg.data[0], x[0, 2:].reshape(-1) / np.linalg.norm(x[0, 2:]))
    with pytest.raises(ValueError):
        project_and_concat(Tensor(x), K=3)


@pytest.mark.parametrize("L", [0, 1, 2])
@pytest.mark.parametrize("learnable", [False, True])
def test_set_trainable_census(L, learnable):
    enc, _ = make_encoder(K=6, layers=2)
    set_trainable(enc, L, learnable)
    block_size = sum(p.data.size for p in enc.blocks[0].parameters())
    expected = enc.proj.weight.data.size + enc.apt_table.data.size + L * block_size
    expected += enc.ln_f.gamma.data.size * 2 if L > 0 else 0
    if learnable:
        expected += enc.tok_table.data.size + enc.pos_table.data.size
    assert sum(p.data.size for _, p in enc.trainable()) == expected


def test_l0_only_projection_and_apt_get_gradients():
    enc, vocab = make_encoder(K=3)
    set_trainable(enc, 0, False)
    seq = build_sequence(tokenize(caption(7), vocab), PromptConfig(K=3), vocab)
    out = enc.forward_singlepass(seq)
    backward((out.projected * out.projected).sum())
    names = {n for n, p in enc.named_parameters() if p.grad is not None and np.abs(p.grad).sum() > 0}
    assert names == {"apt_table", "proj.weight"}
    assert all(p.grad is None for p in enc.blocks[0].parameters())


def test_frozen_weights_unchanged_after_training_steps():
    from camp.trainer import Trainer

    cfg = TrainConfig(L=0, learnable_vocab=False, batch_size=4, text_width=32, text_layers=2, vision_width=32, vision_layers=1, include_negation=True)
    tr = Trainer(cfg)
    before = {n: p.data.copy() for n, p in tr.model.text.named_parameters()}
    tr.train(until=10)
    for n, p in tr.model.text.named_parameters():
        if n in ("apt_table", "proj.weight"):
            assert not np.array_equal(before[n], p.data), n
        else:
            assert before[n].tobytes() == p.data.tobytes(), n


def test_model_text_output_unit_norm():
    model = DualEncoder(TrainConfig(K=6, include_negation=True, text_width=32, text_layers=2, vision_width=32, vision_layers=1))
    out = model.encode_text([caption(0), caption(1)])
    assert np.abs(np.linalg.norm(out.p.data, axis=1) - 1).max() < 1e-6
    assert out.n.shape == (2, 96)
    assert isinstance(out.segments, SegmentEmbeddings)
