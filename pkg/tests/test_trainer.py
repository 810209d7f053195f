import math

import numpy as np
import pytest

from camp import data
from camp.config import TrainConfig
from camp.model import LOGIT_SCALE_MAX, LOGIT_SCALE_MIN, DualEncoder
from camp.tensor import Tensor
from camp.trainer import (
    AdamW,
    BatchStream,
    FormatError,
    Trainer,
    checkpoint_bytes,
    load_checkpoint,
    lr_at,
    parse_checkpoint,
    save_checkpoint,
)

TINY = dict(
    batch_size=4,
    n_train=16,
    n_eval=8,
    text_width=32,
    text_layers=2,
    text_heads=4,
    vision_width=32,
    vision_layers=1,
    vision_heads=4,
    warmup_steps=5,
    total_steps=20,
)


def tiny(**kw):
    return TrainConfig(**{**TINY, **kw})


# -- schedule -------------------------------------------------------------


def test_lr_examples():
    cfg = TrainConfig(peak_lr=5e-4, warmup_steps=10_000, total_steps=500_000)
    assert lr_at(5000, cfg) == pytest.approx(2.5e-4)
    assert lr_at(0, cfg) == 0.0
    assert lr_at(20_000, cfg) == 5e-4
    with pytest.raises(ValueError):
        lr_at(-1, cfg)


def test_cosine_option():
    cfg = TrainConfig(peak_lr=1.0, warmup_steps=10, total_steps=110, lr_schedule="cosine")
    assert lr_at(10, cfg) == 1.0
    assert lr_at(60, cfg) == pytest.approx(0.5)
    assert lr_at(110, cfg) == pytest.approx(0.0, abs=1e-12)


# -- optimizer ------------------------------------------------------------


def test_adamw_first_step_hand_oracle():
    p = Tensor(np.array([2.0]), requires_grad=True)
    p.grad = np.array([0.3])
    opt = AdamW([("w", p)], weight_decay=0.1, eps=1e-8)
    lr = 0.01
    opt.step(lr)
    expected = 2.0 - lr * 0.1 * 2.0 - lr * 0.3 / (0.3 + 1e-8)
    assert p.data[0] == pytest.approx(expected, abs=1e-12)


def test_adamw_zero_grad_zero_decay_is_noop():
    p = Tensor(np.array([1.5, -2.0]), requires_grad=True)
    p.grad = np.zeros(2)
    AdamW([("w", p)], weight_decay=0.0).step(0.1)
    np.testing.assert_array_equal(p.data, [1.5, -2.0])


def test_adamw_identical_inputs_identical_updates():
    rng = np.random.default_rng(0)
    init, grads = rng.normal(size=(3, 4)), rng.normal(size=(5, 3, 4))
    outs = []
    for _ in range(2):
        p = Tensor(init.copy(), requires_grad=True)
        opt = AdamW([("w", p)])
        for g in grads:
            p.grad = g.copy()
            opt.step(1e-2)
        outs.append(p.data)
    assert outs[0].tobytes() == outs[1].tobytes()


def test_adamw_rejects_frozen_and_bad_grads():
    with pytest.raises(ValueError):
        AdamW([("w", Tensor(np.ones(2)))])
    p = Tensor(np.ones(2), requires_grad=True)
    p.grad = np.ones(3)
    with pytest.raises(ValueError):
        AdamW([("w", p)]).step(0.1)


def test_no_decay_excludes_vectors():
    model = DualEncoder(tiny())
    names = model.no_decay()
    assert "logit_scale" in names and "text.ln_f.gamma" in names
    assert "text.proj.weight" not in names


# -- batches --------------------------------------------------------------


def test_batch_stream_covers_each_epoch():
    s = BatchStream(16, 4, seed=3)
    epoch = sum((s.indices(i) for i in range(4)), [])
    assert sorted(epoch) == list(range(16))
    assert BatchStream(16, 4, seed=3).indices(5) == s.indices(5)


# -- training -------------------------------------------------------------


def test_smoke_training_reduces_loss():
    cfg = tiny(peak_lr=1e-3, warmup_steps=10, include_negation=False)
    tr = Trainer(cfg)
    hist = tr.train(until=200)
    first = np.mean([b.l_total for b in hist[:10]])
    last = np.mean([b.l_total for b in hist[-10:]])
    assert last < first
    assert all(math.isfinite(b.l_total) for b in hist)


def test_composition_without_negation():
    tr = Trainer(tiny(include_negation=False))
    bd = tr.train(until=1)[0]
    assert bd.l_neg is None
    assert bd.l_total == pytest.approx(bd.l_con + 0.1 * bd.l_div, abs=1e-6)
    assert bd.l_con == pytest.approx((bd.l_t2i + bd.l_i2t) / 2, abs=1e-6)


def test_temperature_stays_clamped():
    cfg = tiny(init_tau=0.0101, peak_lr=0.5, warmup_steps=0)
    tr = Trainer(cfg)
    for bd in tr.train(until=5):
        assert 1 / LOGIT_SCALE_MAX - 1e-6 <= bd.tau <= 1 / LOGIT_SCALE_MIN + 1e-6
    s = float(tr.model.logit_scale.data)
    assert math.log(LOGIT_SCALE_MIN) - 1e-6 <= s <= math.log(LOGIT_SCALE_MAX) + 1e-6


@pytest.mark.parametrize("L,learnable", [(0, False), (1, False), (2, True)])
def test_optimizer_state_matches_trainable_set(L, learnable):
    model = DualEncoder(tiny(L=L, learnable_vocab=learnable))
    tr = Trainer(model.cfg, model=model)
    assert set(tr.opt.m) == {n for n, _ in model.trainable()}
    assert all(tr.opt.m[n].shape == p.data.shape for n, p in model.trainable())


def test_metrics_log_deterministic(tmp_path):
    logs = []
    for run in range(2):
        path = tmp_path / f"run{run}.tsv"
        Trainer(tiny()).train(until=6, log_path=path)
        logs.append(path.read_bytes())
    assert logs[0] == logs[1]
    rows = logs[0].decode().splitlines()
    assert len(rows) == 6
    assert all(len(r.split("\t")) == 7 for r in rows)
    assert rows[0].split("\t")[0] == "0"


# -- checkpoints ----------------------------------------------------------


def test_checkpoint_roundtrip_byte_identical(tmp_path):
    tr = Trainer(tiny())
    tr.train(until=3)
    a = tmp_path / "a.ckpt"
    save_checkpoint(tr.model, tr.opt, a)
    model, opt, cfg = load_checkpoint(a)
    assert cfg == tr.cfg
    assert checkpoint_bytes(model, opt) == a.read_bytes()
    for (n, p), (m, q) in zip(tr.model.named_parameters(), model.named_parameters()):
        assert n == m and p.data.tobytes() == q.data.tobytes()


def test_checkpoint_layout(tmp_path):
    model = DualEncoder(tiny())
    buf = checkpoint_bytes(model)
    assert buf[:4] == b"CAMP"
    assert int.from_bytes(buf[4:8], "little") == 1
    assert int.from_bytes(buf[8:12], "little") == len(list(model.named_parameters()))
    tensors, meta = parse_checkpoint(buf)
    assert meta["has_optimizer"] is False
    assert tensors["model.logit_scale"].shape == ()


def test_resume_matches_uninterrupted(tmp_path):
    cfg = tiny()
    full = Trainer(cfg)
    full.train(until=8)
    part = Trainer(cfg)
    part.train(until=4)
    path = tmp_path / "mid.ckpt"
    save_checkpoint(part.model, part.opt, path)
    model, opt, cfg2 = load_checkpoint(path)
    resumed = Trainer(cfg2, model=model, opt=opt)
    resumed.train(until=8)
    assert [b.l_total for b in resumed.history] == [b.l_total for b in full.history[4:]]
    assert checkpoint_bytes(resumed.model, resumed.opt) == checkpoint_bytes(full.model, full.opt)


@pytest.mark.parametrize(
    "mutate,match",
    [
        (lambda b: b"XXXX" + b[4:], "magic"),
        (lambda b: b[:4] + (2).to_bytes(4, "little") + b[8:], "version"),
        (lambda b: b[:50], "truncated"),
        (lambda b: b + b"\x00", "trailing"),
    ],
)
def test_corrupt_checkpoint_raises_format_error(tmp_path, mutate, match):
    buf = checkpoint_bytes(DualEncoder(tiny()))
    path = tmp_path / "bad.ckpt"
    path.write_bytes(mutate(buf))
    with pytest.raises(FormatError, match=match):
        load_checkpoint(path)


def test_eval_set_is_disjoint_from_training():
    tr = Trainer(tiny())
    _, held = data.generate_split(16, 8, 0)
    assert not {s.caption for s in held} & set(tr.captions)
