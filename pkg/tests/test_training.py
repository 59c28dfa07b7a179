import numpy as np
import pytest
from numpy.testing import assert_array_equal

from clnet import autodiff as ad
from clnet.autodiff import Tape, Tensor
from clnet.models import build_model
from clnet.training import (
    Adam,
    EpochRecord,
    TrainConfig,
    TrainingDivergedError,
    TrainLog,
    lr_schedule,
    mse_loss,
    train,
    train_step,
)
from oracles import mse_loops


def test_mse_examples():
    assert mse_loss(np.zeros((2, 3)), np.zeros((2, 3))) == 0.0
    assert mse_loss(np.zeros((2, 3)), np.ones((2, 3))) == 1.0
    assert mse_loss(np.array([0.0, 0.0]), np.array([1.0, 3.0])) == 5.0
    with pytest.raises(ad.ShapeError):
        mse_loss(np.zeros(3), np.zeros(4))


def test_mse_tensor_matches_loops(rng):
    a, b = rng.normal(size=(3, 2, 4, 4)), rng.normal(size=(3, 2, 4, 4))
    t = mse_loss(Tensor(a), Tensor(b))
    assert t.item() == pytest.approx(mse_loops(b, a), rel=1e-12)
    assert mse_loss(a, b) == pytest.approx(mse_loops(b, a), rel=1e-12)


def test_lr_schedule_shape():
    cfg = TrainConfig(epochs=50, peak_lr=2e-3)
    lrs = [lr_schedule(e, cfg) for e in range(50)]
    assert abs(lrs[0] - 2e-3 / 3) < 1e-9
    assert abs(lrs[2] - 2e-3) < 1e-9
    assert abs(lrs[-1] - 2e-5) < 1e-9
    assert all(a < b for a, b in zip(lrs[:3], lrs[1:3]))
    assert all(a > b for a, b in zip(lrs[2:], lrs[3:]))
    with pytest.raises(ValueError):
        lr_schedule(50, cfg)


def test_lr_schedule_single_epoch():
    assert lr_schedule(0, TrainConfig(epochs=1, peak_lr=1e-3)) == 1e-3


@pytest.mark.parametrize(
    "kw",
    [dict(epochs=0), dict(batch_size=0), dict(eta="1/3"), dict(checkpoint_every=2)],
)
def test_config_validation(kw):
    with pytest.raises(ValueError):
        TrainConfig(**kw).validate()


def test_batch_larger_than_train_split():
    with pytest.raises(ValueError, match="exceeds"):
        TrainConfig(batch_size=101).validate(100)


def test_overfit_single_sample(small_dataset):
    model = build_model("clnet", "1/4", seed=2)
    opt = Adam(model.params)
    x = small_dataset.samples[:1]
    losses = [train_step(model, opt, x, 1e-3) for _ in range(20)]
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_adam_step_on_quadratic():
    p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    params = {"p": p}
    opt = Adam(params)
    opt.step(params, [np.array([0.5, -0.5])], lr=0.1)
    # first bias-corrected Adam step moves every coordinate by lr against the gradient sign
    np.testing.assert_allclose(p.data, [0.9, -1.9], atol=1e-6)


def test_gradient_reaches_every_parameter(small_dataset):
    x = small_dataset.samples[:8]
    for seed in range(10):
        model = build_model("clnet", "1/4", seed=seed)
        xt = Tensor(x)
        with Tape() as tape:
            loss = mse_loss(xt, model(xt))
        grads = tape.backward(loss, model.params.tensors())
        for name, g in zip(model.params.names(), grads):
            assert np.all(np.isfinite(g)), name
            assert np.any(g != 0), f"{name} received no gradient (seed {seed})"


def _cfg(**kw):
    base = dict(epochs=2, batch_size=25, seed=4, eta="1/4")
    base.update(kw)
    return TrainConfig(**base)


def test_training_is_deterministic(small_dataset):
    m1, log1 = train(_cfg(), dataset=small_dataset, clock=lambda: 0.0)
    m2, log2 = train(_cfg(), dataset=small_dataset, clock=lambda: 0.0)
    assert log1.to_csv() == log2.to_csv()
    for k in m1.params:
        assert_array_equal(m1.params[k].data, m2.params[k].data)


def test_resume_is_bit_exact(tmp_path, small_dataset):
    full, log_full = train(_cfg(epochs=3), dataset=small_dataset)
    ck, snap = tmp_path / "run.ckpt", tmp_path / "epoch1.ckpt"

    def keep_epoch_one(rec):
        # the callback runs before this epoch's save, so the file still holds epoch 1
        if rec.epoch == 2:
            snap.write_bytes(ck.read_bytes())

    train(_cfg(epochs=3, checkpoint_every=1, checkpoint_path=str(ck)), dataset=small_dataset, on_epoch=keep_epoch_one)
    resumed, log_res = train(_cfg(epochs=3), dataset=small_dataset, resume_from=snap)
    for k in full.params:
        assert_array_equal(resumed.params[k].data, full.params[k].data)
    assert log_res.train_loss == log_full.train_loss
    assert log_res.val_nmse_db == log_full.val_nmse_db


def test_non_finite_loss_raises(small_dataset):
    model = build_model("clnet", "1/4", seed=0)
    model.params["encoder.fc.weight"].data[0, 0] = np.nan
    with pytest.raises(TrainingDivergedError, match="epoch 1"):
        train(_cfg(epochs=1), model=model, dataset=small_dataset)


def test_model_config_mismatch(small_dataset):
    with pytest.raises(ValueError, match="eta"):
        train(_cfg(eta="1/8"), model=build_model("clnet", "1/4"), dataset=small_dataset)


def test_log_records_consecutive_and_csv():
    log = TrainLog()
    log.append(EpochRecord(1, 0.5, -1.0, 1e-3, 2.0))
    with pytest.raises(ValueError):
        log.append(EpochRecord(3, 0.4, -1.1, 1e-3, 2.0))
    assert log.to_csv(timing=False).splitlines() == ["epoch,train_loss,val_nmse_db,lr", "1,0.5,-1.0,0.001"]
    assert log.to_csv().splitlines()[1].endswith(",2.000")
