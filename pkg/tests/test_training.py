import numpy as np
import pytest

from kinesig.autodiff import Tensor, default_dtype
from kinesig.data import Dataset
from kinesig.synth import SynthConfig, generate_dataset
from kinesig.training import (
    TrainConfig, TrainingDiverged, _batches, build_from_config, evaluate, evaluate_arrays, train, train_arrays,
)

SMALL = dict(d_model=8, n_heads=1, epochs=2, batch_size=8, dtype="float32", eval_train=False)


@pytest.fixture(scope="module")
def small():
    return generate_dataset(SynthConfig(mode="mixed", n_identities=4, sequences_per_identity=5, T=40))


def test_same_seed_gives_identical_metrics(small):
    cfg = TrainConfig(model="dual", **SMALL)
    _, a = train(small, cfg)
    _, b = train(small, cfg)
    assert a.to_dict() == b.to_dict()


def test_zero_lr_leaves_parameters_unchanged(small):
    cfg = TrainConfig(model="str", lr=0.0, **SMALL)
    with default_dtype(cfg.dtype):
        before = build_from_config(cfg, small.n_classes).state_dict()
    model, _ = train(small, cfg)
    after = model.state_dict()
    for name, value in before.items():
        if "running" in name:
            continue
        np.testing.assert_array_equal(after[name], value, err_msg=name)


def test_spatial_only_loss_weight_freezes_temporal_stream(small):
    cfg = TrainConfig(model="dual", loss_weights=(1, 0, 0), **SMALL)
    with default_dtype(cfg.dtype):
        before = build_from_config(cfg, small.n_classes).state_dict()
    model, _ = train(small, cfg)
    after = model.state_dict()
    temporal = [k for k in before if k.startswith("ttr.")]
    spatial = [k for k in before if k.startswith("str.") and "running" not in k]
    assert temporal and spatial
    for k in temporal:
        np.testing.assert_array_equal(after[k], before[k], err_msg=k)
    assert any(not np.array_equal(after[k], before[k]) for k in spatial)


def test_all_zero_weights_rejected(small):
    with pytest.raises(ValueError):
        train(small, TrainConfig(model="dual", loss_weights=(0, 0, 0), **SMALL))


class ConstantModel:
    """Stand-in model that emits the same logits for every sequence."""

    kind = "str"
    training = False
    dtype = np.float64

    def __init__(self, n_classes):
        self.n_classes = n_classes

    def eval(self):
        return self

    def train(self, mode=True):
        return self

    def __call__(self, x):
        return Tensor(np.zeros((len(x), self.n_classes))), None


def test_argmax_ties_go_to_lowest_index():
    y = np.repeat(np.arange(4), 3)
    res = evaluate_arrays(ConstantModel(4), np.zeros((12, 2, 3, 2)), y, 4)
    assert res.accuracy["str"] == pytest.approx(1 / 4)
    assert np.array(res.confusion)[:, 0].sum() == 12


def test_confusion_trace_equals_correct_count(small):
    model, met = train(small, TrainConfig(model="str", **SMALL))
    res = evaluate(model, small)
    conf = np.array(res.confusion)
    assert conf.sum() == len(small)
    assert np.trace(conf) / len(small) == pytest.approx(res.accuracy["str"])


def test_empty_dataset_rejected(small):
    model = build_from_config(TrainConfig(model="str", d_model=8), 2)
    with pytest.raises(ValueError):
        evaluate(model, Dataset.from_sequences([]))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_raises():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(8, 6, 133, 2)) * 1e30
    y = np.arange(8) % 2
    cfg = TrainConfig(model="str", d_model=8, epochs=2, batch_size=4, lr=1e30, dtype="float32")
    with pytest.raises(TrainingDiverged):
        train_arrays(X, y, X, y, cfg, ["a", "b"])


def test_best_checkpoint_matches_recorded_best(small, tmp_path):
    from kinesig.models import load_checkpoint

    cfg = TrainConfig(model="dual", **{**SMALL, "epochs": 3})
    model, met = train(small, cfg, checkpoint=tmp_path / "c.npz")
    assert met.best["test_acc"]["fusion"] == max(e.test_acc["fusion"] for e in met.epochs)
    back = load_checkpoint(tmp_path / "c.npz")
    for k, v in model.state_dict().items():
        np.testing.assert_array_equal(back.state_dict()[k], v)


def test_batches_never_leave_a_singleton():
    rng = np.random.default_rng(0)
    for n in range(2, 40):
        parts = _batches(n, 8, rng)
        assert min(len(p) for p in parts) >= 2
        assert sorted(np.concatenate(parts)) == list(range(n))


def test_config_validation():
    for bad in (dict(epochs=0), dict(lr=-1.0), dict(batch_size=1), dict(model="cnn"), dict(dtype="float16"),
                dict(loss_weights=(1, 1))):
        with pytest.raises(ValueError):
            TrainConfig(**bad)
