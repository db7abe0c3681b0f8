from __future__ import annotations

import datetime as dt
import hashlib
import json

import numpy as np
import pytest

from tmfusion.dataset import Sample
from tmfusion.errors import DivergedError, InvalidArgumentError, SchemaError
from tmfusion.rnn import (
    Checkpoint,
    Hyperparams,
    backward_arrays,
    build_model,
    forward_model,
    load_checkpoint,
    loss_arrays,
    predict,
    save_checkpoint,
    train,
)
from tmfusion.rnn.cells import sigmoid

from .conftest import linear_rule_samples
from .oracles import gru_oracle, indrnn_oracle, lstm_oracle

SMALL = Hyperparams(
    epochs=3, layers=2, hidden_units=4, learning_rate=0.01,
    recurrent_dropout=0.5, dropout=0.5, l2=0.0001, batch_size=4, seed=11,
)
NO_REG = Hyperparams(
    epochs=3, layers=2, hidden_units=4, learning_rate=0.01,
    recurrent_dropout=0.0, dropout=0.0, l2=0.0, batch_size=4, seed=11,
)


def make_sample(rng, numeric_dim=0, text_shape=None, label=1) -> Sample:
    return Sample(
        numeric=rng.normal(0.5, 0.2, size=numeric_dim),
        text=rng.normal(0, 0.05, size=text_shape) if text_shape else None,
        label=label,
        ticker="AAPL",
        day=dt.date(2021, 10, 1),
        author="trader",
    )


class TestForwardModel:
    def test_zero_head_gives_half(self, rng):
        model = build_model("numeric_only", "indrnn", SMALL, numeric_dim=6)
        model.head_w[:] = 0.0
        model.head_b[:] = 0.0
        sample = make_sample(rng, numeric_dim=6)
        assert forward_model(model, sample) == 0.5

    def test_zeroed_numeric_branch_gives_half(self, rng):
        model = build_model("numeric_only", "indrnn", SMALL, numeric_dim=6)
        for layer in model.numeric_layers:
            for arr in layer.blocks.values():
                arr[:] = 0.0
        model.head_w[:] = 0.0
        sample = make_sample(rng, numeric_dim=6)
        assert forward_model(model, sample) == 0.5

    @pytest.mark.parametrize("kind,oracle", [
        ("indrnn", indrnn_oracle), ("lstm", lstm_oracle), ("gru", gru_oracle),
    ])
    def test_fused_matches_chained_branch_oracles(self, rng, kind, oracle):
        model = build_model("fused", kind, NO_REG, numeric_dim=6, text_dim=3)
        sample = make_sample(rng, numeric_dim=6, text_shape=(5, 3))
        got = forward_model(model, sample)

        def run_branch(layers, xs):
            current = [list(row) for row in xs]
            for layer in layers:
                blocks = {k: v.tolist() for k, v in layer.blocks.items()}
                if kind == "indrnn":
                    hs = indrnn_oracle(blocks["W"], blocks["u"], blocks["b"], current)
                elif kind == "lstm":
                    hs, _ = lstm_oracle(blocks, current)
                else:
                    hs = gru_oracle(blocks, current)
                current = hs
            return np.array(current[-1])

        e_text = run_branch(model.text_layers, sample.text.tolist())
        e_num = run_branch(model.numeric_layers, [sample.numeric.tolist()])
        logit = np.concatenate([e_text, e_num]) @ model.head_w + model.head_b[0]
        expected = float(sigmoid(np.array([logit]))[0])
        assert got == pytest.approx(expected, abs=1e-12)

    def test_architecture_mismatch_rejected(self, rng):
        model = build_model("numeric_only", "gru", SMALL, numeric_dim=6)
        bad = make_sample(rng, numeric_dim=9)
        with pytest.raises(InvalidArgumentError):
            forward_model(model, bad)

    def test_train_mode_needs_rng(self, rng):
        model = build_model("numeric_only", "gru", SMALL, numeric_dim=6)
        sample = make_sample(rng, numeric_dim=6)
        with pytest.raises(InvalidArgumentError):
            forward_model(model, sample, train_mode=True)


def finite_difference_check(model, numeric, text, labels, eps=1e-5, tol=1e-4):
    _, grads, _ = backward_arrays(model, numeric, text, labels)
    worst = 0.0
    for path, arr in model.params():
        flat = arr.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + eps
            up = loss_arrays(model, numeric, text, labels)
            flat[idx] = orig - eps
            down = loss_arrays(model, numeric, text, labels)
            flat[idx] = orig
            numeric_grad = (up - down) / (2 * eps)
            analytic = grads[path].reshape(-1)[idx]
            denom = max(abs(numeric_grad), abs(analytic), 1e-8)
            rel = abs(numeric_grad - analytic) / denom
            worst = max(worst, rel)
            assert rel < tol, f"{path}[{idx}] rel={rel}"
    return worst


class TestBackward:
    @pytest.mark.parametrize("kind", ["indrnn", "lstm", "gru", "simple"])
    def test_gradients_numeric_only(self, rng, kind):
        model = build_model("numeric_only", kind, SMALL, numeric_dim=5)
        numeric = rng.normal(0.5, 0.3, size=(3, 5))
        labels = np.array([1.0, 0.0, 1.0])
        finite_difference_check(model, numeric, None, labels)

    @pytest.mark.parametrize("kind", ["indrnn", "lstm", "gru"])
    def test_gradients_fused(self, rng, kind):
        model = build_model("fused", kind, SMALL, numeric_dim=4, text_dim=3)
        numeric = rng.normal(0.5, 0.3, size=(3, 4))
        text = rng.normal(0, 0.3, size=(3, 5, 3))
        labels = np.array([0.0, 1.0, 0.0])
        finite_difference_check(model, numeric, text, labels)

    def test_gradients_text_only(self, rng):
        model = build_model("text_only", "indrnn", SMALL, text_dim=3)
        text = rng.normal(0, 0.3, size=(3, 5, 3))
        labels = np.array([1.0, 1.0, 0.0])
        finite_difference_check(model, None, text, labels)

    def test_head_bias_gradient_zero_at_stationary_point(self, rng):
        hyper = Hyperparams(
            epochs=1, layers=2, hidden_units=4, l2=0.0, batch_size=4, seed=3,
        )
        model = build_model("numeric_only", "indrnn", hyper, numeric_dim=5)
        model.head_w[:] = 0.0
        model.head_b[:] = 0.0
        numeric = rng.normal(0.5, 0.3, size=(4, 5))
        labels = np.array([1.0, 0.0, 1.0, 0.0])  # balanced
        _, grads, probs = backward_arrays(model, numeric, None, labels)
        np.testing.assert_array_equal(probs, 0.5)
        assert grads["head.b"][0] == 0.0

    def test_l2_adds_exactly_lambda_w_per_block(self, rng):
        base = Hyperparams(epochs=1, layers=2, hidden_units=4, l2=0.0, batch_size=4, seed=5)
        reg = Hyperparams(epochs=1, layers=2, hidden_units=4, l2=0.01, batch_size=4, seed=5)
        m0 = build_model("numeric_only", "gru", base, numeric_dim=5)
        m1 = build_model("numeric_only", "gru", reg, numeric_dim=5)
        numeric = rng.normal(0.5, 0.3, size=(3, 5))
        labels = np.array([1.0, 0.0, 1.0])
        _, g0, _ = backward_arrays(m0, numeric, None, labels)
        _, g1, _ = backward_arrays(m1, numeric, None, labels)
        params = dict(m0.params())
        for path in g0:
            np.testing.assert_allclose(g1[path] - g0[path], 0.01 * params[path], atol=1e-12)

    def test_gradients_with_numeric_step_sequence(self, rng):
        """A lookback build feeds the numeric branch several timesteps."""
        model = build_model("numeric_only", "gru", SMALL, numeric_dim=5)
        numeric = rng.normal(0.5, 0.2, size=(3, 4, 5))  # 4 lookback steps
        labels = np.array([1.0, 0.0, 1.0])
        finite_difference_check(model, numeric, None, labels)

    def test_dropout_draws_are_deterministic(self, rng):
        model = build_model("numeric_only", "indrnn", SMALL, numeric_dim=5)
        numeric = rng.normal(0.5, 0.3, size=(4, 5))
        labels = np.array([1.0, 0.0, 1.0, 0.0])
        r1 = np.random.default_rng(99)
        r2 = np.random.default_rng(99)
        l1, g1, p1 = backward_arrays(model, numeric, None, labels, rng=r1)
        l2, g2, p2 = backward_arrays(model, numeric, None, labels, rng=r2)
        assert l1 == l2
        np.testing.assert_array_equal(p1, p2)
        for path in g1:
            np.testing.assert_array_equal(g1[path], g2[path])


def synthetic_linear_dataset(rng, n=600, width=6, noise=0.05):
    """Labels are a noisy linear functional of features in [0, 1]."""
    w = rng.normal(0, 1, size=width)
    rows = rng.uniform(0, 1, size=(n, width))
    margin = rows @ w - np.median(rows @ w)
    labels = (margin > 0).astype(int)
    flips = rng.random(n) < noise
    labels[flips] = 1 - labels[flips]
    samples = [
        Sample(
            numeric=rows[i], text=None, label=int(labels[i]),
            ticker="SYN", day=dt.date(2021, 1, 1) + dt.timedelta(days=i), author="gen",
        )
        for i in range(n)
    ]
    cut = int(n * 0.8)
    return samples[:cut], samples[cut:]


class TestTrain:
    def test_zero_learning_rate_freezes_weights(self, rng):
        hyper = Hyperparams(
            epochs=2, layers=2, hidden_units=4, learning_rate=0.0, batch_size=8, seed=7,
        )
        model = build_model("numeric_only", "indrnn", hyper, numeric_dim=6)
        before = {path: arr.copy() for path, arr in model.params()}
        tr, te = synthetic_linear_dataset(rng, n=40, width=6)
        train(model, tr, te)
        for path, arr in model.params():
            np.testing.assert_array_equal(arr, before[path])

    def test_same_seed_identical_checkpoints(self, rng, tmp_path):
        tr, te = synthetic_linear_dataset(rng, n=60, width=6)
        hashes = []
        for run in range(2):
            hyper = Hyperparams(epochs=3, layers=2, hidden_units=4, batch_size=16, seed=42)
            model = build_model("numeric_only", "gru", hyper, numeric_dim=6)
            ckpt = train(model, tr, te)
            path = tmp_path / f"run{run}.json"
            save_checkpoint(ckpt, path)
            hashes.append(hashlib.sha256(path.read_bytes()).hexdigest())
        assert hashes[0] == hashes[1]

    def test_different_seed_differs(self, rng, tmp_path):
        tr, te = synthetic_linear_dataset(rng, n=60, width=6)
        digests = []
        for seed in (1, 2):
            hyper = Hyperparams(epochs=2, layers=2, hidden_units=4, batch_size=16, seed=seed)
            model = build_model("numeric_only", "gru", hyper, numeric_dim=6)
            ckpt = train(model, tr, te)
            path = tmp_path / f"seed{seed}.json"
            save_checkpoint(ckpt, path)
            digests.append(hashlib.sha256(path.read_bytes()).hexdigest())
        assert digests[0] != digests[1]

    def test_log_has_one_entry_per_epoch(self, rng):
        tr, te = synthetic_linear_dataset(rng, n=40, width=6)
        hyper = Hyperparams(epochs=5, layers=1, hidden_units=3, batch_size=16, seed=1)
        model = build_model("numeric_only", "indrnn", hyper, numeric_dim=6)
        ckpt = train(model, tr, te)
        assert [e["epoch"] for e in ckpt.training_log] == [1, 2, 3, 4, 5]
        for entry in ckpt.training_log:
            assert set(entry) == {"epoch", "loss", "accuracy", "valid_accuracy"}

    def test_learns_separable_data(self, rng):
        tr, te = linear_rule_samples(rng, n=600, width=6)
        hyper = Hyperparams(epochs=40, layers=2, hidden_units=14, batch_size=32, seed=9)
        model = build_model("numeric_only", "indrnn", hyper, numeric_dim=6)
        ckpt = train(model, tr, te)
        assert ckpt.training_log[-1]["valid_accuracy"] >= 0.9

    def test_divergence_aborts_with_epoch(self, rng):
        tr, te = synthetic_linear_dataset(rng, n=40, width=6)
        hyper = Hyperparams(
            epochs=5, layers=1, hidden_units=3, learning_rate=1e150, batch_size=16, seed=1,
        )
        model = build_model("numeric_only", "indrnn", hyper, numeric_dim=6)
        with np.errstate(over="ignore", invalid="ignore"):
            with pytest.raises(DivergedError) as excinfo:
                train(model, tr, te)
        assert excinfo.value.epoch >= 1
        assert "epoch" in str(excinfo.value)


class TestCheckpoint:
    def roundtrip(self, ckpt, path):
        save_checkpoint(ckpt, path)
        return load_checkpoint(path)

    def test_save_load_save_byte_identical(self, rng, tmp_path):
        tr, te = synthetic_linear_dataset(rng, n=40, width=6)
        hyper = Hyperparams(epochs=2, layers=2, hidden_units=4, batch_size=16, seed=2)
        model = build_model("fused", "lstm", hyper, numeric_dim=6, text_dim=3)
        for s in tr + te:
            object.__setattr__(s, "text", rng.normal(0, 0.1, size=(4, 3)))
        ckpt = train(model, tr, te)
        p1 = tmp_path / "a.json"
        p2 = tmp_path / "b.json"
        save_checkpoint(ckpt, p1)
        loaded = load_checkpoint(p1)
        save_checkpoint(loaded, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_predict_stable_across_reload(self, rng, tmp_path):
        tr, te = synthetic_linear_dataset(rng, n=40, width=6)
        hyper = Hyperparams(epochs=2, layers=2, hidden_units=4, batch_size=16, seed=2)
        model = build_model("numeric_only", "gru", hyper, numeric_dim=6)
        ckpt = train(model, tr, te)
        loaded = self.roundtrip(ckpt, tmp_path / "ckpt.json")
        for sample in te[:5]:
            assert predict(ckpt, sample) == predict(loaded, sample)

    def test_zero_head_predicts_one_at_half(self, rng, tmp_path):
        hyper = Hyperparams(epochs=1, layers=1, hidden_units=3, batch_size=4, seed=0)
        model = build_model("numeric_only", "indrnn", hyper, numeric_dim=4)
        model.head_w[:] = 0.0
        model.head_b[:] = 0.0
        ckpt = Checkpoint(model=model)
        sample = make_sample(rng, numeric_dim=4)
        cls, prob = predict(ckpt, sample)
        assert (cls, prob) == (1, 0.5)

    def test_predict_rejects_mismatched_sample(self, rng, tmp_path):
        hyper = Hyperparams(epochs=1, layers=1, hidden_units=3, batch_size=4, seed=0)
        model = build_model("numeric_only", "indrnn", hyper, numeric_dim=4)
        ckpt = Checkpoint(model=model)
        with pytest.raises(InvalidArgumentError):
            predict(ckpt, make_sample(rng, numeric_dim=7))

    def test_training_log_preserved(self, rng, tmp_path):
        tr, te = synthetic_linear_dataset(rng, n=40, width=6)
        hyper = Hyperparams(epochs=3, layers=1, hidden_units=3, batch_size=16, seed=2)
        model = build_model("numeric_only", "indrnn", hyper, numeric_dim=6)
        ckpt = train(model, tr, te, meta={"ticker": "SYN"})
        loaded = self.roundtrip(ckpt, tmp_path / "ckpt.json")
        assert loaded.training_log == ckpt.training_log
        assert loaded.meta == {"ticker": "SYN"}

    def test_unsupported_version_rejected(self, tmp_path):
        hyper = Hyperparams(epochs=1, layers=1, hidden_units=3, batch_size=4, seed=0)
        model = build_model("numeric_only", "indrnn", hyper, numeric_dim=4)
        path = tmp_path / "ckpt.json"
        save_checkpoint(Checkpoint(model=model), path)
        blob = json.loads(path.read_text())
        blob["schema_version"] = 99
        path.write_text(json.dumps(blob))
        with pytest.raises(SchemaError):
            load_checkpoint(path)

    def test_corrupt_json_rejected(self, tmp_path):
        path = tmp_path / "ckpt.json"
        path.write_text("{not json")
        with pytest.raises(SchemaError):
            load_checkpoint(path)
