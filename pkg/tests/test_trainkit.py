import json
import math

import numpy as np
import pytest
import scipy.stats
from sklearn.metrics import f1_score

from dib.data import SyntheticSpec, generate
from dib.trainkit import (
    Adam,
    MetricsReport,
    TrainConfig,
    TrainingError,
    adam_step,
    aggregate_metrics,
    average_decline,
    build_model,
    decline,
    evaluate,
    f1_weighted,
    metrics_from_predictions,
    missing_gradients,
    pearson,
    spearman,
    split_indices,
    task_for_dataset,
    train,
)

FAST = dict(
    epochs=2, hidden=8, heads=2, fusion_layers=1, bottleneck_len=2,
    batch_size=8, dropout=0.3, k_rank=5, lr_encoder=1e-4, lr_model=2e-4,
)


class TestAdam:
    def test_zero_gradient_no_move(self):
        p, m, v = np.ones(3), np.zeros(3), np.zeros(3)
        p2, _, _ = adam_step(p, np.zeros(3), m, v, t=1, lr=0.1)
        np.testing.assert_array_equal(p2, p)

    def test_constant_gradient_step_approaches_lr(self):
        # with a constant gradient the update magnitude tends to lr * sign(g)
        p, m, v = np.zeros(1), np.zeros(1), np.zeros(1)
        g = np.array([0.37])
        lr = 0.01
        prev = p.copy()
        for t in range(1, 200):
            p, m, v = adam_step(p, g, m, v, t=t, lr=lr)
            step = prev - p
            prev = p.copy()
        assert abs(step[0] - lr) <= 1e-6

    def test_matches_independent_scalar_reimplementation(self):
        # plain-python reference over 100 steps, 1e-12
        rng = np.random.default_rng(0)
        grads = rng.standard_normal(100)
        p, m, v = np.array([1.0]), np.zeros(1), np.zeros(1)
        beta1, beta2, eps, lr = 0.9, 0.999, 1e-8, 0.05

        ref_p, ref_m, ref_v = 1.0, 0.0, 0.0
        for t, g in enumerate(grads, start=1):
            p, m, v = adam_step(p, np.array([g]), m, v, t=t, lr=lr, beta1=beta1, beta2=beta2, eps=eps)
            ref_m = beta1 * ref_m + (1 - beta1) * g
            ref_v = beta2 * ref_v + (1 - beta2) * g * g
            mh = ref_m / (1 - beta1**t)
            vh = ref_v / (1 - beta2**t)
            ref_p = ref_p - lr * mh / (math.sqrt(vh) + eps)
        assert abs(p[0] - ref_p) <= 1e-12

    def test_optimizer_class_uses_per_parameter_lr(self):
        from dib.autodiff import Tensor

        params = {"enc_t_w1": Tensor(np.zeros(2), requires_grad=True),
                  "other": Tensor(np.zeros(2), requires_grad=True)}
        grads = {"enc_t_w1": np.ones(2), "other": np.ones(2)}
        adam = Adam()
        adam.step(params, grads, lambda n: 1e-3 if n.startswith("enc_t_") else 2e-3)
        assert abs(params["enc_t_w1"].data[0]) < abs(params["other"].data[0])


class TestMetrics:
    def test_perfect_predictions(self):
        y = np.array([-2.0, -1.0, 1.0, 2.0])
        r = metrics_from_predictions(y, y, "regression")
        assert r.acc2 == 1.0 and r.acc7 == 1.0 and r.mae == 0.0
        assert abs(r.pearson_corr - 1.0) <= 1e-12

    def test_constant_prediction_degenerate_corr(self):
        y = np.array([-2.0, -1.0, 1.0, 2.0])
        r = metrics_from_predictions(np.zeros(4), y, "regression")
        assert r.pearson_corr == 0.0
        assert r.degenerate_corr

    def test_neutral_labels_excluded_from_acc2(self):
        y = np.array([0.0, 0.0, 1.0, -1.0])
        preds = np.array([5.0, 5.0, 2.0, -2.0])
        r = metrics_from_predictions(preds, y, "regression")
        assert r.acc2 == 1.0

    def test_against_sklearn_and_scipy_oracles(self):
        rng = np.random.default_rng(1)
        y = rng.uniform(-3, 3, 200)
        preds = y + rng.standard_normal(200)
        r = metrics_from_predictions(preds, y, "regression")
        mask = y != 0
        oracle_f1 = f1_score((y[mask] > 0).astype(int), (preds[mask] > 0).astype(int),
                             average="weighted")
        assert abs(r.f1_weighted - oracle_f1) <= 1e-9
        oracle_corr = scipy.stats.pearsonr(preds, y).statistic
        assert abs(r.pearson_corr - oracle_corr) <= 1e-9
        assert abs(r.mae - np.mean(np.abs(preds - y))) <= 1e-12

    def test_binary_classification_metrics(self):
        y = np.array([0.0, 1.0, 1.0, 0.0])
        p = np.array([0.2, 0.9, 0.4, 0.1])
        r = metrics_from_predictions(p, y, "classification", 2)
        assert r.acc2 == 0.75
        oracle = f1_score(y.astype(int), (p > 0.5).astype(int), average="weighted")
        assert abs(r.f1_weighted - oracle) <= 1e-12

    def test_multiclass_metrics(self):
        y = np.array([0, 3, 6, 5])
        probs = np.zeros((4, 7))
        probs[np.arange(4), [0, 3, 5, 5]] = 1.0
        r = metrics_from_predictions(probs, y, "classification", 7)
        assert r.acc7 == 0.75
        oracle = f1_score(y, [0, 3, 5, 5], average="weighted", labels=range(7), zero_division=0)
        assert abs(r.f1_weighted - oracle) <= 1e-12

    def test_spearman_against_scipy(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal(25)
        y = 0.5 * x + rng.standard_normal(25)
        oracle = scipy.stats.spearmanr(x, y).statistic
        assert abs(spearman(x, y) - oracle) <= 1e-12

    def test_f1_weighted_handles_absent_predictions(self):
        assert f1_weighted([0, 0, 1], [0, 0, 0], (0, 1)) == pytest.approx(2 / 3 * 0.8, abs=1e-12)

    def test_pearson_zero_variance(self):
        val, degenerate = pearson(np.ones(5), np.arange(5))
        assert val == 0.0 and degenerate


class TestDecline:
    def test_reference_case(self):
        assert decline(80.0, 76.0) == 5.0

    def test_no_change(self):
        assert decline(0.6, 0.6) == 0.0

    def test_zero_baseline(self):
        assert decline(0.0, 0.5) == 0.0

    def test_average_decline_hand_recomputation(self):
        old = MetricsReport(acc2=0.9, acc7=0.5, f1_weighted=0.88, mae=0.7, pearson_corr=0.8)
        new = MetricsReport(acc2=0.85, acc7=0.45, f1_weighted=0.80, mae=0.9, pearson_corr=0.7)
        hand = np.mean([
            (0.9 - 0.85) / 0.9 * 100,
            (0.5 - 0.45) / 0.5 * 100,
            (0.88 - 0.80) / 0.88 * 100,
            (0.8 - 0.7) / 0.8 * 100,
            (0.9 - 0.7) / 0.7 * 100,  # MAE orientation flipped
        ])
        assert abs(average_decline(old, new) - hand) <= 1e-12


class TestSplitAndSetup:
    def test_split_fractions(self):
        tr, va, te = split_indices(200, seed=1)
        assert (len(tr), len(va), len(te)) == (120, 40, 40)
        assert len(set(tr) | set(va) | set(te)) == 200

    def test_split_deterministic(self):
        a = split_indices(100, seed=5)
        b = split_indices(100, seed=5)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x, y)

    def test_task_for_dataset(self):
        assert task_for_dataset(generate(SyntheticSpec(n_samples=4, seed=0))) == ("regression", 2)
        assert task_for_dataset(
            generate(SyntheticSpec(n_samples=4, seed=0, label_kind="binary"))
        ) == ("classification", 2)
        assert task_for_dataset(
            generate(SyntheticSpec(n_samples=4, seed=0, label_kind="sevenclass"))
        ) == ("classification", 7)

    def test_config_validation(self):
        with pytest.raises(TrainingError):
            TrainConfig(batch_size=1)
        with pytest.raises(TrainingError):
            TrainConfig(dropout=1.0)
        with pytest.raises(TrainingError):
            TrainConfig(split_fractions=(0.5, 0.2, 0.2))


class TestTrainLoop:
    def test_one_epoch_bitwise_reproducible(self):
        ds = generate(SyntheticSpec(n_samples=40, seed=20))
        outs = []
        for _ in range(2):
            cfg = TrainConfig(seed=3, **FAST)
            model = build_model(ds, cfg)
            train(model, ds, cfg)
            outs.append(model.copy_params())
        for name in outs[0]:
            np.testing.assert_array_equal(outs[0][name], outs[1][name])

    def test_every_parameter_receives_gradient(self):
        from dib.trainkit import training_step

        ds = generate(SyntheticSpec(n_samples=40, seed=21))
        cfg = TrainConfig(seed=0, **FAST)
        model = build_model(ds, cfg)
        feats = {m.name: ds.features[m.name][:8] for m in model.modalities}
        training_step(model, feats, ds.labels[:8], cfg, cfg.kernel_config(),
                      np.random.default_rng(0), Adam(), lambda n: 1e-4)
        assert missing_gradients(model) == []

    def test_ablation_zeroes_information_terms(self):
        ds = generate(SyntheticSpec(n_samples=40, seed=22))
        cfg = TrainConfig(seed=0, disable_all_lrib=True, **FAST)
        model = build_model(ds, cfg)
        result = train(model, ds, cfg)
        for record in result.log:
            for key, value in record["loss"].items():
                if key.startswith("i_comp"):
                    assert value == 0.0

    def test_partial_ablation_touches_only_its_field(self):
        ds = generate(SyntheticSpec(n_samples=40, seed=23))
        cfg = TrainConfig(seed=0, disable_uni_lrib=("a",), **FAST)
        model = build_model(ds, cfg)
        result = train(model, ds, cfg)
        loss = result.log[-1]["loss"]
        assert loss["i_comp_a"] == 0.0
        assert loss["i_comp_t"] != 0.0
        assert loss["i_comp_v"] != 0.0
        assert loss["i_comp_mm"] != 0.0

    def test_jsonl_log_written(self, tmp_path):
        ds = generate(SyntheticSpec(n_samples=40, seed=24))
        cfg = TrainConfig(seed=0, **FAST)
        model = build_model(ds, cfg)
        path = tmp_path / "log.jsonl"
        train(model, ds, cfg, log_path=path)
        lines = path.read_text().strip().split("\n")
        assert len(lines) == cfg.epochs
        record = json.loads(lines[0])
        assert set(record) == {"epoch", "loss", "val"}

    def test_evaluate_on_split(self):
        ds = generate(SyntheticSpec(n_samples=40, seed=25))
        cfg = TrainConfig(seed=0, **FAST)
        model = build_model(ds, cfg)
        result = train(model, ds, cfg)
        report = evaluate(result.model, ds, result.test_idx, cfg)
        assert 0.0 <= report.acc2 <= 1.0
        assert report.mae >= 0.0

    def test_drop_modality(self):
        ds = generate(SyntheticSpec(n_samples=40, seed=26))
        cfg = TrainConfig(seed=0, drop_modalities=("v",), **FAST)
        model = build_model(ds, cfg)
        assert [m.name for m in model.modalities] == ["t", "a"]
        train(model, ds, cfg)

    def test_task_only_step_decreases_cross_entropy(self):
        # sign/direction contract: with only the task term active, one
        # optimizer step strictly lowers CE on an overfit-capable toy batch
        from dib.objective import task_loss
        from dib.trainkit import training_step
        from dib.autodiff import Tensor

        ds = generate(SyntheticSpec(n_samples=12, seed=27, label_kind="binary",
                                    nuisance_std=0.05))
        cfg = TrainConfig(seed=0, task="classification", classes=2,
                          disable_all_lrib=True, beta_uni=1.0, beta_multi=1.0,
                          lr_encoder=1e-3, lr_model=1e-3, epochs=1, hidden=8, heads=2,
                          fusion_layers=1, bottleneck_len=2, batch_size=12, dropout=0.0)
        model = build_model(ds, cfg)
        feats = {m.name: ds.features[m.name] for m in model.modalities}

        def ce():
            preds = model.predict(feats)
            return float(task_loss(Tensor(preds[:, None]), ds.labels,
                                   "classification", 2).data)

        before = ce()
        training_step(model, feats, ds.labels, cfg, cfg.kernel_config(),
                      np.random.default_rng(1), Adam(), lambda n: 1e-3)
        assert ce() < before

    def test_aggregate_metrics(self):
        reports = [
            MetricsReport(0.9, 0.5, 0.9, 0.2, 0.95),
            MetricsReport(0.8, 0.4, 0.8, 0.3, 0.90),
        ]
        agg = aggregate_metrics(reports)
        assert abs(agg["acc2"]["mean"] - 0.85) <= 1e-12
        assert abs(agg["acc2"]["std"] - 0.05) <= 1e-12
