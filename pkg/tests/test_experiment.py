import numpy as np
import pytest

from top2sar import model, sampler
from top2sar.experiment import (
    ConfigError,
    ExperimentConfig,
    data_loss,
    derive_seeds,
    ensemble_scores,
    prepare_data,
    run_bagging,
    run_experiment,
    train,
)
from top2sar.losses import LossConfig, class_weights
from top2sar.metrics import majority_vote

SMALL = dict(counts=[60, 20, 30], test_per_class=10, feature_dim=4, width=8, n_blocks=1,
             batch_size=12, max_epochs=6, learning_rate=1e-2)


def small(**kw):
    return ExperimentConfig(**{**SMALL, **kw})


class TestConfig:
    def test_defaults(self):
        cfg = ExperimentConfig()
        assert (cfg.lam, cfg.tau, cfg.mu, cfg.patience) == (0.2, 1.0, 0.25, 3)
        assert cfg.effective_learning_rate == 1e-5
        assert cfg.replace(loss="ce").effective_learning_rate == 1e-4
        assert cfg.replace(learning_rate=3e-3).effective_learning_rate == 3e-3
        assert sum(cfg.counts) == 5241

    def test_loss_regimes(self):
        cfg = ExperimentConfig(lam=0.3)
        assert cfg.loss_config_for("ce").lam == 0.0
        assert cfg.loss_config_for("top2").lam == 1.0
        assert cfg.loss_config_for("combined").lam == 0.3

    def test_dict_round_trip(self):
        cfg = small(seeds=[3, 4])
        assert ExperimentConfig.from_dict(cfg.to_dict()) == cfg

    def test_unknown_field(self):
        with pytest.raises(ConfigError, match="lamda"):
            ExperimentConfig.from_dict({"lamda": 0.1})

    @pytest.mark.parametrize(
        "kw",
        [{"loss": "hinge"}, {"transfer": "nope"}, {"lam": 2.0}, {"tau": 0.0}, {"patience": 0},
         {"max_epochs": 0}, {"seeds": []}, {"noise_rate": 1.5}, {"batch_size": 2},
         {"source": "manifest"}, {"counts": [5]}],
    )
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            small(**kw).validate()


def test_derive_seeds():
    a = derive_seeds(0, 5)
    assert len(set(a)) == 5
    assert a == derive_seeds(0, 5)
    assert a != derive_seeds(1, 5) and a != derive_seeds(0, 5, tag=1)


class TestPrepare:
    def test_splits(self):
        data = prepare_data(small(), seed=0)
        assert data.test.class_counts.tolist() == [10, 10, 10]
        total = data.target.train.class_counts + data.target.val.class_counts
        assert total.tolist() == [60, 20, 30]
        assert data.sources == []

    def test_noise_only_on_training_pool(self):
        clean = prepare_data(small(), seed=1)
        noisy = prepare_data(small(noise_rate=0.5), seed=1)
        assert np.array_equal(clean.test.labels, noisy.test.labels)
        assert np.array_equal(clean.test.features, noisy.test.features)
        assert not np.array_equal(clean.target.train.labels, noisy.target.train.labels)

    def test_scratch_target_matches_chain_target(self):
        a = prepare_data(small(transfer="scratch", shift=5.0), seed=2)
        b = prepare_data(small(transfer="transitive", shift=5.0), seed=2)
        assert np.array_equal(a.test.features, b.test.features)
        assert np.array_equal(a.target.train.features, b.target.train.features)
        assert len(b.sources) == 2


def fit_small(max_epochs, patience=3, seed=0):
    data = prepare_data(small(), seed=0)
    net = model.init_network(model.NetworkSpec(4, 8, 1, 3, init_seed=0))
    w = class_weights(data.target.train.class_counts)
    cfg = LossConfig()
    res = train(net, data.target.train, data.target.val, cfg, w, learning_rate=1e-2, batch_size=12,
                max_epochs=max_epochs, patience=patience, seed=seed)
    return res, data, cfg, w


class TestTrain:
    def test_single_epoch_bound(self):
        res, *_ = fit_small(1, patience=5)
        assert res.epochs == 1 and res.best_epoch == 1

    def test_restores_minimum_validation_loss(self):
        res, data, cfg, w = fit_small(40, patience=2)
        assert 1 <= res.best_epoch <= res.epochs <= 40
        vals = [v for _, v in res.history]
        assert res.val_loss == min(vals)
        assert res.val_loss == vals[res.best_epoch - 1]
        assert data_loss(res.network, data.target.val, cfg, w) == pytest.approx(res.val_loss, rel=1e-12)
        if res.epochs < 40:
            assert res.epochs - res.best_epoch == 2

    def test_deterministic(self):
        a, *_ = fit_small(5)
        b, *_ = fit_small(5)
        assert np.array_equal(a.network.flat, b.network.flat)
        assert a.history == b.history


class TestRuns:
    def test_rows_and_reproducibility(self):
        cfg = small(seeds=[0, 1], noise_rate=0.1)
        a = run_experiment(cfg)
        b = run_experiment(cfg)
        assert [r.run_id for r in a] == ["run-s0", "run-s1"]
        for x, y in zip(a, b):
            for c in ("epochs", "train_loss", "val_loss", "top1", "top2", "macro_f1"):
                assert getattr(x, c) == getattr(y, c)
        for r in a:
            assert 0 <= r.top1 <= r.top2 <= 1 and 0 <= r.macro_f1 <= 1 and 1 <= r.epochs <= 6
            assert (r.lam, r.tau, r.mu) == (0.2, 1.0, 0.25)

    def test_jobs_match_serial(self):
        cfg = small(seeds=[0, 1], max_epochs=2)
        serial = run_experiment(cfg)
        parallel = run_experiment(cfg, jobs=2)
        assert [r.macro_f1 for r in serial] == [r.macro_f1 for r in parallel]

    @pytest.mark.parametrize("transfer", ["direct", "transitive"])
    @pytest.mark.parametrize("mode", ["head_only_reinit", "freeze_features"])
    def test_transfer_runs(self, transfer, mode):
        (r,) = run_experiment(small(transfer=transfer, transfer_mode=mode, pretrain_epochs=2, shift=3.0))
        assert r.transfer_regime == transfer and r.epochs >= 1

    def test_checkpoint_written(self, tmp_path):
        (r,) = run_experiment(small(max_epochs=2), checkpoint_dir=tmp_path)
        net = model.load_checkpoint(tmp_path / "run-s0.json")
        data = prepare_data(small(), 0)
        scores, _ = model.forward(net, data.test.features)
        assert np.mean(np.argmax(scores, axis=1) == data.test.labels) == pytest.approx(r.top1)

    def test_manifest_source(self, tmp_path):
        data = prepare_data(small(), 0)
        sampler.write_manifest(data.target.train, tmp_path / "train.csv")
        sampler.write_manifest(data.test, tmp_path / "test.csv")
        cfg = small(source="manifest", train_manifest=str(tmp_path / "train.csv"),
                    test_manifest=str(tmp_path / "test.csv"), standardize=True)
        (r,) = run_experiment(cfg)
        assert 0 <= r.top1 <= 1


class TestBagging:
    def test_single_model_ensemble_equals_member(self):
        ens, members = run_bagging(small(max_epochs=3), n_models=1)
        assert len(ens) == len(members) == 1
        for c in ("top1", "top2", "macro_f1", "epochs"):
            assert getattr(ens[0], c) == getattr(members[0], c)

    def test_five_members_per_seed(self):
        ens, members = run_bagging(small(max_epochs=2, seeds=[0, 1]), n_models=5)
        assert [r.run_id for r in ens] == ["run-s0-bag5", "run-s1-bag5"]
        assert len(members) == 10
        assert ens[0].epochs == max(m.epochs for m in members[:5])

    def test_identical_members_vote_like_any_member(self, rng):
        p = rng.dirichlet(np.ones(4), size=25)
        s = ensemble_scores([p] * 5)
        np.testing.assert_array_equal(np.argmax(s, axis=1), np.argmax(p, axis=1))

    def test_ensemble_top1_is_vote(self, rng):
        probs = [rng.dirichlet(np.ones(4), size=40) for _ in range(5)]
        np.testing.assert_array_equal(np.argmax(ensemble_scores(probs), axis=1), majority_vote(probs))

    def test_bad_n_models(self):
        with pytest.raises(ConfigError):
            run_bagging(small(), n_models=0)
