"""Training loop, transfer regimes and bagging runs driven by an ExperimentConfig."""

from __future__ import annotations

import dataclasses
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from top2sar import ingest, model, sampler, synth
from top2sar.losses import LossConfig, class_weights, combined_data_loss
from top2sar.metrics import evaluate_scores, majority_vote
from top2sar.model import AdamState, Network, NetworkSpec

log = logging.getLogger(__name__)

LOSS_REGIMES = ("ce", "top2", "combined")
TRANSFER_REGIMES = ("scratch", "direct", "transitive")
SOURCES = ("synthetic", "manifest")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    name: str = "run"
    source: str = "synthetic"
    # synthetic data
    counts: list[int] = field(default_factory=lambda: synth.scaled_counts(0.1))
    target_counts: list[int] | None = None
    test_per_class: int = 100
    feature_dim: int = 16
    separation: float = 30.0
    spread: float = 10.0
    shift: float = 1.0
    # manifest data
    train_manifest: str | None = None
    test_manifest: str | None = None
    pretrain_manifests: list[str] = field(default_factory=list)
    test_fraction: float = 0.2
    # loss
    loss: str = "combined"
    lam: float = 0.2
    tau: float = 1.0
    mu: float = 0.25
    # optimisation
    learning_rate: float | None = None
    batch_size: int = 70
    max_epochs: int = 200
    pretrain_epochs: int | None = None
    pretrain_loss: str = "ce"
    patience: int = 3
    val_fraction: float = 0.1
    # network
    width: int = 32
    n_blocks: int = 2
    # regimes and switches
    transfer: str = "scratch"
    transfer_mode: str = "head_only_reinit"
    balanced: bool = True
    class_weighting: bool = True
    standardize: bool = False
    noise_rate: float = 0.0
    seeds: list[int] = field(default_factory=lambda: [0])

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ConfigError(f"unknown config field(s): {', '.join(unknown)}")
        cfg = cls(**doc)
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **changes) -> "ExperimentConfig":
        cfg = dataclasses.replace(self, **changes)
        cfg.validate()
        return cfg

    @property
    def loss_config(self) -> LossConfig:
        return self.loss_config_for(self.loss)

    def loss_config_for(self, regime: str) -> LossConfig:
        lam = {"ce": 0.0, "top2": 1.0}.get(regime, self.lam)
        return LossConfig(lam=lam, tau=self.tau, mu=self.mu)

    @property
    def effective_learning_rate(self) -> float:
        return self.learning_rate_for(self.loss)

    def learning_rate_for(self, regime: str) -> float:
        if self.learning_rate is not None:
            return self.learning_rate
        # smaller step whenever the top-2 term is active
        return 1e-4 if regime == "ce" else 1e-5

    def validate(self) -> None:
        def need(ok, msg):
            if not ok:
                raise ConfigError(msg)

        need(self.source in SOURCES, f"source must be one of {SOURCES}")
        need(self.loss in LOSS_REGIMES, f"loss must be one of {LOSS_REGIMES}")
        need(self.pretrain_loss in LOSS_REGIMES, f"pretrain_loss must be one of {LOSS_REGIMES}")
        need(self.transfer in TRANSFER_REGIMES, f"transfer must be one of {TRANSFER_REGIMES}")
        need(self.transfer_mode in model.TRANSFER_MODES, f"transfer_mode must be one of {model.TRANSFER_MODES}")
        need(0.0 <= self.lam <= 1.0, "lam must lie in [0, 1]")
        need(self.tau > 0, "tau must be > 0")
        need(self.mu >= 0, "mu must be >= 0")
        need(self.learning_rate is None or self.learning_rate > 0, "learning_rate must be > 0")
        need(self.max_epochs >= 1, "max_epochs must be >= 1")
        need(self.pretrain_epochs is None or self.pretrain_epochs >= 1, "pretrain_epochs must be >= 1")
        need(self.patience >= 1, "patience must be >= 1")
        need(0.0 < self.val_fraction < 1.0, "val_fraction must lie in (0, 1)")
        need(0.0 <= self.noise_rate <= 1.0, "noise_rate must lie in [0, 1]")
        need(self.width >= 1 and self.n_blocks >= 0, "width must be >= 1 and n_blocks >= 0")
        need(len(self.seeds) >= 1, "at least one seed is required")
        need(all(isinstance(s, int) and 0 <= s < 2**63 for s in self.seeds), "seeds must be nonnegative integers")
        if self.source == "synthetic":
            need(len(self.counts) >= 2 and all(c >= 1 for c in self.counts), "counts need >= 2 positive entries")
            need(self.target_counts is None or len(self.target_counts) == len(self.counts),
                 "target_counts must match counts in length")
            need(self.test_per_class >= 1, "test_per_class must be >= 1")
            need(self.batch_size >= len(self.counts) or not self.balanced,
                 "balanced batches need batch_size >= number of classes")
        else:
            need(self.train_manifest is not None, "manifest source needs train_manifest")
            need(0.0 < self.test_fraction < 1.0, "test_fraction must lie in (0, 1)")
            wanted = {"scratch": 0, "direct": 1, "transitive": 2}[self.transfer]
            need(len(self.pretrain_manifests) >= wanted,
                 f"transfer={self.transfer} needs {wanted} pretrain manifest(s)")
        need(self.batch_size >= 1, "batch_size must be >= 1")


@dataclass
class ReportRow:
    run_id: str
    seed: int
    transfer_regime: str
    loss_regime: str
    epochs: int
    train_loss: float
    val_loss: float
    top1: float
    top2: float
    macro_f1: float
    seconds: float
    # echoed settings and curves; not part of the delimited report
    lam: float = field(default=0.0, repr=False)
    tau: float = field(default=1.0, repr=False)
    mu: float = field(default=0.0, repr=False)
    learning_rate: float = field(default=0.0, repr=False)
    history: list[tuple[float, float]] = field(default_factory=list, repr=False)


REPORT_COLUMNS = (
    "run_id", "seed", "transfer_regime", "loss_regime", "epochs",
    "train_loss", "val_loss", "top1", "top2", "macro_f1", "seconds",
)


@dataclass
class TrainResult:
    network: Network
    epochs: int
    best_epoch: int
    train_loss: float
    val_loss: float
    history: list[tuple[float, float]]


def derive_seeds(master: int, n: int, tag: int = 0) -> list[int]:
    state = np.random.SeedSequence([master, tag]).generate_state(n, dtype=np.uint64)
    return [int(s) for s in state]


def data_loss(net: Network, ds: sampler.Dataset, cfg: LossConfig, weights) -> float:
    scores, _ = model.forward(net, ds.features)
    return float(np.mean(combined_data_loss(scores, ds.labels, weights, cfg).value))


def train(
    net: Network,
    train_ds: sampler.Dataset,
    val_ds: sampler.Dataset,
    loss_cfg: LossConfig,
    weights,
    *,
    learning_rate: float,
    batch_size: int,
    max_epochs: int,
    patience: int,
    balanced: bool = True,
    seed: int = 0,
) -> TrainResult:
    """Adam on mini-batches with early stopping on validation data loss.

    Stops once ``patience`` epochs pass without a strictly lower validation
    loss and returns the parameters of the best epoch.
    """
    net = net.copy()
    state = AdamState(learning_rate=learning_rate)
    epoch_seeds = derive_seeds(seed, max_epochs, tag=11)
    make_batches = sampler.balanced_batches if balanced else sampler.shuffled_batches
    best = (np.inf, 0, None, np.nan)
    history = []
    wait = 0
    epoch = 0
    for epoch in range(1, max_epochs + 1):
        batch_losses = []
        for rows in make_batches(train_ds, batch_size, epoch_seeds[epoch - 1]):
            scores, cache = model.forward(net, train_ds.features[rows])
            out = combined_data_loss(scores, train_ds.labels[rows], weights, loss_cfg)
            grads = model.backward(net, cache, out.grad, loss_cfg.mu)
            model.adam_step(net, grads, state)
            batch_losses.append(float(np.mean(out.value)))
        train_loss = float(np.mean(batch_losses))
        val_loss = data_loss(net, val_ds, loss_cfg, weights)
        history.append((train_loss, val_loss))
        if val_loss < best[0]:
            best = (val_loss, epoch, net.copy(), train_loss)
            wait = 0
        else:
            wait += 1
            if wait >= patience:
                break
    val_loss, best_epoch, best_net, train_loss = best
    if best_net is None:  # validation loss never finite
        best_net, best_epoch, train_loss = net, epoch, history[-1][0]
    return TrainResult(best_net, epoch, best_epoch, train_loss, val_loss, history)


@dataclass
class Stage:
    train: sampler.Dataset
    val: sampler.Dataset


@dataclass
class PreparedData:
    target: Stage
    test: sampler.Dataset
    sources: list[sampler.Dataset]  # pretraining domains, nearest-to-origin first


def _standardize(stage: Stage, *others):
    params, _ = ingest.standardize(stage.train.features)
    fix = lambda ds: sampler.Dataset(params.apply(ds.features), ds.labels, ds.n_classes)  # noqa: E731
    return (Stage(fix(stage.train), fix(stage.val)), *(fix(o) for o in others))


def prepare_data(cfg: ExperimentConfig, seed: int) -> PreparedData:
    """Build the target train/val/test split (with label noise on train/val) and source domains."""
    split_seed, noise_seed, val_seed = derive_seeds(seed, 3, tag=1)
    if cfg.source == "synthetic":
        train_counts = cfg.target_counts or cfg.counts
        chain = synth.DomainChainSpec(
            base=synth.MixtureSpec(
                counts=tuple(cfg.counts), feature_dim=cfg.feature_dim,
                separation=cfg.separation, spread=cfg.spread, seed=seed,
            ),
            shift_magnitude=cfg.shift,
            target_counts=tuple(c + cfg.test_per_class for c in train_counts),
        )
        if cfg.transfer == "scratch":
            # source domains are never generated for scratch runs
            target_full = synth.sample_mixture(
                synth.domain_means(chain)[2], chain.target_counts, cfg.spread,
                np.random.default_rng([seed, 3, 2]),
            )
            sources = []
        else:
            dom_a, dom_b, target_full = synth.make_domain_chain(chain)
            sources = [dom_a] if cfg.transfer == "direct" else [dom_a, dom_b]
        pool, test = sampler.stratified_split(target_full, seed=split_seed, test_count=cfg.test_per_class)
    else:
        pool = sampler.read_manifest(cfg.train_manifest)
        if cfg.test_manifest:
            test = sampler.read_manifest(cfg.test_manifest)
        else:
            pool, test = sampler.stratified_split(pool, cfg.test_fraction, seed=split_seed)
        wanted = {"scratch": 0, "direct": 1, "transitive": 2}[cfg.transfer]
        sources = [sampler.read_manifest(p) for p in cfg.pretrain_manifests[:wanted]]
    noisy = sampler.inject_label_noise(pool, sampler.NoiseSpec(cfg.noise_rate, noise_seed))
    train_ds, val_ds = sampler.stratified_split(noisy, cfg.val_fraction, seed=val_seed)
    return PreparedData(Stage(train_ds, val_ds), test, sources)


def _weights(cfg: ExperimentConfig, ds: sampler.Dataset) -> np.ndarray:
    if cfg.class_weighting:
        return class_weights(ds.class_counts)
    return np.full(ds.n_classes, 1.0 / ds.n_classes)


def _fit(cfg: ExperimentConfig, net: Network, stage: Stage, max_epochs: int, seed: int, regime=None) -> TrainResult:
    regime = regime or cfg.loss
    return train(
        net, stage.train, stage.val, cfg.loss_config_for(regime), _weights(cfg, stage.train),
        learning_rate=cfg.learning_rate_for(regime), batch_size=cfg.batch_size,
        max_epochs=max_epochs, patience=cfg.patience, balanced=cfg.balanced, seed=seed,
    )


def initial_network(cfg: ExperimentConfig, data: PreparedData, seed: int) -> Network:
    """Random init for scratch; otherwise pretrain along the source chain and swap the head."""
    init_seed, *stage_seeds = derive_seeds(seed, 1 + 2 * len(data.sources) + 1, tag=2)
    n_target = data.target.train.n_classes
    dim = data.target.train.n_features
    if cfg.transfer == "scratch" or not data.sources:
        return model.init_network(NetworkSpec(dim, cfg.width, cfg.n_blocks, n_target, init_seed))
    pre_epochs = cfg.pretrain_epochs or cfg.max_epochs
    net = None
    for i, src in enumerate(data.sources):
        if src.n_features != dim:
            raise ConfigError("pretraining data must have the target's feature width")
        val_seed, fit_seed = stage_seeds[2 * i:2 * i + 2]
        tr, va = sampler.stratified_split(src, cfg.val_fraction, seed=val_seed)
        stage = Stage(tr, va)
        if cfg.standardize:
            (stage,) = _standardize(stage)
        if net is None:
            net = model.init_network(NetworkSpec(dim, cfg.width, cfg.n_blocks, src.n_classes, init_seed))
        else:
            net = model.transfer_init(net, src.n_classes, "head_only_reinit", seed=fit_seed)
        net = _fit(cfg, net, stage, pre_epochs, fit_seed, regime=cfg.pretrain_loss).network
    return model.transfer_init(net, n_target, cfg.transfer_mode, seed=stage_seeds[-1])


def _row(cfg, run_id, seed, result: TrainResult, scores, test, seconds) -> ReportRow:
    m = evaluate_scores(scores, test.labels)
    lc = cfg.loss_config
    return ReportRow(
        run_id=run_id, seed=seed, transfer_regime=cfg.transfer, loss_regime=cfg.loss,
        epochs=result.epochs, train_loss=result.train_loss, val_loss=result.val_loss,
        top1=m.top1_accuracy, top2=m.top2_accuracy, macro_f1=m.macro_f1, seconds=seconds,
        lam=lc.lam, tau=lc.tau, mu=lc.mu, learning_rate=cfg.effective_learning_rate,
        history=result.history,
    )


def run_single(cfg: ExperimentConfig, seed: int, checkpoint_dir=None) -> ReportRow:
    start = time.perf_counter()
    data = prepare_data(cfg, seed)
    test = data.test
    if cfg.standardize:
        data.target, test = _standardize(data.target, test)
    net = initial_network(cfg, data, seed)
    result = _fit(cfg, net, data.target, cfg.max_epochs, derive_seeds(seed, 1, tag=3)[0])
    scores, _ = model.forward(result.network, test.features)
    run_id = f"{cfg.name}-s{seed}"
    if checkpoint_dir is not None:
        os.makedirs(checkpoint_dir, exist_ok=True)
        model.save_checkpoint(result.network, os.path.join(checkpoint_dir, f"{run_id}.json"))
    row = _row(cfg, run_id, seed, result, scores, test, time.perf_counter() - start)
    log.info("%s: epochs=%d top1=%.4f macro_f1=%.4f", run_id, row.epochs, row.top1, row.macro_f1)
    return row


def run_experiment(cfg: ExperimentConfig, *, jobs: int = 1, checkpoint_dir=None) -> list[ReportRow]:
    """One ReportRow per seed, in the config's seed order."""
    cfg.validate()
    if jobs > 1 and len(cfg.seeds) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(run_single, cfg, s, checkpoint_dir) for s in cfg.seeds]
            return [f.result() for f in futures]
    return [run_single(cfg, s, checkpoint_dir) for s in cfg.seeds]


def ensemble_scores(probabilities) -> np.ndarray:
    """Mean probabilities with the vote winner lifted to rank one.

    Top-1 of the result is the majority vote; the runner-up is the class with
    the highest mean probability among the rest.
    """
    mean = np.mean(probabilities, axis=0)
    winner = majority_vote(probabilities)
    scores = mean.copy()
    scores[np.arange(len(winner)), winner] = 2.0
    return scores


def run_bagging(cfg: ExperimentConfig, n_models: int = 5) -> tuple[list[ReportRow], list[ReportRow]]:
    """Per seed: ``n_models`` sub-models on bootstrap resamples, voted on a shared test split.

    Returns (ensemble rows, sub-model rows).
    """
    if n_models < 1:
        raise ConfigError("n_models must be >= 1")
    cfg.validate()
    ensemble_rows, member_rows = [], []
    for seed in cfg.seeds:
        start = time.perf_counter()
        data = prepare_data(cfg, seed)
        test = data.test
        if cfg.standardize:
            data.target, test = _standardize(data.target, test)
        probs, results = [], []
        for k, sub_seed in enumerate(derive_seeds(seed, n_models, tag=7)):
            t0 = time.perf_counter()
            boot = sampler.bootstrap_resample(data.target.train, sub_seed)
            sub_data = PreparedData(Stage(boot, data.target.val), test, data.sources)
            net = initial_network(cfg, sub_data, sub_seed)
            result = _fit(cfg, net, sub_data.target, cfg.max_epochs, derive_seeds(sub_seed, 1, tag=3)[0])
            scores, _ = model.forward(result.network, test.features)
            probs.append(model.softmax(scores))
            results.append(result)
            member_rows.append(
                _row(cfg, f"{cfg.name}-s{seed}-m{k}", seed, result, scores, test, time.perf_counter() - t0)
            )
        merged = TrainResult(
            network=results[0].network,
            epochs=max(r.epochs for r in results),
            best_epoch=max(r.best_epoch for r in results),
            train_loss=float(np.mean([r.train_loss for r in results])),
            val_loss=float(np.mean([r.val_loss for r in results])),
            history=[],
        )
        ensemble_rows.append(
            _row(cfg, f"{cfg.name}-s{seed}-bag{n_models}", seed, merged,
                 ensemble_scores(probs), test, time.perf_counter() - start)
        )
    return ensemble_rows, member_rows
