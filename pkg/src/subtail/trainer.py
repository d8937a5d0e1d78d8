"""Training loop: warm-up, periodic re-clustering, balanced-loss epochs.

Epochs [0, T0) train with the plain class loss (scl or kcl). From T0 on,
every epoch t with (t - T0) % K == 0 re-extracts all features, re-runs
the capacity-constrained clustering, and refreshes the per-class
temperatures; every epoch in [T0, T) trains with the balanced loss.
Update alignment is relative to T0 so the first balanced epoch always
sees fresh clusters. Everything is driven by named child RNG streams of
the config seed, so a fixed seed reproduces runs bit-exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .clustering import ClusterConfig, ClusterModel, cluster_dataset, cluster_stats
from .encoder import (
    AugmentationConfig,
    Encoder,
    EncoderCollapseError,
    EncoderConfig,
    MomentumSGD,
    augment,
    save_encoder,
)
from .losses import (
    Batch,
    LossConfig,
    TemperatureTable,
    build_temperature_table,
    kcl_loss,
    sbcl_loss,
    scl_loss,
)

WARMUP_LOSSES = ("scl", "kcl")


@dataclass(frozen=True)
class TrainConfig:
    warmup_epochs: int = 10
    total_epochs: int = 60
    update_interval: int = 10
    batch_size: int = 64
    warmup_loss: str = "scl"
    loss: LossConfig = field(default_factory=LossConfig)
    cluster: ClusterConfig = field(default_factory=ClusterConfig)
    alpha: float = 10.0
    arch: str = "mlp1"
    hidden_dim: int = 32
    embed_dim: int = 16
    base_lr: float = 0.05
    momentum: float = 0.9
    augment_sigma: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.warmup_epochs <= self.total_epochs:
            raise ValueError("need 0 <= warmup_epochs <= total_epochs")
        if self.update_interval < 1:
            raise ValueError("update_interval must be >= 1")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if self.warmup_loss not in WARMUP_LOSSES:
            raise ValueError(f"warmup_loss must be one of {WARMUP_LOSSES}")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")


@dataclass
class TrainLogRecord:
    """One epoch of training diagnostics.

    Losses are per-anchor means over the epoch (batch sums divided by the
    sample count). Term fields and temperature/cluster fields are NaN
    during warm-up.
    """

    epoch: int
    loss: float
    term_subclass: float
    term_class: float
    cluster_imbalance: float
    mean_tau2: float
    lr: float

    FIELDS = ("epoch", "loss", "term_subclass", "term_class",
              "cluster_imbalance", "mean_tau2", "lr")


@dataclass
class TrainResult:
    encoder: Encoder
    log: list
    clusters: ClusterModel | None
    temperatures: TemperatureTable | None
    temperature_history: list


def extract_features(encoder: Encoder, ds) -> np.ndarray:
    """Embed every sample without augmentation; rows are unit-norm."""
    return encoder.embed(ds.inputs)


def _batches(perm: np.ndarray, batch_size: int):
    """Chunk a permutation into batches; a final chunk of one sample is
    merged into the previous batch."""
    chunks = [perm[i : i + batch_size] for i in range(0, perm.shape[0], batch_size)]
    if len(chunks) > 1 and chunks[-1].shape[0] < 2:
        chunks[-2] = np.concatenate([chunks[-2], chunks[-1]])
        chunks.pop()
    return chunks


def train(ds, config: TrainConfig, checkpoint_path=None) -> TrainResult:
    ss = np.random.SeedSequence(config.seed)
    batch_ss, aug_ss, kcl_ss = ss.spawn(3)
    batch_rng = np.random.default_rng(batch_ss)
    aug_rng = np.random.default_rng(aug_ss)
    kcl_rng = np.random.default_rng(kcl_ss)

    enc = Encoder.init(
        EncoderConfig(
            arch=config.arch,
            input_dim=ds.input_dim,
            embed_dim=config.embed_dim,
            hidden_dim=config.hidden_dim if config.arch == "mlp1" else 0,
            seed=config.seed,
        )
    )
    opt = MomentumSGD(enc, config.base_lr, config.momentum, max(config.total_epochs, 1))
    aug_cfg = AugmentationConfig(config.augment_sigma)
    if checkpoint_path is not None:
        Path(checkpoint_path).parent.mkdir(parents=True, exist_ok=True)

    clusters: ClusterModel | None = None
    temps: TemperatureTable | None = None
    temperature_history: list = []
    log: list = []
    t0 = config.warmup_epochs

    for t in range(config.total_epochs):
        if t >= t0 and (t - t0) % config.update_interval == 0:
            feats = extract_features(enc, ds)
            clusters = cluster_dataset(feats, ds, config.cluster)
            temps = build_temperature_table(feats, ds, config.loss.tau1, config.alpha)
            temperature_history.append(temps)
            if checkpoint_path is not None:
                _save_numbered(enc, checkpoint_path, t)

        perm = batch_rng.permutation(ds.num_samples)
        loss_sum = 0.0
        t1_sum = 0.0
        t2_sum = 0.0
        for idx in _batches(perm, config.batch_size):
            x = ds.inputs[idx]
            x_tilde = augment(x, aug_cfg, aug_rng)
            try:
                z, cache = enc.forward(x)
                z_tilde, cache_tilde = enc.forward(x_tilde)
            except EncoderCollapseError as exc:
                raise EncoderCollapseError(f"epoch {t}: {exc}") from exc
            if t < t0:
                batch = Batch(z, z_tilde, ds.labels[idx])
                if config.warmup_loss == "scl":
                    report = scl_loss(batch, config.loss.tau1)
                else:
                    report = kcl_loss(batch, config.loss.tau1, config.loss.k_positives, kcl_rng)
            else:
                batch = Batch(z, z_tilde, ds.labels[idx], subclasses=clusters.assignments[idx])
                report = sbcl_loss(batch, config.loss, temps)
                t1_sum += report.term_subclass
                t2_sum += report.term_class
            grads, _ = enc.backward(cache, report.grad_anchor)
            grads_tilde, _ = enc.backward(cache_tilde, report.grad_augmented)
            opt.step([a + b for a, b in zip(grads, grads_tilde)], t)
            loss_sum += report.loss

        n = ds.num_samples
        if t < t0:
            term1 = term2 = ratio = mean_tau2 = float("nan")
        else:
            term1 = t1_sum / n
            term2 = t2_sum / n
            stats = cluster_stats(clusters)
            ratio = stats.size_imbalance_ratio if stats is not None else float("nan")
            mean_tau2 = float(temps.tau2.mean())
        log.append(
            TrainLogRecord(
                epoch=t,
                loss=loss_sum / n,
                term_subclass=term1,
                term_class=term2,
                cluster_imbalance=ratio,
                mean_tau2=mean_tau2,
                lr=float(opt.lr_at(t)),
            )
        )

    if checkpoint_path is not None:
        save_encoder(enc, checkpoint_path)
    return TrainResult(enc, log, clusters, temps, temperature_history)


def _save_numbered(enc: Encoder, checkpoint_path, epoch: int) -> None:
    p = Path(checkpoint_path)
    save_encoder(enc, p.with_name(f"{p.stem}-e{epoch:04d}{p.suffix}"))


def scl_baseline_config(config: TrainConfig) -> TrainConfig:
    """Matched-budget plain-contrastive control: same epochs, optimizer,
    and batches, with warm-up covering the whole run so clustering never
    engages."""
    return replace(config, warmup_epochs=config.total_epochs, warmup_loss="scl")


def write_train_log(log, path) -> None:
    with open(path, "w") as f:
        f.write(",".join(TrainLogRecord.FIELDS) + "\n")
        for rec in log:
            cells = [f"{rec.epoch}"]
            for name in TrainLogRecord.FIELDS[1:]:
                cells.append(f"{getattr(rec, name):.17g}")
            f.write(",".join(cells) + "\n")
