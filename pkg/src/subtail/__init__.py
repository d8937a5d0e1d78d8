"""Subclass-balancing contrastive learning at desk scale.

Long-tailed synthetic datasets, capacity-constrained adaptive clustering,
bi-granularity contrastive losses with dynamic per-class temperature, a
manually differentiated encoder, the interleaved training loop, and the
diagnostics (cluster balance, distance reports, subclass recovery,
linear probe). See the `subtail` CLI for the file-level pipeline.
"""

__version__ = "0.1.0"

from ._backend import BACKEND, worker_threads
from .clustering import (
    ClusterConfig,
    ClusterFormatError,
    ClusterModel,
    ClusterStats,
    baseline_kmeans,
    capacity_threshold,
    cluster_class,
    cluster_dataset,
    cluster_stats,
    load_clusters,
    save_clusters,
    size_stats,
)
from .dataset import (
    DatasetFormatError,
    GeneratorConfig,
    LongTailDataset,
    class_count_profile,
    generate,
    generate_eval,
    imbalance_ratio,
    load_dataset,
    save_dataset,
    split_labels,
)
from .encoder import (
    AugmentationConfig,
    Encoder,
    EncoderCollapseError,
    EncoderConfig,
    EncoderFormatError,
    MomentumSGD,
    augment,
    load_encoder,
    save_encoder,
)
from .losses import (
    Batch,
    LossConfig,
    LossReport,
    TemperatureTable,
    build_temperature_table,
    class_centroids,
    concentration,
    dynamic_temperature,
    kcl_loss,
    kcl_positive_mask,
    sbcl_loss,
    scl_loss,
)
from .metrics import (
    DistanceReport,
    LinearProbe,
    adjusted_rand_index,
    distance_report,
    evaluate_probe,
    probe_loss_and_grads,
    set_distance,
    subclass_recovery,
    train_probe,
)
from .trainer import (
    TrainConfig,
    TrainLogRecord,
    TrainResult,
    extract_features,
    scl_baseline_config,
    train,
    write_train_log,
)

__all__ = [name for name in dir() if not name.startswith("_")]
