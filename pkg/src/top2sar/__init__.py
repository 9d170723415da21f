"""Cost-sensitive top-2 smooth loss, imbalanced-class training and transfer regimes."""

from top2sar.losses import (
    LossConfig,
    LossError,
    LossValueGrad,
    class_weights,
    combined_data_loss,
    cross_entropy,
    top2_hard_reference,
    top2_smooth_loss,
)
from top2sar.metrics import (
    MetricsReport,
    confusion,
    macro_f1,
    majority_vote,
    topk_accuracy,
)
from top2sar.model import (
    AdamState,
    Network,
    NetworkSpec,
    adam_step,
    backward,
    forward,
    init_network,
    l2_penalty,
    predict_topk,
    transfer_init,
)
from top2sar.sampler import (
    Dataset,
    NoiseSpec,
    balanced_batches,
    bootstrap_resample,
    inject_label_noise,
    stratified_split,
)

__version__ = "0.1.0"
