"""Class-incremental learning by feature expansion and distillation
compression, with rehearsal-paired CutMix, on a self-contained numpy
reverse-mode autodiff engine.

Set FECIL_THREADS before first import to cap BLAS/OpenMP parallelism.
"""

import os as _os

_threads = _os.environ.get("FECIL_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                 "NUMEXPR_NUM_THREADS"):
        _os.environ.setdefault(_var, _threads)

from .autodiff import Tensor, backward  # noqa: E402
from .checkpoint import CheckpointError, load_compact, load_container, save_compact, save_container  # noqa: E402
from .config import ConfigError, build_run_config, load_run_config, parse_config_text  # noqa: E402
from .datasets import (DatasetError, LabeledDataset, TaskSequence,  # noqa: E402
                       build_incremental_dataset, load_cifar_binary, load_dataset,
                       load_idx, make_task_sequence, synth_gaussians)
from .gradcheck import run_gradient_suite  # noqa: E402
from .losses import distillation_loss, softened_softmax, softmax_cross_entropy  # noqa: E402
from .memory import ExemplarMemory, MemoryBudget, herding_select, sample_memory_batch, update_memory  # noqa: E402
from .metrics import RunSummary, average_incremental_accuracy, topk_accuracy  # noqa: E402
from .mixing import (MixPlan, cutmix_apply, mixed_target, mixup_apply, plan_mix,  # noqa: E402
                     rehearsal_pair_batch, sample_box, sample_lambda, within_batch_mix)
from .networks import (BackboneConfig, Classifier, CompactNetwork, DynamicNetwork,  # noqa: E402
                       FeatureExtractor, aux_targets, compress_init, expand, param_count,
                       weight_align)
from .optim import SGDMomentum, cosine_lr, sgd_momentum_step  # noqa: E402
from .training import (RunConfig, TrainConfig, TrainingError, evaluate, measure_epoch_time,  # noqa: E402
                       run_ablation, run_incremental, train_compression, train_expansion,
                       train_first_task)

__version__ = "0.1.0"

__all__ = [
    "Tensor", "backward",
    "CheckpointError", "load_compact", "load_container", "save_compact", "save_container",
    "ConfigError", "build_run_config", "load_run_config", "parse_config_text",
    "DatasetError", "LabeledDataset", "TaskSequence", "build_incremental_dataset",
    "load_cifar_binary", "load_dataset", "load_idx", "make_task_sequence", "synth_gaussians",
    "run_gradient_suite",
    "distillation_loss", "softened_softmax", "softmax_cross_entropy",
    "ExemplarMemory", "MemoryBudget", "herding_select", "sample_memory_batch", "update_memory",
    "RunSummary", "average_incremental_accuracy", "topk_accuracy",
    "MixPlan", "cutmix_apply", "mixed_target", "mixup_apply", "plan_mix",
    "rehearsal_pair_batch", "sample_box", "sample_lambda", "within_batch_mix",
    "BackboneConfig", "Classifier", "CompactNetwork", "DynamicNetwork", "FeatureExtractor",
    "aux_targets", "compress_init", "expand", "param_count", "weight_align",
    "SGDMomentum", "cosine_lr", "sgd_momentum_step",
    "RunConfig", "TrainConfig", "TrainingError", "evaluate", "measure_epoch_time",
    "run_ablation", "run_incremental", "train_compression", "train_expansion",
    "train_first_task",
    "__version__",
]
