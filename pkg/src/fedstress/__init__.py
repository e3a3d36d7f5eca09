"""Differentially private federated transfer learning for stress detection.

A small, fully inspectable stack: a from-scratch MLP with manual backprop,
Laplace-mechanism privacy on clipped client updates, a FedAvg round engine,
a PPG-to-HRV feature pipeline, synthetic study cohorts, and an evaluation
harness comparing plain / pretrained / federated-fine-tuned training.
"""

from .config import (DataConfig, ExperimentConfig, FinetuneConfig, PhaseConfig,
                     load_config)
from .data import (ClientShard, CohortSpec, Dataset, Sample, binarize_dataset,
                   binarize_label, chronological_split, generate_cohort,
                   load_dataset_csv, partition_clients, write_dataset_csv)
from .errors import ConfigError, DataError, InsufficientDataError
from .federation import (ClientState, RoundRecord, aggregate, distribute,
                         local_train, make_clients, run_round)
from .hrv import (FeatureBounds, FilterSpec, HrvFeatures, IbiSeries, PpgSignal,
                  butterworth_bandpass, detect_peaks, extract_features,
                  features_from_ppg, min_max_normalize, moving_average, to_ibi)
from .metrics import (ClassificationMetrics, ConfusionCounts, RocCurve,
                      classification_metrics, confusion, roc)
from .nn import (AdamState, Gradient, MlpModel, adam_step, bce_loss,
                 clip_gradient, load_model, save_model, sigmoid)
from .params import LayoutEntry, ParameterSet, mlp_layout
from .pipeline import (TrainedArtifact, finetune_federated, load_checkpoint,
                       pretrain, run_mode, sweep_epsilon)
from .privacy import (NoisedUpdate, PrivacyConfig, noise_scale,
                      privatize_update, sample_laplace)

__version__ = "0.1.0"
