"""Speaker-invariant codebook learning on two-factor speech corpora.

The package trains a small encoder + codebook stack with swapped prediction
between original and speaker-perturbed views, where targets are smoothed by
entropy-regularized balanced assignment, and measures the result with
discrete-unit quality, ABX discriminability, and speaker-probe metrics.
"""

from .corpus import (CorpusManifest, FrameBatch, FrameBatchPair, SpeakerVoice,
                     SyntheticSpec, SyntheticWorld, batch_frames,
                     generate_synthetic_corpus, load_corpus, save_corpus)
from .errors import ConfigError, SivqError, TrainingDiverged, ValidationError
from .features import FeatureConfig, extract_features, ensure_features
from .metrics import (AbxTask, ContingencyTable, abx_error, build_abx_task,
                      code_phone_heatmap, contingency, dtw_angular_distance,
                      kmeans, phone_tokens, purity_metrics, speaker_probe,
                      spearman, ttest_two_sample)
from .model import (Codebook, EncoderParams, ProjectionParams,
                    code_probabilities, encode, init_params, load_checkpoint,
                    project_normalize, quantize_argmax, save_checkpoint)
from .perturb import (PerturbConfig, PerturbParams, perturb_synthetic,
                      perturb_waveform, sample_perturb_params)
from .sinkhorn import SinkhornConfig, sinkhorn_exact, smooth_targets
from .training import (TrainConfig, TrainLog, TrainResult, codebook_utilization,
                       loss_gradients, lr_schedule, processed_speech_hours,
                       swapped_loss, train)
from .experiment import RunConfig, parse_config, report, run_experiment

__version__ = "0.1.0"
