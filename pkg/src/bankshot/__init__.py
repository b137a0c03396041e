"""Few-shot classification over frozen embedding banks.

Trains a small visual adapter and shot-specific text prompts against frozen
pre-trained features with two contrastive losses plus a cross-space
distillation term, and classifies queries by fusing vision-space and
cross-modal prototype similarities.
"""

from .adapter import AdapterParams, adapt, embed_cross_visual, init_adapter, project_proxy
from .bank import (EmbeddingBank, FrozenTextEncoder, SyntheticBankSpec,
                   generate_synthetic_bank, load_bank, save_bank)
from .config import ExperimentConfig
from .episodes import (Episode, SamplingConfig, all_class_episode, all_class_split,
                       build_labeled_pool, sample_episode)
from .errors import (BankshotError, ConfigError, ContractError,
                     DegenerateFeatureError, FormatError, IoError,
                     NumericsError, SamplingError, ShapeError, ValidationError)
from .forward import episode_losses
from .harness import RunReport, run_ablation_suite, run_eval, run_gradcheck, run_train
from .infer import (PrototypeSet, Prediction, build_prototypes, classify_episode,
                    predict, predict_scores, similarity_matrix, similarity_vector)
from .losses import (LossBundle, cross_modal_contrastive, direct_distillation,
                     implicit_distillation, soft_cross_entropy, total_loss,
                     vision_contrastive)
from .optim import (ModelParams, OptimConfig, finite_diff_audit, load_checkpoint,
                    save_checkpoint, schedule_lr, step)
from .textpath import PromptSet, encode_support_text, encode_text, init_prompts

__version__ = "0.1.0"
