"""Scene-complexity-adaptive weakly supervised video moment retrieval.

End-to-end pipeline: estimate how many scenes a video's annotations
describe, generate that-many-ish temporal proposals with flatten-Gaussian
frame masks, train by masked reconstruction plus contrastive hinges, and
evaluate with recall at temporal-IoU thresholds.
"""

from .blocks import (AttentionBlock, DimensionError, NumericError, grad_check,
                     gumbel_softmax, layer_norm, make_generator,
                     positional_encoding)
from .complexity import (ComplexityError, NounSet, SceneComplexity,
                         estimate, extract_nouns, gt_scene_count,
                         remove_redundancy)
from .config import ConfigError, RunConfig
from .corpus import (AnnotationCorpus, CorpusError, CorpusIntegrityError,
                     CorpusParseError, QueryRecord, UnknownVideoError,
                     VideoRecord, build_vocab, find_queries, load_corpus,
                     save_corpus)
from .evaluation import (EvalError, EvalReport, evaluate_corpus, iou,
                         mean_iou, mismatch_heatmap, recall_at)
from .losses import (LossInputError, LossReport, MaskedProposal, MaskedQuery,
                     calibrated_total, calibration_weight, compute_losses,
                     corpus_contrastive, enumerate_masked_queries, mqr_loss,
                     mvr_loss, predict_span, sample_masked_positions,
                     sample_masked_query, swept_mqr, video_contrastive)
from .model import CrossModalDecoder, FrameRegressor, MomentModel
from .proposals import (ProposalGenerator, ProposalMask, ProposalSet,
                        base_mask, flatten_and_normalize, span_indices)
from .synthetic import (OracleAnnotations, SyntheticSpec, SyntheticSpecError,
                        generate_synthetic)
from .training import (CheckpointError, MetricsRow, NegativeCache,
                       TrainerError, TrainingDivergedError,
                       build_negative_cache, build_model, load_checkpoint,
                       model_from_checkpoint, run_full_training,
                       save_checkpoint, train_stage1, train_stage2,
                       video_alphas, write_metrics)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
