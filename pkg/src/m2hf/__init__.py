"""Multi-level multi-modal fusion for text-video retrieval.

Consumes precomputed per-modality features, scores caption/video pairs
at four levels (visual, audio-guided, motion-guided, ASR text), trains
the fusion parameters with dual-softmax and balanced losses, and fuses
per-level rankings by element-wise rank minimization.
"""

from .featureio import (CaptionBundle, DatasetManifest, Dims, FeatureBundle,
                        align_and_pad, read_feature_file, read_manifest,
                        synth_dataset, write_dataset, write_feature_file)
from .model import ModelParams, build_model, level_similarities
from .objective import LossConfig, PerSampleLosses, dsl_per_sample, level_loss, mmbl
from .ranker import RankMatrix, RetrievalReport, build_report, metrics, mmbf, ranks_from_similarity
from .tensor import Tensor
from .textlevel import LexiconConfig, default_lexicon, jaccard, preprocess
from .trainer import (Dataset, TrainConfig, evaluate, gradcheck, load_checkpoint,
                      save_checkpoint, train_e2e, train_ensemble)
from .wti import SimilarityMatrix, WtiParams, wti_matrix, wti_score

__all__ = [
    "CaptionBundle", "DatasetManifest", "Dims", "FeatureBundle", "LexiconConfig",
    "LossConfig", "ModelParams", "PerSampleLosses", "RankMatrix", "RetrievalReport",
    "SimilarityMatrix", "Tensor", "TrainConfig", "Dataset", "WtiParams",
    "align_and_pad", "build_model", "build_report", "default_lexicon",
    "dsl_per_sample", "evaluate", "gradcheck", "jaccard", "level_loss",
    "level_similarities", "load_checkpoint", "metrics", "mmbf", "mmbl",
    "preprocess", "ranks_from_similarity", "read_feature_file", "read_manifest",
    "save_checkpoint", "synth_dataset", "train_e2e", "train_ensemble",
    "wti_matrix", "wti_score", "write_dataset", "write_feature_file",
]

__version__ = "0.1.0"
