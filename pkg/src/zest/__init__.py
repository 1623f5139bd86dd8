"""Zero-shot image classification from textual class descriptions.

Class documents are turned into TF-IDF vectors, optionally reduced to
visually relevant summaries and enriched with a cluster-similarity block,
then matched against precomputed image features through a learned bilinear
compatibility model. Evaluation covers zero-shot top-1 accuracy and the
area under the generalized seen-unseen curve.
"""

from .corpus import (
    ClassRecord,
    Corpus,
    EmbeddingBank,
    ImageRecord,
    SplitSpec,
    load_corpus,
    make_split,
    read_evec,
    read_fvec,
    save_corpus,
    write_evec,
    write_fvec,
)
from .errors import (
    ConfigurationError,
    CorpusLoadError,
    DimensionMismatchError,
    InfeasibleSplitError,
    StageError,
    UndefinedCosineError,
    ValidationError,
    ZestError,
)
from .eval import EvalReport, per_class_accuracy, suc_curve, top1_accuracy, zsl_report
from .model import (
    AdamState,
    BilinearModel,
    TrainConfig,
    adam_step,
    init_glorot,
    load_model,
    loss_and_grad,
    predict,
    save_model,
    scores,
    train,
)
from .nns import nns_predict
from .pipeline import Pipeline, PipelineConfig, build_config, grid_search, sweep_captions
from .similarity import (
    ClusterAssignment,
    SimilarityConfig,
    augment,
    cluster_bow,
    cluster_purity,
    dbscan,
    hdbscan_lite,
    similarity_gate,
)
from .sparse import SparseVec
from .textproc import Vocabulary, fit_vocabulary, preprocess, tfidf
from .vrs import VrsScorecard, rewrite_document, summarize, vrs_prf, vrs_score

__version__ = "0.1.0"
