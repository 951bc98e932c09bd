from .augment import AugmentedViews, augment_dataset, fuse, mean_pool, pool_views
from .cluster import objective, run, seed_centroids
from .embedstore import index_split, load_matrix, make_split, save_matrix
from .evaluation import hungarian_acc, subset_report
from .models import ClusteringResult, DatasetSplit, EmbeddingMatrix, EvalReport, RetrievalHit
from .reprloss import ProjectionHead, sup_loss, total_loss, train_head, unsup_loss
from .retrieval import CorpusIndex, batch_query, build_index, query_topk
from .synth import generate

__all__ = [
    "AugmentedViews",
    "ClusteringResult",
    "CorpusIndex",
    "DatasetSplit",
    "EmbeddingMatrix",
    "EvalReport",
    "ProjectionHead",
    "RetrievalHit",
    "augment_dataset",
    "batch_query",
    "build_index",
    "fuse",
    "generate",
    "hungarian_acc",
    "index_split",
    "load_matrix",
    "make_split",
    "mean_pool",
    "objective",
    "pool_views",
    "query_topk",
    "run",
    "save_matrix",
    "seed_centroids",
    "subset_report",
    "sup_loss",
    "total_loss",
    "train_head",
    "unsup_loss",
]
