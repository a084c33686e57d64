"""Evidence-oriented retrieval engine.

Mines subjectivity-hard triplets from a labeled corpus, trains a linear
projection over frozen base embeddings with cosine/euclidean triplet losses,
answers exact top-K similarity queries, re-ranks hits with token-level
attribution rationales, and evaluates retrieval with precision/recall@K and
embedding-separation statistics.
"""

__version__ = "0.1.0"

from .contrastive import (
    MiningConfig,
    TrainConfig,
    Triplet,
    loss_gradient,
    mine_triplets,
    train,
    triplet_loss,
)
from .corpus import Chunk, ChunkConfig, Document, Token, chunk_document, load_corpus, tokenize
from .embed import (
    EmbedderConfig,
    EmbeddingCache,
    TokenEmbeddings,
    distance,
    make_embedder,
    pool_mean,
    project,
    similarity,
)
from .errors import CerError
from .evaluate import (
    EvalReport,
    pairwise_distance_stats,
    pca_project_2d,
    precision_at_k,
    recall_at_k,
    run_eval,
)
from .explain import (
    Attribution,
    Rationale,
    RerankConfig,
    assemble_prompt,
    attribute_decomposition,
    attribute_occlusion,
    rerank,
    select_rationale,
)
from .index import RetrievalHit, VectorIndex, build_index, load_index, save_index, search_topk
from .projection import ProjectionHead, head_fingerprint, init_head, load_head, save_head
from .subjectivity import SubjectivityLexicon, load_lexicon, subjectivity_score

__all__ = [
    "Attribution",
    "CerError",
    "Chunk",
    "ChunkConfig",
    "Document",
    "EmbedderConfig",
    "EmbeddingCache",
    "EvalReport",
    "MiningConfig",
    "ProjectionHead",
    "Rationale",
    "RerankConfig",
    "RetrievalHit",
    "SubjectivityLexicon",
    "Token",
    "TokenEmbeddings",
    "TrainConfig",
    "Triplet",
    "VectorIndex",
    "assemble_prompt",
    "attribute_decomposition",
    "attribute_occlusion",
    "build_index",
    "chunk_document",
    "distance",
    "head_fingerprint",
    "init_head",
    "load_corpus",
    "load_head",
    "load_index",
    "load_lexicon",
    "loss_gradient",
    "make_embedder",
    "mine_triplets",
    "pairwise_distance_stats",
    "pca_project_2d",
    "pool_mean",
    "precision_at_k",
    "project",
    "recall_at_k",
    "rerank",
    "run_eval",
    "save_head",
    "save_index",
    "search_topk",
    "select_rationale",
    "similarity",
    "subjectivity_score",
    "tokenize",
    "train",
    "triplet_loss",
]
