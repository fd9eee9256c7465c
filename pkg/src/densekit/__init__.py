"""densekit: a desk-scale dense retrieval toolkit."""

from .analysis import (StratifiedCells, min_distance_to_bank, stratified_comparison,
                       verbatim_overlap, word_levenshtein)
from .bm25 import InvertedIndex, bm25_score, bm25_topk, build_inverted_index, \
    mine_bm25_negatives
from .data import Passage, Query, TrainPair, passage_input
from .dense_index import EmbeddingIndex, embed_corpus, mine_hard_negatives, search
from .encoder import (AdamState, EncoderConfig, EncoderParams, Gradients, adam_step,
                      backward, encode, forward_loss, init_params, load_checkpoint,
                      save_checkpoint, triangular_lr)
from .errors import DataError, NumericError
from .evaluation import EvalReport, evaluate, mrr_at_k, r_precision, recall_at_k
from .pairstore import PairStore, build_pair_store, downsample
from .pretrain import (Document, GenStats, QARecord, gen_bfs, gen_ict,
                       ingest_dialogue, ingest_qa_pairs)
from .text import TURN_SEP, split_sentences, split_tokens, tokenize
from .trainer import (IterativeResult, ProxyCorpus, TrainConfig, TrainResult,
                      WorkerBatch, build_proxy_corpus, gather_negatives,
                      iterative_train, proxy_validate, train)

__version__ = "0.1.0"
