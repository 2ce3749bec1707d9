"""Subword-vector OOV translation.

Trains skip-gram-with-negative-sampling embeddings on source-language
monolingual text, where each word's input vector is the mean of its own
word vector and hashed character n-gram bucket vectors.  Because any string
decomposes into n-grams, arbitrary OOV tokens can be embedded; translation
picks the cosine-nearest in-vocabulary word(s) and reuses the pooled-count
target selection of the edit-distance method.

No bilingual vector mapping is learned; the nearest-neighbor search stays
entirely on the source side.
"""

import json
import logging
import math
from collections.abc import Collection, Sequence
from dataclasses import dataclass

import numpy as np

from .corpus import (
    LexiconEntry,
    MonolingualCorpus,
    TargetFrequencyTable,
    TranslationTable,
    nfc,
)
from .edit_translator import NoTranslationError, pick_translation
from .errors import FormatError, ToolkitError
from .evaluation import Prediction

logger = logging.getLogger(__name__)

HASH_SPEC = "fnv1a-64/utf-8"

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


def fnv1a_64(data: bytes) -> int:
    """64-bit FNV-1a hash; the fixed, portable n-gram -> bucket function."""
    h = _FNV_OFFSET
    for byte in data:
        h = ((h ^ byte) * _FNV_PRIME) & _MASK64
    return h


def bucket_index(ngram: str, bucket_count: int) -> int:
    return fnv1a_64(ngram.encode("utf-8")) % bucket_count


def extract_ngrams(word: str, n_min: int = 3, n_max: int = 6) -> list[str]:
    """Character n-grams of the boundary-wrapped word, plus the whole word.

    The word is wrapped in '<' and '>'.  All contiguous substrings with
    length in [n_min, n_max] are listed length-major, then the entire
    wrapped form is appended as a distinguished final element (it may then
    appear twice when the wrapped length is within the n-gram range).
    """
    if not word:
        raise ValueError("cannot extract n-grams of an empty word")
    wrapped = "<" + word + ">"
    length = len(wrapped)
    grams = [
        wrapped[i : i + n]
        for n in range(n_min, min(n_max, length) + 1)
        for i in range(length - n + 1)
    ]
    grams.append(wrapped)
    return grams


@dataclass
class EmbeddingTrainConfig:
    """Skip-gram hyperparameters, defaulted to desk scale."""

    dim: int = 100
    window: int = 5
    negatives: int = 5
    epochs: int = 5
    initial_lr: float = 0.05
    min_word_count: int = 1
    n_min: int = 3
    n_max: int = 6
    bucket_count: int = 2**16
    seed: int = 0

    def __post_init__(self):
        for name in ("dim", "window", "epochs", "min_word_count", "bucket_count"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.negatives < 0:
            raise ValueError("negatives must be >= 0")
        if self.initial_lr <= 0:
            raise ValueError("initial_lr must be positive")
        if self.n_min > self.n_max or self.n_min < 1:
            raise ValueError("need 1 <= n_min <= n_max")


class SubwordEmbeddingModel:
    """Vocabulary vectors plus hashed n-gram bucket vectors.

    ``embed`` is total over non-empty strings: vocabulary words mix their
    word vector with their n-gram buckets, unseen strings use buckets alone.
    """

    def __init__(
        self,
        dim: int,
        n_min: int,
        n_max: int,
        bucket_count: int,
        words: Sequence[str],
        word_matrix: np.ndarray,
        bucket_matrix: np.ndarray,
        seed: int,
        hash_spec: str = HASH_SPEC,
        epoch_losses: Sequence[float] = (),
    ):
        if word_matrix.shape != (len(words), dim):
            raise ValueError("word matrix shape mismatch")
        if bucket_matrix.shape != (bucket_count, dim):
            raise ValueError("bucket matrix shape mismatch")
        if hash_spec != HASH_SPEC:
            raise ToolkitError(f"unsupported hash_spec {hash_spec!r}")
        self.dim = dim
        self.n_min = n_min
        self.n_max = n_max
        self.bucket_count = bucket_count
        self.words = tuple(words)
        self.word_index = {w: i for i, w in enumerate(self.words)}
        self.word_matrix = word_matrix
        self.bucket_matrix = bucket_matrix
        self.seed = seed
        self.hash_spec = hash_spec
        self.epoch_losses = list(epoch_losses)

    @property
    def word_vectors(self) -> dict[str, np.ndarray]:
        return {w: self.word_matrix[i] for w, i in self.word_index.items()}

    def __contains__(self, word: str) -> bool:
        return word in self.word_index

    def _bucket_indices(self, s: str) -> np.ndarray:
        grams = extract_ngrams(s, self.n_min, self.n_max)
        return np.array([bucket_index(g, self.bucket_count) for g in grams], dtype=np.int64)

    def embed(self, s: str) -> np.ndarray:
        """Mean of the string's constituent vectors; defined for any non-empty string."""
        s = nfc(s)
        if not s:
            raise ValueError("cannot embed an empty string")
        idx = self._bucket_indices(s)
        total = self.bucket_matrix[idx].sum(axis=0)
        parts = len(idx)
        row = self.word_index.get(s)
        if row is not None:
            total = total + self.word_matrix[row]
            parts += 1
        return total / parts


def embed_string(model: SubwordEmbeddingModel, s: str) -> np.ndarray:
    return model.embed(s)


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    """Cosine similarity, clamped to [-1, 1] against rounding."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape or u.ndim != 1:
        raise ValueError(f"dimension mismatch: {u.shape} vs {v.shape}")
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        raise ValueError("cosine undefined for zero-norm input")
    return float(np.clip(float(u @ v) / (nu * nv), -1.0, 1.0))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-np.clip(x, -60.0, 60.0)))


def train_subword_embeddings(
    corpus: MonolingualCorpus, config: EmbeddingTrainConfig
) -> SubwordEmbeddingModel:
    """Train the subword skip-gram model on monolingual text.

    Single-threaded and fully seeded: two runs with the same corpus and
    config produce bit-identical models.  The center word's input vector is
    the mean of its word vector and n-gram bucket vectors; context words
    have their own output vectors.  Every (center, context) pair within the
    window is visited once per epoch, with the learning rate decaying
    linearly over the whole schedule.  Average per-pair loss is recorded per
    epoch on the returned model (``epoch_losses``).
    """
    counts = {
        w: c for w, c in corpus.token_counts.items() if c >= config.min_word_count
    }
    if not counts:
        raise ToolkitError("monolingual corpus empty after min_word_count filtering")
    words = sorted(counts, key=lambda w: (-counts[w], w))
    word_index = {w: i for i, w in enumerate(words)}
    vocab_size = len(words)

    sentences = []
    for sentence in corpus.sentences:
        ids = [word_index[w] for w in sentence if w in word_index]
        if ids:
            sentences.append(np.array(ids, dtype=np.int64))
    if not sentences:
        raise ToolkitError("no usable sentences after filtering")

    rng = np.random.default_rng(config.seed)
    dim = config.dim
    word_matrix = (rng.random((vocab_size, dim)) - 0.5) / dim
    bucket_matrix = (rng.random((config.bucket_count, dim)) - 0.5) / dim
    out_matrix = np.zeros((vocab_size, dim))

    ngram_ids = [
        np.array(
            [bucket_index(g, config.bucket_count) for g in
             extract_ngrams(w, config.n_min, config.n_max)],
            dtype=np.int64,
        )
        for w in words
    ]

    # Unigram^(3/4) negative-sampling distribution.
    freqs = np.array([counts[w] for w in words], dtype=np.float64) ** 0.75
    cdf = np.cumsum(freqs / freqs.sum())
    cdf[-1] = 1.0

    window = config.window
    pairs_per_epoch = 0
    for ids in sentences:
        n = len(ids)
        for pos in range(n):
            pairs_per_epoch += min(pos + window, n - 1) - max(0, pos - window)
    total_pairs = pairs_per_epoch * config.epochs
    if total_pairs == 0:
        raise ToolkitError("corpus has no context pairs (all sentences length 1)")

    def draw_negatives(k: int, exclude: int) -> np.ndarray:
        if vocab_size == 1:
            return np.empty(0, dtype=np.int64)
        negs = np.searchsorted(cdf, rng.random(k), side="right")
        bad = negs == exclude
        while bad.any():
            negs[bad] = np.searchsorted(cdf, rng.random(int(bad.sum())), side="right")
            bad = negs == exclude
        return negs

    epoch_losses = []
    processed = 0
    for _epoch in range(config.epochs):
        loss_sum = 0.0
        for ids in sentences:
            n = len(ids)
            for pos in range(n):
                center = int(ids[pos])
                ctx_ids = np.concatenate(
                    (ids[max(0, pos - window):pos], ids[pos + 1:pos + window + 1])
                )
                if len(ctx_ids) == 0:
                    continue
                grams = ngram_ids[center]
                parts = len(grams) + 1
                for ctx in ctx_ids:
                    lr = config.initial_lr * max(
                        1e-4, 1.0 - processed / total_pairs
                    )
                    hidden = (
                        word_matrix[center] + bucket_matrix[grams].sum(axis=0)
                    ) / parts
                    negs = draw_negatives(config.negatives, int(ctx))
                    targets = np.concatenate(([int(ctx)], negs))
                    labels = np.zeros(len(targets))
                    labels[0] = 1.0
                    out_rows = out_matrix[targets]
                    act = _sigmoid(out_rows @ hidden)
                    safe = np.clip(act, 1e-12, 1.0 - 1e-12)
                    loss_sum += float(
                        -(labels * np.log(safe) + (1 - labels) * np.log(1 - safe)).sum()
                    )
                    g = (labels - act) * lr
                    hidden_grad = g @ out_rows
                    np.add.at(out_matrix, targets, g[:, None] * hidden)
                    share = hidden_grad / parts
                    word_matrix[center] += share
                    np.add.at(bucket_matrix, grams, share)
                    processed += 1
        epoch_losses.append(loss_sum / pairs_per_epoch)
        logger.info(
            "embedding epoch %d/%d: avg pair loss %.6f",
            _epoch + 1, config.epochs, epoch_losses[-1],
        )

    return SubwordEmbeddingModel(
        dim=dim,
        n_min=config.n_min,
        n_max=config.n_max,
        bucket_count=config.bucket_count,
        words=words,
        word_matrix=word_matrix,
        bucket_matrix=bucket_matrix,
        seed=config.seed,
        epoch_losses=epoch_losses,
    )


class VocabularyEmbeddings:
    """Precomputed embeddings for a candidate vocabulary, for nearest-cosine
    queries.  Zero-norm entries (possible only in degenerate models) are
    excluded from consideration."""

    def __init__(self, model: SubwordEmbeddingModel, vocab: Collection[str]):
        if not vocab:
            raise ToolkitError("empty vocabulary")
        self.words = sorted({nfc(w) for w in vocab})
        matrix = np.stack([model.embed(w) for w in self.words])
        norms = np.linalg.norm(matrix, axis=1)
        if (norms == 0).any():
            logger.warning(
                "%d vocabulary words embed to the zero vector", int((norms == 0).sum())
            )
        self._matrix = matrix
        self._norms = norms

    def nearest(self, query: np.ndarray, tie_tolerance: float = 1e-9) -> set[str]:
        """All words whose cosine to the query is within tie_tolerance of the max."""
        qnorm = float(np.linalg.norm(query))
        if qnorm == 0.0:
            raise ValueError("cosine undefined for zero-norm query")
        sims = np.full(len(self.words), -np.inf)
        ok = self._norms > 0
        sims[ok] = (self._matrix[ok] @ query) / (self._norms[ok] * qnorm)
        best = sims.max()
        if not np.isfinite(best):
            raise ToolkitError("all vocabulary embeddings are zero vectors")
        return {w for w, s in zip(self.words, sims) if s >= best - tie_tolerance}


def translate_vector(
    oov: str,
    model: SubwordEmbeddingModel,
    vocab: "Collection[str] | VocabularyEmbeddings",
    table: TranslationTable,
    lexicon: Sequence[LexiconEntry],
    frequencies: TargetFrequencyTable,
) -> Prediction:
    """Translate one OOV by cosine-nearest in-vocabulary word(s).

    ``vocab`` may be a plain word collection or a prebuilt
    :class:`VocabularyEmbeddings` (preferred when translating batches).
    Near-ties within 1e-9 cosine all enter the candidate set before pooled
    target selection; copy-through fallback when no translation exists.
    """
    query_word = nfc(oov)
    index = vocab if isinstance(vocab, VocabularyEmbeddings) else VocabularyEmbeddings(model, vocab)
    query = model.embed(query_word)
    if float(np.linalg.norm(query)) == 0.0:
        logger.warning("OOV %r embeds to the zero vector; copying through", query_word)
        return Prediction(oov=query_word, predicted=query_word, method="vector", fallback_flag=True)
    candidates = index.nearest(query)
    try:
        predicted = pick_translation(candidates, table, lexicon, frequencies)
    except NoTranslationError:
        return Prediction(oov=query_word, predicted=query_word, method="vector", fallback_flag=True)
    return Prediction(oov=query_word, predicted=predicted, method="vector", fallback_flag=False)


_MODEL_FORMAT_VERSION = 1


def save_embedding_model(model: SubwordEmbeddingModel, path) -> None:
    """Persist to a .npz container with a versioned JSON header; exact round trip."""
    meta = {
        "format_version": _MODEL_FORMAT_VERSION,
        "dim": model.dim,
        "n_min": model.n_min,
        "n_max": model.n_max,
        "bucket_count": model.bucket_count,
        "hash_spec": model.hash_spec,
        "seed": model.seed,
        "epoch_losses": model.epoch_losses,
    }
    np.savez_compressed(
        path,
        meta=np.array(json.dumps(meta)),
        words=np.array(model.words, dtype=object),
        word_matrix=model.word_matrix,
        bucket_matrix=model.bucket_matrix,
    )


def load_embedding_model(path) -> SubwordEmbeddingModel:
    with np.load(path, allow_pickle=True) as data:
        meta = json.loads(str(data["meta"]))
        if meta.get("format_version") != _MODEL_FORMAT_VERSION:
            raise FormatError(
                f"unsupported model format version {meta.get('format_version')!r}",
                path=path,
            )
        return SubwordEmbeddingModel(
            dim=meta["dim"],
            n_min=meta["n_min"],
            n_max=meta["n_max"],
            bucket_count=meta["bucket_count"],
            words=[str(w) for w in data["words"]],
            word_matrix=data["word_matrix"],
            bucket_matrix=data["bucket_matrix"],
            seed=meta["seed"],
            hash_spec=meta["hash_spec"],
            epoch_losses=meta["epoch_losses"],
        )
