"""Construction of held-out OOV evaluation sets from aligned parallel data.

The recipe: find source tokens with exactly one linked occurrence in the
whole corpus that also have no lexicon entry, take the linked target
token(s) of that occurrence as the gold translation, sample a fixed number
of such pairs, split them into validation and test, and censor every
training resource so the held-out words are genuinely out-of-vocabulary.
"""

import logging
from collections.abc import Iterable, Sequence
from dataclasses import dataclass

import numpy as np

from .corpus import AlignedSentencePair, LexiconEntry, TranslationTable, nfc
from .errors import FormatError, ToolkitError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class OOVPair:
    """A held-out <source OOV, gold target> pair.

    ``provenance`` is the index of the originating sentence in the parallel
    corpus, kept so a human post-edit layer could be added later.
    """

    source_word: str
    gold_target: str
    provenance: int = -1


@dataclass(frozen=True)
class DatasetSplit:
    validation: tuple[OOVPair, ...]
    test: tuple[OOVPair, ...]
    seed: int

    def source_words(self) -> frozenset[str]:
        return frozenset(p.source_word for p in self.validation + self.test)

    @property
    def removed(self) -> tuple[OOVPair, ...]:
        """Every sampled pair, i.e. the removal list used for censoring."""
        return self.validation + self.test


def extract_oov_candidates(
    pairs: Sequence[AlignedSentencePair], lexicon: Iterable[LexiconEntry]
) -> list[OOVPair]:
    """List every candidate held-out pair in the corpus.

    A source token qualifies when (a) it has exactly one linked occurrence
    across the whole corpus and (b) it has no lexicon entry.  The gold target
    joins the linked target tokens of that unique occurrence in target order
    (discontiguous multiword golds are space-joined).
    """
    lexicon_sources = {e.source_word for e in lexicon}
    occurrences: dict[str, list[tuple[int, int]]] = {}
    for idx, pair in enumerate(pairs):
        linked_positions = sorted({i for i, _ in pair.links})
        for i in linked_positions:
            occurrences.setdefault(pair.source_tokens[i], []).append((idx, i))

    candidates = []
    for token, occs in occurrences.items():
        if len(occs) != 1 or token in lexicon_sources:
            continue
        idx, i = occs[0]
        pair = pairs[idx]
        targets = [
            pair.target_tokens[j] for ii, j in sorted(pair.links, key=lambda l: l[1])
            if ii == i
        ]
        candidates.append(OOVPair(token, " ".join(targets), idx))
    if not candidates:
        logger.warning("no OOV candidates found in %d sentence pairs", len(pairs))
    return candidates


def sample_and_split(
    candidates: Sequence[OOVPair],
    n_total: int,
    n_validation: int,
    seed: int,
) -> DatasetSplit:
    """Sample candidates without replacement and split them.

    The pool is sorted by source word before seeded sampling, so the result
    depends only on the pool's contents and the seed, not its iteration
    order.  When the pool is smaller than ``n_total`` the validation share is
    scaled proportionally.
    """
    if n_validation > n_total:
        raise ValueError("n_validation exceeds n_total")
    if not candidates:
        raise ToolkitError("empty candidate pool")
    pool = sorted(candidates, key=lambda c: c.source_word)
    for a, b in zip(pool, pool[1:]):
        if a.source_word == b.source_word:
            raise ValueError(f"duplicate candidate source word {a.source_word!r}")

    rng = np.random.default_rng(seed)
    k = min(n_total, len(pool))
    order = rng.permutation(len(pool))[:k]
    sampled = [pool[i] for i in order]
    if k < n_total:
        n_val = round(n_validation * k / n_total)
        logger.warning(
            "candidate pool (%d) smaller than requested %d; scaling split to %d/%d",
            len(pool), n_total, n_val, k - n_val,
        )
    else:
        n_val = n_validation
    return DatasetSplit(
        validation=tuple(sampled[:n_val]), test=tuple(sampled[n_val:]), seed=seed
    )


def censor_resources(
    split: DatasetSplit,
    table: TranslationTable,
    pairs: Sequence[AlignedSentencePair],
) -> tuple[TranslationTable, list[AlignedSentencePair]]:
    """Remove every trace of the held-out source words from training resources.

    Table rows for split words are dropped; alignment links whose source
    token is a split word are removed (sentences are retained).  Remaining
    table rows keep their probabilities, which still sum to one per source.
    """
    words = split.source_words()
    censored_table = table.without_sources(words)
    censored_pairs = []
    for pair in pairs:
        links = frozenset(
            (i, j) for i, j in pair.links if pair.source_tokens[i] not in words
        )
        censored_pairs.append(
            AlignedSentencePair(pair.source_tokens, pair.target_tokens, links)
        )
    return censored_table, censored_pairs


def write_oov_pairs(pairs: Iterable[OOVPair], path) -> None:
    """Write a split file: ``source<TAB>gold_target<TAB>provenance_line``."""
    with open(path, "w", encoding="utf-8") as handle:
        for p in pairs:
            handle.write(f"{p.source_word}\t{p.gold_target}\t{p.provenance}\n")


def load_oov_pairs(path) -> list[OOVPair]:
    pairs = []
    with open(path, encoding="utf-8") as handle:
        for lineno, raw in enumerate(handle, 1):
            line = raw.rstrip("\n")
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise FormatError(
                    f"expected 3 tab-separated fields, got {len(fields)}",
                    path=path,
                    line=lineno,
                )
            try:
                provenance = int(fields[2])
            except ValueError:
                raise FormatError(
                    f"non-integer provenance {fields[2]!r}", path=path, line=lineno
                ) from None
            pairs.append(OOVPair(nfc(fields[0]), nfc(fields[1]), provenance))
    return pairs
