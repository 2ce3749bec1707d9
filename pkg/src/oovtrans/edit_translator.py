"""Edit-distance OOV translation.

Retrieve the in-vocabulary source word(s) at minimal Levenshtein distance
from the OOV, then emit the target word that most frequently aligns to any
of them.  Remaining ties break by target-language frequency, then
lexicographically, so the output is a deterministic function of the inputs.
"""

from collections import Counter
from collections.abc import Collection, Sequence
from dataclasses import dataclass, field

from .corpus import (
    LexiconEntry,
    TargetFrequencyTable,
    TranslationTable,
    nfc,
)
from .errors import ToolkitError
from .evaluation import Prediction


class NoTranslationError(ToolkitError):
    """None of the candidate words has any known translation."""


def levenshtein(a: str, b: str) -> int:
    """Unit-cost edit distance over Unicode scalar values, after NFC."""
    a, b = nfc(a), nfc(b)
    if len(a) < len(b):
        a, b = b, a
    if not b:
        return len(a)
    previous = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        current = [i]
        for j, cb in enumerate(b, 1):
            current.append(
                min(
                    previous[j] + 1,          # delete from a
                    current[j - 1] + 1,       # insert into a
                    previous[j - 1] + (ca != cb),
                )
            )
        previous = current
    return previous[-1]


@dataclass(frozen=True)
class CandidateSet:
    """All vocabulary words at the minimal edit distance from a query."""

    distance: int
    words: frozenset[str]

    def __post_init__(self):
        object.__setattr__(self, "words", frozenset(self.words))


def min_distance_candidates(oov: str, vocab: Collection[str]) -> CandidateSet:
    """Scan the vocabulary and keep every word at the minimum distance."""
    if not vocab:
        raise ToolkitError("empty vocabulary")
    query = nfc(oov)
    best = None
    words: set[str] = set()
    for word in vocab:
        # A length gap is a lower bound on the distance.
        if best is not None and abs(len(word) - len(query)) > best:
            continue
        d = levenshtein(query, word)
        if best is None or d < best:
            best = d
            words = {word}
        elif d == best:
            words.add(word)
    return CandidateSet(best, frozenset(words))


@dataclass
class TranslationResources:
    """The shared retrieval resources: table, lexicon, target frequencies.

    The candidate vocabulary is the union of the lexicon and translation
    table source words.
    """

    table: TranslationTable
    lexicon: Sequence[LexiconEntry]
    frequencies: TargetFrequencyTable = field(default_factory=TargetFrequencyTable)
    vocabulary: frozenset[str] = field(init=False)

    def __post_init__(self):
        self.lexicon = tuple(self.lexicon)
        self.vocabulary = frozenset(
            {e.source_word for e in self.lexicon} | self.table.sources()
        )


def pick_translation(
    candidates: "CandidateSet | Collection[str]",
    table: TranslationTable,
    lexicon: Sequence[LexiconEntry],
    frequencies: TargetFrequencyTable,
) -> str:
    """Pooled-count target selection over a candidate word set.

    Each target scores the sum of alignment counts from every candidate,
    plus one pseudo-count per lexicon entry so dictionary-only candidates
    can participate.  Ties break by target frequency, then lexicographic
    order of the target.
    """
    words = candidates.words if isinstance(candidates, CandidateSet) else set(candidates)
    if not words:
        raise ToolkitError("empty candidate set")
    scores: Counter = Counter()
    for word in words:
        for target, entry in table.targets_for(word).items():
            scores[target] += entry.count
    for entry in lexicon:
        if entry.source_word in words:
            scores[entry.target_word] += 1
    if not scores:
        raise NoTranslationError(
            f"no candidate in {sorted(words)!r} has a known translation"
        )
    return min(
        scores.items(),
        key=lambda kv: (-kv[1], -frequencies.get(kv[0]), kv[0]),
    )[0]


def translate_edit(oov: str, resources: TranslationResources) -> Prediction:
    """End-to-end edit-distance translation of one OOV token.

    Falls back to copying the OOV through (flagged) when no candidate has a
    translation, mirroring the do-not-translate option downstream.
    """
    query = nfc(oov)
    candidates = min_distance_candidates(query, resources.vocabulary)
    try:
        predicted = pick_translation(
            candidates, resources.table, resources.lexicon, resources.frequencies
        )
    except NoTranslationError:
        return Prediction(oov=query, predicted=query, method="edit", fallback_flag=True)
    return Prediction(oov=query, predicted=predicted, method="edit", fallback_flag=False)
