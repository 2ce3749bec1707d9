"""Bilingual resource loading and desk-scale word alignment.

Four resource types feed the OOV translators: a bilingual lexicon, a
token-to-token translation table with conditional probabilities and
absolute alignment counts, word-aligned parallel sentences, and running
monolingual text.  Everything here is pre-tokenized (whitespace split) and
NFC-normalized on load; case is preserved.

A small IBM Model 1 EM aligner is included so translation tables can be
derived from unaligned parallel text without external tooling; externally
produced Pharaoh-format alignments are accepted via :func:`load_parallel`.
"""

import logging
import math
import re
import unicodedata
from collections import Counter, defaultdict
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass

from .errors import FormatError, ToolkitError

logger = logging.getLogger(__name__)

_LINK_RE = re.compile(r"(\d+)-(\d+)")


def nfc(s: str) -> str:
    """Canonical-composition normalization used for every token and string
    comparison in this package."""
    return unicodedata.normalize("NFC", s)


@dataclass(frozen=True)
class LexiconEntry:
    """One bilingual dictionary row: source word, POS tag, target translation.

    The target may contain spaces (multiword translation).  A source word
    may have many entries across the lexicon.
    """

    source_word: str
    pos_tag: str
    target_word: str

    def __post_init__(self):
        if not self.source_word or not self.target_word:
            raise ValueError("lexicon entry needs non-empty source and target")


@dataclass(frozen=True)
class TranslationTableEntry:
    """An aligned word pair with p(target|source) and its absolute count."""

    source_word: str
    target_word: str
    prob: float
    count: int

    def __post_init__(self):
        if not (0.0 <= self.prob <= 1.0):
            raise ValueError(f"prob {self.prob!r} outside [0, 1]")
        if self.count < 0:
            raise ValueError(f"count {self.count!r} is negative")


class TranslationTable:
    """Token-to-token aligned pairs, indexed by source word.

    Probabilities are p(target|source).  Tables derived in-repo have counts
    >= 1 and rows that sum to one; externally loaded tables are only
    range-checked.
    """

    def __init__(self, entries: Iterable[TranslationTableEntry] = ()):
        self._entries: list[TranslationTableEntry] = []
        self._by_source: dict[str, dict[str, TranslationTableEntry]] = {}
        for entry in entries:
            row = self._by_source.setdefault(entry.source_word, {})
            if entry.target_word in row:
                raise ValueError(
                    f"duplicate pair ({entry.source_word!r}, {entry.target_word!r})"
                )
            row[entry.target_word] = entry
            self._entries.append(entry)

    def entries(self) -> tuple[TranslationTableEntry, ...]:
        return tuple(self._entries)

    def sources(self) -> set[str]:
        return set(self._by_source)

    def targets_for(self, source_word: str) -> dict[str, TranslationTableEntry]:
        return dict(self._by_source.get(source_word, {}))

    def count(self, source_word: str, target_word: str) -> int:
        entry = self._by_source.get(source_word, {}).get(target_word)
        return entry.count if entry is not None else 0

    def prob(self, source_word: str, target_word: str) -> float:
        entry = self._by_source.get(source_word, {}).get(target_word)
        return entry.prob if entry is not None else 0.0

    def without_sources(self, source_words: Iterable[str]) -> "TranslationTable":
        """Copy of the table with every entry for the given source words removed.

        Remaining rows are untouched, so their probabilities still sum to one.
        """
        removed = set(source_words)
        return TranslationTable(
            e for e in self._entries if e.source_word not in removed
        )

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self):
        return iter(self._entries)

    def __eq__(self, other) -> bool:
        if not isinstance(other, TranslationTable):
            return NotImplemented
        return set(self._entries) == set(other._entries)

    def __repr__(self) -> str:
        return f"TranslationTable({len(self._entries)} entries, {len(self._by_source)} sources)"


@dataclass(frozen=True)
class AlignedSentencePair:
    """A tokenized sentence pair plus a set of (source_index, target_index) links."""

    source_tokens: tuple[str, ...]
    target_tokens: tuple[str, ...]
    links: frozenset[tuple[int, int]]

    def __post_init__(self):
        object.__setattr__(self, "source_tokens", tuple(self.source_tokens))
        object.__setattr__(self, "target_tokens", tuple(self.target_tokens))
        object.__setattr__(self, "links", frozenset(self.links))
        if not self.source_tokens or not self.target_tokens:
            raise ValueError("sentence pair has an empty side")
        for i, j in self.links:
            if not (0 <= i < len(self.source_tokens)):
                raise ValueError(f"link source index {i} out of range")
            if not (0 <= j < len(self.target_tokens)):
                raise ValueError(f"link target index {j} out of range")


class MonolingualCorpus:
    """Running text: an ordered list of token lists plus its token census."""

    def __init__(self, sentences: Iterable[Sequence[str]]):
        self.sentences: tuple[tuple[str, ...], ...] = tuple(
            tuple(s) for s in sentences
        )
        counts = Counter()
        for sentence in self.sentences:
            counts.update(sentence)
        self.token_counts: dict[str, int] = dict(counts)

    def __len__(self) -> int:
        return len(self.sentences)


class TargetFrequencyTable:
    """Target-language token frequencies; absent tokens read as zero."""

    def __init__(self, counts: Mapping[str, int] | None = None):
        self._counts = dict(counts) if counts else {}

    def get(self, token: str) -> int:
        return self._counts.get(token, 0)

    def __len__(self) -> int:
        return len(self._counts)

    @classmethod
    def empty(cls) -> "TargetFrequencyTable":
        return cls()


def _read_lines(path) -> list[str]:
    try:
        with open(path, encoding="utf-8") as handle:
            return [line.rstrip("\n").rstrip("\r") for line in handle]
    except FileNotFoundError:
        raise FormatError("file not found", path=path) from None


def load_lexicon(path) -> list[LexiconEntry]:
    """Read a lexicon TSV (``source<TAB>pos<TAB>target``).

    Duplicate source words are preserved as separate entries, in file order.
    Blank lines are skipped; any other line must have exactly three fields.
    """
    entries = []
    for lineno, line in enumerate(_read_lines(path), 1):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 3:
            raise FormatError(
                f"expected 3 tab-separated fields, got {len(fields)}",
                path=path,
                line=lineno,
            )
        source, pos, target = (nfc(f) for f in fields)
        if not source or not target:
            raise FormatError(
                "empty source or target word", path=path, line=lineno
            )
        entries.append(LexiconEntry(source, pos, target))
    if not entries:
        logger.warning("lexicon %s is empty", path)
    return entries


def load_translation_table(path) -> TranslationTable:
    """Read a translation-table TSV (``source<TAB>target<TAB>prob<TAB>count``)."""
    entries = []
    for lineno, line in enumerate(_read_lines(path), 1):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 4:
            raise FormatError(
                f"expected 4 tab-separated fields, got {len(fields)}",
                path=path,
                line=lineno,
            )
        source, target = nfc(fields[0]), nfc(fields[1])
        if not source or not target:
            raise FormatError("empty source or target word", path=path, line=lineno)
        try:
            prob = float(fields[2])
        except ValueError:
            raise FormatError(
                f"unparsable probability {fields[2]!r}", path=path, line=lineno
            ) from None
        if not (0.0 <= prob <= 1.0):
            raise FormatError(
                f"probability {prob!r} outside [0, 1]", path=path, line=lineno
            )
        try:
            count = int(fields[3])
        except ValueError:
            raise FormatError(
                f"non-integer count {fields[3]!r}", path=path, line=lineno
            ) from None
        if count < 0:
            raise FormatError(f"negative count {count}", path=path, line=lineno)
        entries.append(TranslationTableEntry(source, target, prob, count))
    if not entries:
        logger.warning("translation table %s is empty", path)
    try:
        return TranslationTable(entries)
    except ValueError as exc:
        raise FormatError(str(exc), path=path) from None


def write_translation_table(table: TranslationTable, path) -> None:
    """Write a table in the external TSV format.

    Probabilities are serialized with ``repr`` (shortest exact decimal), so
    reloading reproduces the stored floats bit for bit.
    """
    with open(path, "w", encoding="utf-8") as handle:
        for e in table.entries():
            handle.write(f"{e.source_word}\t{e.target_word}\t{e.prob!r}\t{e.count}\n")


def load_parallel(src_path, tgt_path, align_path) -> list[AlignedSentencePair]:
    """Read the three-file parallel format: source text, target text, and
    Pharaoh ``i-j`` alignments, one sentence per line in each file."""
    src_lines = _read_lines(src_path)
    tgt_lines = _read_lines(tgt_path)
    align_lines = _read_lines(align_path)
    if not (len(src_lines) == len(tgt_lines) == len(align_lines)):
        raise FormatError(
            f"line counts differ: {len(src_lines)} source, "
            f"{len(tgt_lines)} target, {len(align_lines)} alignment",
            path=src_path,
        )
    pairs = []
    for lineno, (src, tgt, align) in enumerate(
        zip(src_lines, tgt_lines, align_lines), 1
    ):
        source_tokens = tuple(nfc(t) for t in src.split())
        target_tokens = tuple(nfc(t) for t in tgt.split())
        if not source_tokens or not target_tokens:
            raise FormatError("empty sentence", path=src_path, line=lineno)
        links = set()
        for item in align.split():
            match = _LINK_RE.fullmatch(item)
            if match is None:
                raise FormatError(
                    f"unparsable link token {item!r}", path=align_path, line=lineno
                )
            i, j = int(match.group(1)), int(match.group(2))
            if i >= len(source_tokens) or j >= len(target_tokens):
                raise FormatError(
                    f"link {i}-{j} out of range for sentence lengths "
                    f"{len(source_tokens)}/{len(target_tokens)}",
                    path=align_path,
                    line=lineno,
                )
            links.add((i, j))
        pairs.append(AlignedSentencePair(source_tokens, target_tokens, frozenset(links)))
    return pairs


def write_parallel(pairs: Sequence[AlignedSentencePair], src_path, tgt_path, align_path) -> None:
    """Inverse of :func:`load_parallel`; links are written in sorted order."""
    with open(src_path, "w", encoding="utf-8") as src, open(
        tgt_path, "w", encoding="utf-8"
    ) as tgt, open(align_path, "w", encoding="utf-8") as align:
        for pair in pairs:
            src.write(" ".join(pair.source_tokens) + "\n")
            tgt.write(" ".join(pair.target_tokens) + "\n")
            align.write(" ".join(f"{i}-{j}" for i, j in sorted(pair.links)) + "\n")


def load_monolingual(path) -> MonolingualCorpus:
    """Read one whitespace-tokenized sentence per line; blank lines skipped."""
    sentences = []
    for line in _read_lines(path):
        tokens = [nfc(t) for t in line.split()]
        if tokens:
            sentences.append(tokens)
    if not sentences:
        logger.warning("monolingual corpus %s is empty", path)
    return MonolingualCorpus(sentences)


def load_target_frequencies(path) -> TargetFrequencyTable:
    """Read a ``token<TAB>count`` frequency list; repeated tokens accumulate."""
    counts: dict[str, int] = {}
    for lineno, line in enumerate(_read_lines(path), 1):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 2:
            raise FormatError(
                f"expected 2 tab-separated fields, got {len(fields)}",
                path=path,
                line=lineno,
            )
        token = nfc(fields[0])
        try:
            count = int(fields[1])
        except ValueError:
            raise FormatError(
                f"non-integer count {fields[1]!r}", path=path, line=lineno
            ) from None
        if count < 0:
            raise FormatError(f"negative count {count}", path=path, line=lineno)
        counts[token] = counts.get(token, 0) + count
    return TargetFrequencyTable(counts)


def derive_translation_table(pairs: Iterable[AlignedSentencePair]) -> TranslationTable:
    """Census the alignment links into a translation table.

    count(s, t) is the number of links joining token s to token t across the
    corpus; prob(t|s) = count(s, t) / sum_t' count(s, t').  Tokens with no
    links produce no entries.
    """
    counts: dict[tuple[str, str], int] = {}
    totals: Counter = Counter()
    for pair in pairs:
        for i, j in sorted(pair.links):
            key = (pair.source_tokens[i], pair.target_tokens[j])
            counts[key] = counts.get(key, 0) + 1
            totals[key[0]] += 1
    entries = [
        TranslationTableEntry(s, t, c / totals[s], c) for (s, t), c in counts.items()
    ]
    return TranslationTable(entries)


def ibm1_em(
    pairs: Sequence[tuple[Sequence[str], Sequence[str]]],
    iterations: int,
) -> tuple[dict[tuple[str, str], float], list[float]]:
    """IBM Model 1 expectation maximization for t(target | source).

    Starts from a uniform table over co-occurring pairs and runs the given
    number of EM iterations.  Returns the final table together with the
    corpus log-likelihood evaluated with the parameters in force during each
    iteration's E-step; EM guarantees this sequence is non-decreasing.

    The log-likelihood of a sentence pair is
    sum_j log( (1/l_s) * sum_i t(t_j | s_i) ) with l_s the source length,
    i.e. the uniform-alignment Model 1 likelihood without the length term.
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    cleaned = []
    for source, target in pairs:
        src = tuple(nfc(t) for t in source)
        tgt = tuple(nfc(t) for t in target)
        if not src or not tgt:
            raise ToolkitError("sentence pair with an empty side")
        cleaned.append((src, tgt))
    if not cleaned:
        raise ToolkitError("empty corpus")

    target_vocab = {t for _, tgt in cleaned for t in tgt}
    uniform = 1.0 / len(target_vocab)
    t_prob: dict[tuple[str, str], float] = {}
    for src, tgt in cleaned:
        for s in src:
            for t in tgt:
                t_prob.setdefault((s, t), uniform)

    log_likelihoods = []
    for _ in range(iterations):
        counts: defaultdict = defaultdict(float)
        totals: defaultdict = defaultdict(float)
        ll = 0.0
        for src, tgt in cleaned:
            for t in tgt:
                denom = 0.0
                for s in src:
                    denom += t_prob[(s, t)]
                ll += math.log(denom) - math.log(len(src))
                for s in src:
                    posterior = t_prob[(s, t)] / denom
                    counts[(s, t)] += posterior
                    totals[s] += posterior
        log_likelihoods.append(ll)
        t_prob = {pair: counts[pair] / totals[pair[0]] for pair in t_prob}
    return t_prob, log_likelihoods


def align_ibm1(
    pairs: Sequence[tuple[Sequence[str], Sequence[str]]],
    iterations: int = 10,
) -> tuple[list[AlignedSentencePair], TranslationTable]:
    """Align a corpus with IBM Model 1 and derive its translation table.

    Each target token is linked to its Viterbi (argmax-probability) source
    token; ties go to the lowest source index.  The table is the link census
    of the resulting alignments (see :func:`derive_translation_table`).
    """
    t_prob, _ = ibm1_em(pairs, iterations)
    aligned = []
    for source, target in pairs:
        src = tuple(nfc(t) for t in source)
        tgt = tuple(nfc(t) for t in target)
        links = set()
        for j, t in enumerate(tgt):
            best_i = 0
            best_p = -1.0
            for i, s in enumerate(src):
                p = t_prob.get((s, t), 0.0)
                if p > best_p:
                    best_p = p
                    best_i = i
            links.add((best_i, j))
        aligned.append(AlignedSentencePair(src, tgt, frozenset(links)))
    return aligned, derive_translation_table(aligned)
