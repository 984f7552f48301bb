"""Document data model, vocabulary and sliding-window construction.

A window over K consecutive sentences of a document concatenates them
with <S> separators and a trailing <E>, on both source and target side.
The last (current) sentence is the one whose translation is kept at
inference time; every token carries the 0-based index of the sentence it
belongs to, each <S> counting towards the sentence it terminates and
<E> towards the current sentence.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

PAD, UNK, SEP, EOS = "<PAD>", "<UNK>", "<S>", "<E>"
RESERVED = (PAD, UNK, SEP, EOS)
PAD_ID, UNK_ID, SEP_ID, EOS_ID = 0, 1, 2, 3


class CorpusError(ValueError):
    pass


def tokenize(text: str) -> list[str]:
    """Whitespace tokenization; pre-tokenized text passes through unchanged."""
    return text.split()


@dataclass(frozen=True)
class Document:
    """Ordered parallel sentences of one document."""

    doc_id: str
    sentences: tuple[tuple[tuple[str, ...], tuple[str, ...]], ...]

    def __post_init__(self):
        if not self.sentences:
            raise CorpusError(f"document {self.doc_id!r} has no sentences")
        for src, tgt in self.sentences:
            for tok in (*src, *tgt):
                if tok in RESERVED:
                    raise CorpusError(
                        f"document {self.doc_id!r} contains reserved token {tok!r}")

    @staticmethod
    def from_pairs(doc_id: str, pairs: Iterable[tuple[Sequence[str], Sequence[str]]]) -> "Document":
        return Document(doc_id, tuple((tuple(s), tuple(t)) for s, t in pairs))


class Vocab:
    """Token <-> id bijection with reserved ids 0..3 for <PAD>, <UNK>, <S>, <E>."""

    def __init__(self, tokens: Sequence[str]):
        for tok in tokens:
            if tok in RESERVED:
                raise CorpusError(f"reserved token {tok!r} cannot be added to a vocab")
        self._tokens = list(RESERVED) + list(tokens)
        self._index = {tok: i for i, tok in enumerate(self._tokens)}
        if len(self._index) != len(self._tokens):
            raise CorpusError("duplicate tokens in vocab")

    def __len__(self) -> int:
        return len(self._tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._index

    @property
    def tokens(self) -> list[str]:
        return list(self._tokens)

    def id(self, token: str) -> int:
        return self._index.get(token, UNK_ID)

    def token(self, idx: int) -> str:
        return self._tokens[idx]

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self._index.get(tok, UNK_ID) for tok in tokens]

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self._tokens[i] for i in ids]

    @property
    def digest(self) -> str:
        return hashlib.sha256("\n".join(self._tokens).encode("utf-8")).hexdigest()

    @staticmethod
    def from_documents(docs: Iterable[Document]) -> "Vocab":
        counts: dict[str, int] = {}
        for doc in docs:
            for src, tgt in doc.sentences:
                for tok in (*src, *tgt):
                    counts[tok] = counts.get(tok, 0) + 1
        ordered = sorted(counts, key=lambda t: (-counts[t], t))
        return Vocab(ordered)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self._tokens[len(RESERVED):], fh, ensure_ascii=False)

    @staticmethod
    def load(path) -> "Vocab":
        with open(path, encoding="utf-8") as fh:
            return Vocab(json.load(fh))


@dataclass(frozen=True)
class Window:
    """One sliding-window training/inference unit.

    ``size`` is the number of sentences actually included (truncated at
    document start). ``current_span`` is the half-open token range of the
    current sentence in ``tgt_ids``, including the trailing <E>.
    """

    doc_id: str
    j: int
    size: int
    src_ids: tuple[int, ...]
    tgt_ids: tuple[int, ...]
    src_seg: tuple[int, ...]
    tgt_seg: tuple[int, ...]
    current_span: tuple[int, int]

    @property
    def current_index(self) -> int:
        return self.size - 1

    def sentence_lengths(self, side: str = "src") -> list[int]:
        """Token count per included sentence, separators and <E> excluded."""
        ids = self.src_ids if side == "src" else self.tgt_ids
        seg = self.src_seg if side == "src" else self.tgt_seg
        counts = [0] * self.size
        for tok, k in zip(ids, seg):
            if tok not in (SEP_ID, EOS_ID):
                counts[k] += 1
        return counts


def _concat_sentences(sentences: Sequence[Sequence[str]], vocab: Vocab) -> tuple[list[int], list[int]]:
    ids: list[int] = []
    seg: list[int] = []
    last = len(sentences) - 1
    for k, sent in enumerate(sentences):
        ids.extend(vocab.encode(sent))
        seg.extend([k] * len(sent))
        if k < last:
            ids.append(SEP_ID)
            seg.append(k)
    ids.append(EOS_ID)
    seg.append(last)
    return ids, seg


def window_from_sentences(src_sentences: Sequence[Sequence[str]],
                          tgt_sentences: Sequence[Sequence[str]],
                          vocab: Vocab, doc_id: str = "", j: int = 0) -> Window:
    """Build a Window from explicit, already-aligned sentence lists."""
    if len(src_sentences) != len(tgt_sentences) or not src_sentences:
        raise CorpusError("source and target sides need the same, nonzero sentence count")
    src_ids, src_seg = _concat_sentences(src_sentences, vocab)
    tgt_ids, tgt_seg = _concat_sentences(tgt_sentences, vocab)
    size = len(src_sentences)
    current_start = next(i for i, k in enumerate(tgt_seg) if k == size - 1)
    return Window(doc_id=doc_id, j=j, size=size,
                  src_ids=tuple(src_ids), tgt_ids=tuple(tgt_ids),
                  src_seg=tuple(src_seg), tgt_seg=tuple(tgt_seg),
                  current_span=(current_start, len(tgt_ids)))


def make_windows(doc: Document, k: int, vocab: Vocab) -> list[Window]:
    """One window per sentence j, holding min(k-1, j) preceding context sentences."""
    if k < 1:
        raise CorpusError(f"window size must be >= 1, got {k}")
    windows = []
    for j in range(len(doc.sentences)):
        first = max(0, j - k + 1)
        chunk = doc.sentences[first:j + 1]
        windows.append(window_from_sentences([s for s, _ in chunk], [t for _, t in chunk],
                                             vocab, doc_id=doc.doc_id, j=j))
    return windows


# ---------------------------------------------------------------------------
# segment-shift values


def compute_shift(strategy: str, corpus: Sequence[Document] | None = None,
                  window: Window | None = None) -> int:
    """Resolve a shift value: "fixed:<n>", "avg-corpus" or "avg-sequence".

    avg-corpus is the rounded mean source-sentence token length over the
    corpus; avg-sequence the rounded mean source-sentence length within the
    given window. Separators and <E> never count.
    """
    if strategy.startswith("fixed:"):
        value = int(strategy.split(":", 1)[1])
        if value < 0:
            raise CorpusError(f"fixed shift must be nonnegative, got {value}")
        return value
    if strategy == "avg-corpus":
        if not corpus:
            raise CorpusError("avg-corpus shift needs a nonempty corpus")
        lengths = [len(src) for doc in corpus for src, _ in doc.sentences]
        return int(round(sum(lengths) / len(lengths)))
    if strategy == "avg-sequence":
        if window is None:
            raise CorpusError("avg-sequence shift needs a window")
        lengths = window.sentence_lengths("src")
        return int(round(sum(lengths) / len(lengths)))
    raise CorpusError(f"unknown shift strategy {strategy!r}")


# ---------------------------------------------------------------------------
# corpus files: "source ||| target" lines, blank line between documents


def write_corpus(path, docs: Iterable[Document]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        first = True
        for doc in docs:
            if not first:
                fh.write("\n")
            first = False
            for src, tgt in doc.sentences:
                fh.write(f"{' '.join(src)} ||| {' '.join(tgt)}\n")


def read_corpus(path) -> list[Document]:
    docs: list[Document] = []
    pairs: list[tuple[list[str], list[str]]] = []

    def flush():
        if pairs:
            docs.append(Document.from_pairs(f"d{len(docs):05d}", pairs))
            pairs.clear()

    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                flush()
                continue
            if " ||| " not in line:
                raise CorpusError(f"{path}:{lineno}: expected 'source ||| target'")
            src, tgt = line.split(" ||| ", 1)
            pairs.append((tokenize(src), tokenize(tgt)))
    flush()
    if not docs:
        raise CorpusError(f"{path}: empty corpus")
    return docs


# ---------------------------------------------------------------------------
# contrastive examples


@dataclass(frozen=True)
class ContrastiveExample:
    """A source window paired with a reference target window and distractors.

    Candidate 0 is the reference; candidates differ from it only within
    the current-sentence span. ``distance`` is the sentence distance from
    the ambiguous item to its antecedent, 0 meaning intra-sentential.
    """

    example_id: str
    doc_id: str
    j: int
    src_sentences: tuple[tuple[str, ...], ...]
    candidates: tuple[tuple[tuple[str, ...], ...], ...]
    phenomenon: str
    distance: int

    def __post_init__(self):
        if len(self.candidates) < 2:
            raise CorpusError(f"example {self.example_id!r} needs >= 2 candidates")
        ref = self.candidates[0]
        for cand in self.candidates[1:]:
            if len(cand) != len(ref) or cand[:-1] != ref[:-1]:
                raise CorpusError(
                    f"example {self.example_id!r}: candidates differ outside the current sentence")

    def source_window(self, vocab: Vocab) -> Window:
        tgt = self.candidates[0]
        return window_from_sentences(self.src_sentences, tgt, vocab,
                                     doc_id=self.doc_id, j=self.j)

    def candidate_windows(self, vocab: Vocab) -> list[Window]:
        return [window_from_sentences(self.src_sentences, cand, vocab,
                                      doc_id=self.doc_id, j=self.j)
                for cand in self.candidates]


def _window_text(sentences: Sequence[Sequence[str]]) -> str:
    return f" {SEP} ".join(" ".join(sent) for sent in sentences)


def _parse_window_text(text: str) -> tuple[tuple[str, ...], ...]:
    sentences: list[tuple[str, ...]] = []
    current: list[str] = []
    for tok in tokenize(text):
        if tok == SEP:
            sentences.append(tuple(current))
            current = []
        else:
            current.append(tok)
    sentences.append(tuple(current))
    return tuple(sentences)


def write_contrastive(path, examples: Iterable[ContrastiveExample]) -> None:
    """One canonical JSON object per line."""
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            rec = {
                "id": ex.example_id,
                "doc": ex.doc_id,
                "j": ex.j,
                "src": _window_text(ex.src_sentences),
                "candidates": [_window_text(c) for c in ex.candidates],
                "phenomenon": ex.phenomenon,
                "distance": ex.distance,
            }
            fh.write(json.dumps(rec, sort_keys=True, separators=(",", ":")) + "\n")


def read_contrastive(path) -> list[ContrastiveExample]:
    examples = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            examples.append(ContrastiveExample(
                example_id=rec["id"], doc_id=rec["doc"], j=rec["j"],
                src_sentences=_parse_window_text(rec["src"]),
                candidates=tuple(_parse_window_text(c) for c in rec["candidates"]),
                phenomenon=rec["phenomenon"], distance=rec["distance"]))
    return examples


def rebuild_examples(examples: Iterable[ContrastiveExample],
                     docs: dict[str, Document], k: int) -> list[ContrastiveExample]:
    """Re-window contrastive examples at a different window size.

    The substitution that turns the reference current sentence into each
    distractor is re-applied to the document's own sentence j, so candidate
    minimal pairs survive the re-windowing.
    """
    rebuilt = []
    for ex in examples:
        doc = docs[ex.doc_id]
        first = max(0, ex.j - k + 1)
        chunk = doc.sentences[first:ex.j + 1]
        src_sents = tuple(s for s, _ in chunk)
        ref_tgt = tuple(t for _, t in chunk)
        old_ref_cur = ex.candidates[0][-1]
        candidates = [ref_tgt]
        for cand in ex.candidates[1:]:
            cur = list(ref_tgt[-1])
            for i, (a, b) in enumerate(zip(old_ref_cur, cand[-1])):
                if a != b:
                    cur[i] = b
            candidates.append(ref_tgt[:-1] + (tuple(cur),))
        rebuilt.append(ContrastiveExample(
            example_id=ex.example_id, doc_id=ex.doc_id, j=ex.j,
            src_sentences=src_sents, candidates=tuple(candidates),
            phenomenon=ex.phenomenon, distance=ex.distance))
    return rebuilt


def split_documents(docs: Sequence[Document], ratios: tuple[int, int, int]) -> tuple[list[Document], list[Document], list[Document]]:
    """Deterministic train/dev/test split by document position."""
    if min(ratios) < 0 or sum(ratios) <= 0:
        raise CorpusError(f"bad split ratios {ratios}")
    n = len(docs)
    n_train = n * ratios[0] // sum(ratios)
    n_dev = n * ratios[1] // sum(ratios)
    train = list(docs[:n_train])
    dev = list(docs[n_train:n_train + n_dev])
    test = list(docs[n_train + n_dev:])
    return train, dev, test
