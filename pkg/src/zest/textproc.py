"""Class-document text pipeline: tokenize, drop stopwords, stem, TF-IDF.

Tokens are lowercase ASCII letter runs of length >= 2. The stopword list
(179 entries) ships as a data file; stemming is the in-repo Porter
implementation. TF-IDF uses raw term counts with smoothed idf
ln((1 + N) / (1 + df)) + 1 and L2 normalization, so every output vector
has norm 1 (or 0 for documents with no in-vocabulary tokens).
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from importlib import resources
from math import log

import numpy as np

from .errors import ValidationError
from .porter import stem
from .sparse import SparseVec

_TOKEN_RE = re.compile(r"[a-z]+")


def _load_stopwords() -> frozenset:
    text = resources.files("zest").joinpath("data/stopwords.txt").read_text("utf-8")
    return frozenset(line.strip() for line in text.splitlines() if line.strip())


STOPWORDS = _load_stopwords()


def preprocess(sentence: str) -> list[str]:
    """Lowercase, split on non-letters, drop short tokens and stopwords, stem."""
    tokens = [t for t in _TOKEN_RE.findall(sentence.lower()) if len(t) >= 2]
    return [stem(t) for t in tokens if t not in STOPWORDS]


@dataclass(frozen=True)
class Vocabulary:
    """Term dictionary with document frequencies.

    Indices are contiguous 0..V-1 in lexicographic term order, which makes
    fitting deterministic regardless of document order.
    """

    term_index: dict
    document_frequency: dict
    num_documents: int

    @property
    def size(self) -> int:
        return len(self.term_index)

    def idf(self, term: str) -> float:
        df = self.document_frequency[term]
        return log((1.0 + self.num_documents) / (1.0 + df)) + 1.0


def fit_vocabulary(documents, min_df: int = 1) -> Vocabulary:
    """Build a vocabulary over token lists, keeping terms with df >= min_df.

    The fit is over all class documents jointly (descriptions of unseen
    classes are auxiliary information available at training time).
    """
    documents = list(documents)
    if not documents:
        raise ValidationError("cannot fit a vocabulary on zero documents")
    df: dict = {}
    for tokens in documents:
        for term in set(tokens):
            df[term] = df.get(term, 0) + 1
    kept = sorted(t for t, c in df.items() if c >= min_df)
    if not kept:
        raise ValidationError("vocabulary is empty (no term meets min_df)")
    return Vocabulary(
        term_index={t: i for i, t in enumerate(kept)},
        document_frequency={t: df[t] for t in kept},
        num_documents=len(documents),
    )


def tfidf(document, vocab: Vocabulary) -> SparseVec:
    """TF-IDF vector for one token list; out-of-vocabulary tokens are ignored."""
    counts: dict = {}
    for term in document:
        if term in vocab.term_index:
            counts[term] = counts.get(term, 0) + 1
    if not counts:
        return SparseVec.zeros(vocab.size)
    entries = sorted((vocab.term_index[t], c * vocab.idf(t)) for t, c in counts.items())
    idx = np.array([i for i, _ in entries])
    weights = np.array([w for _, w in entries])
    return SparseVec(vocab.size, idx, weights).normalized()


def doc_tokens(sentences) -> list[str]:
    """Flatten a document (list of sentences) into one token list."""
    tokens: list[str] = []
    for s in sentences:
        tokens.extend(preprocess(s))
    return tokens


def write_vocab_tsv(vocab: Vocabulary, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for term, idx in sorted(vocab.term_index.items(), key=lambda kv: kv[1]):
            fh.write(f"{term}\t{idx}\t{vocab.document_frequency[term]}\n")


def read_vocab_tsv(path, num_documents: int) -> Vocabulary:
    term_index: dict = {}
    df: dict = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            term, idx, count = line.rstrip("\n").split("\t")
            term_index[term] = int(idx)
            df[term] = int(count)
    return Vocabulary(term_index=term_index, document_frequency=df, num_documents=num_documents)


def dump_sparse(vec: SparseVec) -> str:
    """Debug dump: space-separated index:weight pairs."""
    return " ".join(f"{i}:{w:.17g}" for i, w in zip(vec.indices, vec.values))


def parse_sparse(text: str, dim: int) -> SparseVec:
    if not text.strip():
        return SparseVec.zeros(dim)
    pairs = [p.split(":") for p in text.split()]
    idx = np.array([int(i) for i, _ in pairs])
    val = np.array([float(w) for _, w in pairs])
    return SparseVec(dim, idx, val)
