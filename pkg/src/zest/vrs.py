"""Visually relevant summarization.

Every sentence of a class document is scored by its mean cosine similarity
to a bank of caption embeddings; sentences at or above a validated score
threshold form the document's extractive summary (a top-k rule is available
as an alternative). The similarity/clustering path keeps consuming the
original document, so summarization only rewrites what the compatibility
model sees.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import ClassRecord, EmbeddingBank
from .errors import ConfigurationError, UndefinedCosineError, ValidationError


@dataclass(frozen=True)
class VrsScorecard:
    scores: np.ndarray
    selected: np.ndarray
    threshold_used: float
    captions_used: int


def vrs_score(sentence_emb, caption_embs) -> float:
    """Mean cosine similarity between one sentence and every caption."""
    caption_embs = list(caption_embs)
    if not caption_embs:
        raise ConfigurationError("caption bank is empty")
    s = np.asarray(sentence_emb, dtype=np.float64)
    s_norm = np.linalg.norm(s)
    if s_norm == 0.0:
        raise UndefinedCosineError("sentence embedding has zero norm")
    c_mat = np.asarray(caption_embs, dtype=np.float64)
    c_norms = np.linalg.norm(c_mat, axis=1)
    if np.any(c_norms == 0.0):
        raise UndefinedCosineError("caption embedding has zero norm")
    total = float(np.sum((c_mat @ s) / (c_norms * s_norm)))
    return total / len(caption_embs)


def score_document(record: ClassRecord, bank: EmbeddingBank, caption_ids) -> np.ndarray:
    """Score every sentence of a class document against the caption bank."""
    caption_ids = list(caption_ids)
    if not caption_ids:
        raise ConfigurationError("no caption ids supplied for scoring")
    captions = [bank.caption(cid) for cid in caption_ids]
    scores = np.empty(len(record.document))
    for j in range(len(record.document)):
        try:
            emb = bank.sentence(record.class_id, j)
        except KeyError as exc:
            raise KeyError(
                f"missing embedding for class {record.class_id}, sentence {j}"
            ) from exc
        scores[j] = vrs_score(emb, captions)
    return scores


def summarize(
    record: ClassRecord,
    bank: EmbeddingBank,
    caption_ids,
    threshold: float | None = None,
    top_k: int | None = None,
) -> VrsScorecard:
    """Select the visually relevant sentences of one document.

    Score-threshold selection keeps sentences with score >= threshold;
    top-k keeps the k highest scorers. Either way at least one sentence
    (the argmax) survives, and document order is preserved.
    """
    if (threshold is None) == (top_k is None):
        raise ValidationError("exactly one of threshold / top_k must be given")
    scores = score_document(record, bank, caption_ids)
    n = scores.shape[0]
    selected = np.zeros(n, dtype=bool)
    if threshold is not None:
        selected = scores >= threshold
        effective = float(threshold)
    else:
        if top_k < 1:
            raise ValidationError("top_k must be >= 1")
        k = min(top_k, n)
        order = np.lexsort((np.arange(n), -scores))  # ties keep earlier sentences
        selected[order[:k]] = True
        effective = float(scores[order[:k]].min())
    if not selected.any():
        # keep the argmax so downstream TF-IDF never sees an empty document;
        # the effective threshold drops with it
        best = int(np.argmax(scores))
        selected[best] = True
        effective = float(scores[best])
    return VrsScorecard(
        scores=scores,
        selected=selected,
        threshold_used=effective,
        captions_used=len(list(caption_ids)),
    )


def rewrite_document(record: ClassRecord, selected) -> ClassRecord:
    """Replace a class document with its selected-sentence summary."""
    selected = np.asarray(selected, dtype=bool)
    if selected.shape[0] != len(record.document):
        raise ValidationError("selection mask length differs from document length")
    kept = tuple(s for s, keep in zip(record.document, selected) if keep)
    return ClassRecord(
        class_id=record.class_id,
        name=record.name,
        document=kept,
        category_id=record.category_id,
    )


def vrs_prf(selected_by_class: dict, gold: dict) -> tuple[float, float, float]:
    """Precision/recall of selected sentences against gold labels.

    selected_by_class maps class_id -> boolean mask; gold maps
    (class_id, sentence_index) -> {0, 1} and must cover every sentence of
    every evaluated document. Also returns the fraction of sentences the
    summaries removed.
    """
    tp = fp = fn = kept = total = 0
    for class_id, mask in selected_by_class.items():
        mask = np.asarray(mask, dtype=bool)
        for j, sel in enumerate(mask):
            key = (class_id, j)
            if key not in gold:
                raise ValidationError(f"gold labels missing for class {class_id} sentence {j}")
            positive = gold[key] == 1
            total += 1
            if sel:
                kept += 1
                if positive:
                    tp += 1
                else:
                    fp += 1
            elif positive:
                fn += 1
    if total == 0:
        raise ValidationError("no sentences to evaluate")
    precision = tp / kept if kept else 0.0
    recall = tp / (tp + fn) if (tp + fn) else 1.0
    removed_fraction = 1.0 - kept / total
    return precision, recall, removed_fraction


def parts_keyword_selection(record: ClassRecord, keywords) -> np.ndarray:
    """Naive ablation summarizer: keep sentences mentioning a part keyword."""
    keywords = [k.lower() for k in keywords]
    selected = np.array(
        [any(k in sentence.lower() for k in keywords) for sentence in record.document],
        dtype=bool,
    )
    if not selected.any():
        selected[0] = True
    return selected


def write_scores_tsv(path, scorecards: dict) -> None:
    """Dump class_id \\t sentence_index \\t score \\t selected rows."""
    with open(path, "w", encoding="utf-8") as fh:
        for class_id in sorted(scorecards):
            card = scorecards[class_id]
            for j, (score, sel) in enumerate(zip(card.scores, card.selected)):
                fh.write(f"{class_id}\t{j}\t{score:.17g}\t{int(sel)}\n")
