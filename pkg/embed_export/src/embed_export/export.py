"""Embedding export for the corpus layout consumed by the zest pipeline.

Reads class documents (docs/<class_id>.txt, one sentence per line, ids from
classes.tsv) plus captions.txt, embeds every sentence and caption, and
writes a ZEV1 file: header {magic "ZEV1", u32 count, u32 dim, little
endian}, then per record {u32 doc_or_caption_id, u32 sentence_index,
dim x f32} where sentence_index 0xFFFFFFFF marks a caption.

Two encoders: "hash" (deterministic token-set hashing, no downloads) and
"pretrained" (a sentence-transformers model).
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .hashing import hash_embed

EVEC_MAGIC = b"ZEV1"
CAPTION_SENTINEL = 0xFFFFFFFF


class ExportError(Exception):
    pass


def read_corpus_texts(root):
    """Sentences keyed (class_id, sentence_index) and captions keyed by id.

    captions.txt may have two columns (caption_id, text) or three
    (image_id, caption_id, text); the three-column form supports limiting
    captions per image.
    """
    root = Path(root)
    classes_path = root / "classes.tsv"
    if not classes_path.exists():
        raise ExportError(f"missing file: {classes_path}")
    sentences = {}
    for line in classes_path.read_text("utf-8").splitlines():
        if not line:
            continue
        class_id = int(line.split("\t")[0])
        doc_path = root / "docs" / f"{class_id}.txt"
        if not doc_path.exists():
            raise ExportError(f"missing file: {doc_path}")
        idx = 0
        for raw in doc_path.read_text("utf-8").splitlines():
            text = raw.strip()
            if text:
                sentences[(class_id, idx)] = text
                idx += 1
    captions = {}
    caption_images = {}
    cap_path = root / "captions.txt"
    if cap_path.exists():
        for line in cap_path.read_text("utf-8").splitlines():
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) == 2:
                captions[int(parts[0])] = parts[1]
            elif len(parts) == 3:
                image_id, caption_id = int(parts[0]), int(parts[1])
                captions[caption_id] = parts[2]
                caption_images[caption_id] = image_id
            else:
                raise ExportError(f"captions.txt: expected 2 or 3 columns, got {len(parts)}")
    return sentences, captions, caption_images


def limit_captions_per_image(captions, caption_images, per_image):
    """Keep the first N caption ids of each image (id order)."""
    if per_image is None or per_image <= 0 or not caption_images:
        return captions
    kept = {}
    seen_count = {}
    for caption_id in sorted(captions):
        image_id = caption_images.get(caption_id)
        if image_id is None:
            kept[caption_id] = captions[caption_id]
            continue
        if seen_count.get(image_id, 0) < per_image:
            kept[caption_id] = captions[caption_id]
            seen_count[image_id] = seen_count.get(image_id, 0) + 1
    return kept


def _encode_hash(texts, dim, seed):
    return [hash_embed(t, dim, seed) for t in texts]


def _encode_pretrained(texts, model_name, batch_size):
    try:
        from sentence_transformers import SentenceTransformer
    except ImportError as exc:
        raise ExportError(
            "sentence-transformers is not installed; use --mode hash or "
            "install the 'pretrained' extra"
        ) from exc
    try:
        model = SentenceTransformer(model_name)
    except Exception as exc:
        raise ExportError(
            f"could not load encoder {model_name!r} ({exc}); use --mode hash"
        ) from exc
    embeddings = model.encode(list(texts), batch_size=batch_size, convert_to_numpy=True)
    return [np.asarray(v, dtype=np.float64) for v in embeddings]


def write_evec(path, dim, sentence_vecs, caption_vecs):
    """Write records sorted by key so re-exports are byte-identical."""
    with open(path, "wb") as fh:
        fh.write(EVEC_MAGIC)
        fh.write(struct.pack("<II", len(sentence_vecs) + len(caption_vecs), dim))
        for (doc_id, sent_idx) in sorted(sentence_vecs):
            fh.write(struct.pack("<II", doc_id, sent_idx))
            fh.write(np.asarray(sentence_vecs[(doc_id, sent_idx)], dtype="<f4").tobytes())
        for caption_id in sorted(caption_vecs):
            fh.write(struct.pack("<II", caption_id, CAPTION_SENTINEL))
            fh.write(np.asarray(caption_vecs[caption_id], dtype="<f4").tobytes())


def export_embeddings(
    corpus_root,
    mode: str,
    out_path,
    dim: int = 64,
    seed: int = 0,
    captions_per_image: int | None = None,
    model_name: str = "all-MiniLM-L6-v2",
    batch_size: int = 32,
) -> dict:
    """Embed every document sentence and caption; returns a summary dict."""
    if mode not in ("hash", "pretrained"):
        raise ExportError(f"unknown mode {mode!r}")
    sentences, captions, caption_images = read_corpus_texts(corpus_root)
    captions = limit_captions_per_image(captions, caption_images, captions_per_image)

    sentence_keys = sorted(sentences)
    caption_keys = sorted(captions)
    texts = [sentences[k] for k in sentence_keys] + [captions[k] for k in caption_keys]
    if mode == "hash":
        vectors = _encode_hash(texts, dim, seed)
    else:
        vectors = _encode_pretrained(texts, model_name, batch_size)
        dim = vectors[0].shape[0] if vectors else dim

    sentence_vecs = dict(zip(sentence_keys, vectors[: len(sentence_keys)]))
    caption_vecs = dict(zip(caption_keys, vectors[len(sentence_keys):]))
    write_evec(out_path, dim, sentence_vecs, caption_vecs)
    return {
        "mode": mode,
        "dim": dim,
        "sentences": len(sentence_vecs),
        "captions": len(caption_vecs),
        "out": str(out_path),
    }
