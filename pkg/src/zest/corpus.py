"""Experiment inputs: class documents, image features, splits, embeddings.

On-disk layout under a corpus root (all text UTF-8, line-oriented):

    classes.tsv            class_id \\t name \\t category_id (may be empty)
    docs/<class_id>.txt    one sentence per line
    images.fvec            binary, magic ZFV1 (see below)
    embeddings.evec        binary, magic ZEV1 (optional)
    captions.txt           caption_id \\t text (optional)
    vrl_gold.tsv           class_id \\t sentence_index \\t {0,1} (optional)
    split.tsv              class_id \\t {seen,unseen} (optional, explicit mode)

Binary formats are little-endian. `images.fvec`: header {magic "ZFV1",
u32 count, u32 dim}, then per record {u32 image_id, u32 class_id,
dim x f32}. `embeddings.evec`: header {magic "ZEV1", u32 count, u32 dim},
then per record {u32 doc_or_caption_id, u32 sentence_index, dim x f32};
sentence_index 0xFFFFFFFF marks a caption record.

A loaded Corpus is immutable and safe to share across threads.
"""

from __future__ import annotations

import random
import struct
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import (
    CorpusLoadError,
    DimensionMismatchError,
    InfeasibleSplitError,
    ValidationError,
)

FVEC_MAGIC = b"ZFV1"
EVEC_MAGIC = b"ZEV1"
CAPTION_SENTINEL = 0xFFFFFFFF


@dataclass(frozen=True)
class ClassRecord:
    class_id: int
    name: str
    document: tuple
    category_id: int | None = None

    def __post_init__(self):
        if self.class_id < 0:
            raise ValidationError(f"class_id must be >= 0, got {self.class_id}")
        if not self.document:
            raise ValidationError(f"class {self.class_id} has an empty document")
        for i, sent in enumerate(self.document):
            if not sent.strip():
                raise ValidationError(f"class {self.class_id} sentence {i} is blank")


@dataclass(frozen=True)
class ImageRecord:
    image_id: int
    class_id: int
    features: np.ndarray

    def __post_init__(self):
        if self.image_id < 0:
            raise ValidationError(f"image_id must be >= 0, got {self.image_id}")
        object.__setattr__(self, "features", np.asarray(self.features, dtype=np.float64))


@dataclass(frozen=True)
class EmbeddingBank:
    """Dense sentence/caption embeddings keyed by (doc_id, sentence_index) or caption_id."""

    dim: int
    sentences: dict
    captions: dict

    def __post_init__(self):
        if self.dim <= 0:
            raise ValidationError(f"embedding dim must be > 0, got {self.dim}")
        for key, vec in list(self.sentences.items()) + list(self.captions.items()):
            if vec.shape != (self.dim,):
                raise DimensionMismatchError(
                    f"embedding {key} has length {vec.shape[0]}, expected {self.dim}"
                )
            if not np.all(np.isfinite(vec)):
                raise ValidationError(f"embedding {key} contains NaN/Inf")

    def sentence(self, doc_id: int, sentence_index: int) -> np.ndarray:
        key = (doc_id, sentence_index)
        if key not in self.sentences:
            raise KeyError(f"no embedding for document {doc_id}, sentence {sentence_index}")
        return self.sentences[key]

    def caption(self, caption_id: int) -> np.ndarray:
        if caption_id not in self.captions:
            raise KeyError(f"no embedding for caption {caption_id}")
        return self.captions[caption_id]


@dataclass(frozen=True)
class SplitSpec:
    seen_class_ids: frozenset
    unseen_class_ids: frozenset
    mode: str = "explicit"
    validation_fraction: float = 0.10

    def __post_init__(self):
        if self.mode not in ("SCS", "SCE", "explicit"):
            raise ValidationError(f"unknown split mode {self.mode!r}")
        if not 0.0 <= self.validation_fraction <= 1.0:
            raise ValidationError("validation_fraction must be in [0, 1]")
        if self.seen_class_ids & self.unseen_class_ids:
            raise ValidationError("seen and unseen class sets overlap")


@dataclass(frozen=True)
class Corpus:
    classes: tuple
    images: tuple
    feature_dim: int
    embeddings: EmbeddingBank | None = None
    captions: dict = field(default_factory=dict)
    vrl_gold: dict = field(default_factory=dict)
    explicit_split: dict | None = None

    def class_by_id(self, class_id: int) -> ClassRecord:
        return self._class_index[class_id]

    @property
    def class_ids(self) -> list:
        return [c.class_id for c in self.classes]

    @cached_property
    def _class_index(self) -> dict:
        return {c.class_id: c for c in self.classes}

    def images_of(self, class_ids) -> list:
        wanted = set(class_ids)
        return [im for im in self.images if im.class_id in wanted]

    def __eq__(self, other):
        if not isinstance(other, Corpus):
            return NotImplemented
        if self._class_index.keys() != other._class_index.keys():
            return False
        for cid, rec in self._class_index.items():
            if rec != other._class_index[cid]:
                return False
        mine = {im.image_id: im for im in self.images}
        theirs = {im.image_id: im for im in other.images}
        if mine.keys() != theirs.keys():
            return False
        for iid, im in mine.items():
            o = theirs[iid]
            if im.class_id != o.class_id or not np.array_equal(im.features, o.features):
                return False
        return (
            self.feature_dim == other.feature_dim
            and self.captions == other.captions
            and self.vrl_gold == other.vrl_gold
            and self.explicit_split == other.explicit_split
            and _banks_equal(self.embeddings, other.embeddings)
        )


def _banks_equal(a, b):
    if (a is None) != (b is None):
        return False
    if a is None:
        return True
    if a.dim != b.dim or a.sentences.keys() != b.sentences.keys() or a.captions.keys() != b.captions.keys():
        return False
    return all(np.array_equal(v, b.sentences[k]) for k, v in a.sentences.items()) and all(
        np.array_equal(v, b.captions[k]) for k, v in a.captions.items()
    )


# ---------------------------------------------------------------------------
# binary readers / writers


def read_fvec(path) -> tuple[list, int]:
    """Read an images.fvec file, returning (records, dim)."""
    path = Path(path)
    data = path.read_bytes()
    if len(data) < 12 or data[:4] != FVEC_MAGIC:
        raise CorpusLoadError(f"{path}: bad or missing ZFV1 header")
    count, dim = struct.unpack_from("<II", data, 4)
    record_size = 8 + 4 * dim
    expected = 12 + count * record_size
    if len(data) != expected:
        raise DimensionMismatchError(
            f"{path}: file holds {len(data) - 12} record bytes, "
            f"expected {count * record_size} for {count} records of dim {dim}"
        )
    records = []
    off = 12
    for _ in range(count):
        image_id, class_id = struct.unpack_from("<II", data, off)
        feats = np.frombuffer(data, dtype="<f4", count=dim, offset=off + 8).astype(np.float64)
        if not np.all(np.isfinite(feats)):
            raise ValidationError(f"{path}: image {image_id} has non-finite features")
        records.append(ImageRecord(image_id=image_id, class_id=class_id, features=feats))
        off += record_size
    return records, dim


def write_fvec(path, records, dim: int) -> None:
    with open(path, "wb") as fh:
        fh.write(FVEC_MAGIC)
        fh.write(struct.pack("<II", len(records), dim))
        for rec in records:
            feats = np.asarray(rec.features, dtype="<f4")
            if feats.shape != (dim,):
                raise DimensionMismatchError(
                    f"image {rec.image_id} has dim {feats.shape[0]}, expected {dim}"
                )
            fh.write(struct.pack("<II", rec.image_id, rec.class_id))
            fh.write(feats.tobytes())


def read_evec(path) -> EmbeddingBank:
    """Read an embeddings.evec file into an EmbeddingBank."""
    path = Path(path)
    data = path.read_bytes()
    if len(data) < 12 or data[:4] != EVEC_MAGIC:
        raise CorpusLoadError(f"{path}: bad or missing ZEV1 header")
    count, dim = struct.unpack_from("<II", data, 4)
    record_size = 8 + 4 * dim
    if len(data) != 12 + count * record_size:
        raise DimensionMismatchError(
            f"{path}: truncated or oversized payload for {count} records of dim {dim}"
        )
    sentences: dict = {}
    captions: dict = {}
    off = 12
    for _ in range(count):
        owner, sent_idx = struct.unpack_from("<II", data, off)
        vec = np.frombuffer(data, dtype="<f4", count=dim, offset=off + 8).astype(np.float64)
        if sent_idx == CAPTION_SENTINEL:
            captions[owner] = vec
        else:
            sentences[(owner, sent_idx)] = vec
        off += record_size
    return EmbeddingBank(dim=dim, sentences=sentences, captions=captions)


def write_evec(path, bank: EmbeddingBank) -> None:
    with open(path, "wb") as fh:
        fh.write(EVEC_MAGIC)
        fh.write(struct.pack("<II", len(bank.sentences) + len(bank.captions), bank.dim))
        for (doc_id, sent_idx), vec in sorted(bank.sentences.items()):
            fh.write(struct.pack("<II", doc_id, sent_idx))
            fh.write(np.asarray(vec, dtype="<f4").tobytes())
        for caption_id, vec in sorted(bank.captions.items()):
            fh.write(struct.pack("<II", caption_id, CAPTION_SENTINEL))
            fh.write(np.asarray(vec, dtype="<f4").tobytes())


# ---------------------------------------------------------------------------
# corpus load / save


def _read_classes_tsv(path) -> list[tuple]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise CorpusLoadError(f"{path}:{lineno}: expected 3 tab-separated fields")
            class_id = int(parts[0])
            category = int(parts[2]) if parts[2] != "" else None
            rows.append((class_id, parts[1], category))
    return rows


def load_corpus(root) -> Corpus:
    """Load and validate a corpus from its on-disk layout."""
    root = Path(root)
    classes_path = root / "classes.tsv"
    if not classes_path.exists():
        raise CorpusLoadError(f"missing file: {classes_path}")
    rows = _read_classes_tsv(classes_path)

    seen_ids = set()
    classes = []
    for class_id, name, category in rows:
        if class_id in seen_ids:
            raise ValidationError(f"duplicate class_id {class_id} in classes.tsv")
        seen_ids.add(class_id)
        doc_path = root / "docs" / f"{class_id}.txt"
        if not doc_path.exists():
            raise CorpusLoadError(f"missing file: {doc_path}")
        sentences = tuple(
            line.strip()
            for line in doc_path.read_text("utf-8").splitlines()
            if line.strip()
        )
        classes.append(
            ClassRecord(class_id=class_id, name=name, document=sentences, category_id=category)
        )

    fvec_path = root / "images.fvec"
    if not fvec_path.exists():
        raise CorpusLoadError(f"missing file: {fvec_path}")
    images, dim = read_fvec(fvec_path)
    image_ids = set()
    for im in images:
        if im.image_id in image_ids:
            raise ValidationError(f"duplicate image_id {im.image_id} in images.fvec")
        image_ids.add(im.image_id)
        if im.class_id not in seen_ids:
            raise ValidationError(
                f"image {im.image_id} references unknown class_id {im.class_id}"
            )

    embeddings = None
    evec_path = root / "embeddings.evec"
    if evec_path.exists():
        embeddings = read_evec(evec_path)
        for (doc_id, sent_idx) in embeddings.sentences:
            if doc_id not in seen_ids:
                raise ValidationError(
                    f"embedding references unknown class_id {doc_id} (sentence {sent_idx})"
                )

    captions: dict = {}
    cap_path = root / "captions.txt"
    if cap_path.exists():
        with open(cap_path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.rstrip("\n")
                if not line:
                    continue
                cid, _, text = line.partition("\t")
                captions[int(cid)] = text

    vrl_gold: dict = {}
    gold_path = root / "vrl_gold.tsv"
    if gold_path.exists():
        with open(gold_path, encoding="utf-8") as fh:
            for line in fh:
                line = line.rstrip("\n")
                if not line:
                    continue
                cid, idx, label = line.split("\t")
                cid = int(cid)
                if cid not in seen_ids:
                    raise ValidationError(f"vrl_gold.tsv references unknown class_id {cid}")
                vrl_gold[(cid, int(idx))] = int(label)

    explicit_split = None
    split_path = root / "split.tsv"
    if split_path.exists():
        explicit_split = {}
        with open(split_path, encoding="utf-8") as fh:
            for line in fh:
                line = line.rstrip("\n")
                if not line:
                    continue
                cid, side = line.split("\t")
                if side not in ("seen", "unseen"):
                    raise ValidationError(f"split.tsv: bad side {side!r}")
                explicit_split[int(cid)] = side

    return Corpus(
        classes=tuple(classes),
        images=tuple(images),
        feature_dim=dim,
        embeddings=embeddings,
        captions=captions,
        vrl_gold=vrl_gold,
        explicit_split=explicit_split,
    )


def save_corpus(corpus: Corpus, root) -> None:
    """Write a corpus back to disk in the canonical layout."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    (root / "docs").mkdir(exist_ok=True)
    with open(root / "classes.tsv", "w", encoding="utf-8") as fh:
        for c in sorted(corpus.classes, key=lambda c: c.class_id):
            cat = "" if c.category_id is None else str(c.category_id)
            fh.write(f"{c.class_id}\t{c.name}\t{cat}\n")
    for c in corpus.classes:
        (root / "docs" / f"{c.class_id}.txt").write_text(
            "".join(s + "\n" for s in c.document), "utf-8"
        )
    write_fvec(root / "images.fvec", sorted(corpus.images, key=lambda im: im.image_id), corpus.feature_dim)
    if corpus.embeddings is not None:
        write_evec(root / "embeddings.evec", corpus.embeddings)
    if corpus.captions:
        with open(root / "captions.txt", "w", encoding="utf-8") as fh:
            for cid in sorted(corpus.captions):
                fh.write(f"{cid}\t{corpus.captions[cid]}\n")
    if corpus.vrl_gold:
        with open(root / "vrl_gold.tsv", "w", encoding="utf-8") as fh:
            for (cid, idx) in sorted(corpus.vrl_gold):
                fh.write(f"{cid}\t{idx}\t{corpus.vrl_gold[(cid, idx)]}\n")
    if corpus.explicit_split is not None:
        with open(root / "split.tsv", "w", encoding="utf-8") as fh:
            for cid in sorted(corpus.explicit_split):
                fh.write(f"{cid}\t{corpus.explicit_split[cid]}\n")


# ---------------------------------------------------------------------------
# splits


def validate_split(corpus: Corpus, split: SplitSpec) -> None:
    """Check that a split partitions the corpus and honors its mode."""
    all_ids = set(corpus.class_ids)
    union = split.seen_class_ids | split.unseen_class_ids
    if union != all_ids:
        raise ValidationError("split does not cover the class set exactly")
    by_id = corpus._class_index
    if split.mode == "SCE":
        seen_cats = {by_id[c].category_id for c in split.seen_class_ids}
        unseen_cats = {by_id[c].category_id for c in split.unseen_class_ids}
        if seen_cats & unseen_cats:
            raise ValidationError("SCE split places a category on both sides")
    elif split.mode == "SCS":
        cat_sizes: dict = {}
        for c in corpus.classes:
            cat_sizes[c.category_id] = cat_sizes.get(c.category_id, 0) + 1
        seen_cats = {by_id[c].category_id for c in split.seen_class_ids}
        for cid in split.unseen_class_ids:
            cat = by_id[cid].category_id
            if cat_sizes.get(cat, 0) >= 2 and cat not in seen_cats:
                raise ValidationError(
                    f"SCS split leaves class {cid} without a seen classmate in category {cat}"
                )


def make_split(
    corpus: Corpus,
    mode: str,
    unseen_fraction: float = 0.2,
    seed: int = 0,
    validation_fraction: float = 0.10,
    explicit: dict | None = None,
) -> SplitSpec:
    """Partition classes into seen/unseen sets. Deterministic per seed."""
    ids = sorted(corpus.class_ids)
    if not ids:
        raise ValidationError("corpus has no classes")
    rng = random.Random(seed)

    if mode == "explicit":
        assignment = explicit if explicit is not None else corpus.explicit_split
        if assignment is None:
            raise ValidationError("explicit split requested but no split.tsv or mapping given")
        seen = frozenset(c for c, side in assignment.items() if side == "seen")
        unseen = frozenset(c for c, side in assignment.items() if side == "unseen")
        split = SplitSpec(seen, unseen, "explicit", validation_fraction)
        validate_split(corpus, split)
        return split

    by_id = corpus._class_index
    if any(by_id[c].category_id is None for c in ids):
        raise ValidationError(f"{mode} split requires category_id on every class")
    if not 0.0 < unseen_fraction < 1.0:
        raise InfeasibleSplitError("unseen_fraction must be strictly between 0 and 1")
    target = max(1, round(unseen_fraction * len(ids)))

    categories: dict = {}
    for c in ids:
        categories.setdefault(by_id[c].category_id, []).append(c)

    if mode == "SCE":
        cats = sorted(categories)
        rng.shuffle(cats)
        unseen: set = set()
        for cat in cats:
            if len(unseen) >= target:
                break
            unseen.update(categories[cat])
        seen = set(ids) - unseen
        if not seen or not unseen:
            raise InfeasibleSplitError(
                "SCE split impossible: whole-category assignment empties one side"
            )
        split = SplitSpec(frozenset(seen), frozenset(unseen), "SCE", validation_fraction)
        validate_split(corpus, split)
        return split

    if mode == "SCS":
        if all(len(members) == 1 for members in categories.values()):
            warnings.warn(
                "every category has a single class; SCS degenerates to a random split",
                stacklevel=2,
            )
            shuffled = list(ids)
            rng.shuffle(shuffled)
            unseen = set(shuffled[:target])
            seen = set(ids) - unseen
            if not seen or not unseen:
                raise InfeasibleSplitError("degenerate SCS split empties one side")
            return SplitSpec(frozenset(seen), frozenset(unseen), "explicit", validation_fraction)
        shuffled = list(ids)
        rng.shuffle(shuffled)
        unseen = set()
        remaining = {cat: len(members) for cat, members in categories.items()}
        for cid in shuffled:
            if len(unseen) >= target:
                break
            cat = by_id[cid].category_id
            # multi-class categories must keep at least one seen member
            if len(categories[cat]) >= 2 and remaining[cat] <= 1:
                continue
            unseen.add(cid)
            remaining[cat] -= 1
        seen = set(ids) - unseen
        if not seen or not unseen:
            raise InfeasibleSplitError("SCS split empties one side")
        split = SplitSpec(frozenset(seen), frozenset(unseen), "SCS", validation_fraction)
        validate_split(corpus, split)
        return split

    raise ValidationError(f"unknown split mode {mode!r}")


def write_split_tsv(split: SplitSpec, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for cid in sorted(split.seen_class_ids):
            fh.write(f"{cid}\tseen\n")
        for cid in sorted(split.unseen_class_ids):
            fh.write(f"{cid}\tunseen\n")
