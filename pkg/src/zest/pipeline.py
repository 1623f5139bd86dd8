"""End-to-end experiment pipeline with hash-keyed stage caching.

Stages run in order corpus -> textproc -> [vrs] -> [similarity] -> model ->
eval, gated by the chosen variant (vanilla, vanilla+vrs, similarity,
similarity+vrs, nns). Every stage writes its artifacts under
<out>/stages/<name>-<key>/ where the key hashes the stage inputs, its
parameters, and the keys of its upstream stages; re-runs with unchanged
inputs reuse the artifacts byte-for-byte. A manifest records config hash,
seed, stage versions, and artifact digests so reruns can be verified.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import similarity as sim
from . import vrs as vrsmod
from .corpus import (
    Corpus,
    EmbeddingBank,
    SplitSpec,
    load_corpus,
    make_split,
    read_evec,
    validate_split,
    write_split_tsv,
)
from .errors import ConfigurationError, StageError, ValidationError
from .eval import EvalReport, suc_curve, zsl_report
from .model import TrainConfig, load_model, predict, save_model, scores, train
from .nns import nns_predict
from .textproc import (
    doc_tokens,
    dump_sparse,
    fit_vocabulary,
    parse_sparse,
    read_vocab_tsv,
    tfidf,
    write_vocab_tsv,
)

STAGE_VERSIONS = {
    "prep": 1,
    "textproc": 1,
    "vrs": 1,
    "similarity": 1,
    "model": 1,
    "eval": 1,
    "nns": 1,
}

PART_KEYWORDS = ("head", "back", "belly", "breast", "leg", "wing", "tail")

VARIANTS = ("vanilla", "vanilla+vrs", "similarity", "similarity+vrs", "nns")


@dataclass(frozen=True)
class PipelineConfig:
    corpus: str = ""
    out: str = ""
    variant: str = "vanilla"
    split_mode: str = "explicit"
    unseen_fraction: float = 0.2
    validation_fraction: float = 0.10
    seed: int = 0
    min_df: int = 1
    eps: float = 0.5
    min_cluster: int = 2
    sim_threshold: float = 0.15
    summarizer: str = "vrs"
    vrs_threshold: float | None = None
    vrs_topk: int | None = None
    captions: str = ""
    caption_limit: int = 0
    category_as_cluster: bool = False
    lr: float = 1e-3
    batch_size: int = 64
    epochs: int = 50
    l2_weight: float = 0.0
    gzsl: bool = False
    seen_test_fraction: float = 0.2
    bias_grid_size: int = 201
    nns_centroids: bool = False

    def validate(self):
        if self.variant not in VARIANTS:
            raise ValidationError(f"unknown variant {self.variant!r}")
        if self.summarizer not in ("vrs", "parts"):
            raise ValidationError(f"unknown summarizer {self.summarizer!r}")
        if not self.corpus:
            raise ValidationError("config key 'corpus' is required")

    @property
    def uses_vrs(self) -> bool:
        return self.variant.endswith("+vrs")

    @property
    def uses_similarity(self) -> bool:
        return self.variant.startswith("similarity")


_BOOL_KEYS = {"category_as_cluster", "gzsl", "nns_centroids"}
_OPTIONAL_FLOAT_KEYS = {"vrs_threshold"}
_OPTIONAL_INT_KEYS = {"vrs_topk"}


def _coerce(key: str, raw: str):
    if key in _BOOL_KEYS:
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValidationError(f"config key {key}: expected a boolean, got {raw!r}")
    if key in _OPTIONAL_FLOAT_KEYS:
        return None if raw.strip() in ("", "none") else float(raw)
    if key in _OPTIONAL_INT_KEYS:
        return None if raw.strip() in ("", "none") else int(raw)
    kind = {f.name: f.type for f in fields(PipelineConfig)}[key]
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    return raw


def parse_config_file(path) -> dict:
    """Flat key=value file; blank lines and #-comments ignored."""
    values = {}
    known = {f.name for f in fields(PipelineConfig)}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValidationError(f"{path}:{lineno}: expected key=value")
            key, _, raw = line.partition("=")
            key = key.strip()
            if key not in known:
                raise ValidationError(f"{path}:{lineno}: unknown config key {key!r}")
            values[key] = _coerce(key, raw.strip())
    return values


def build_config(file_values: dict | None = None, overrides: dict | None = None) -> PipelineConfig:
    merged = dict(file_values or {})
    for key, value in (overrides or {}).items():
        if value is not None:
            merged[key] = value
    cfg = PipelineConfig(**merged)
    if not cfg.out:
        cfg = replace(cfg, out=os.environ.get("ZEST_OUT", "zest_out"))
    cfg.validate()
    return cfg


def config_dict(cfg: PipelineConfig) -> dict:
    return {f.name: getattr(cfg, f.name) for f in fields(PipelineConfig)}


def _sha256_json(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()


def _sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _fingerprint_tree(root) -> str:
    root = Path(root)
    h = hashlib.sha256()
    for path in sorted(p for p in root.rglob("*") if p.is_file()):
        h.update(str(path.relative_to(root)).encode())
        h.update(path.read_bytes())
    return h.hexdigest()


def _dump_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n", "utf-8")


class Pipeline:
    """Runs the staged experiment for one config."""

    def __init__(self, config: PipelineConfig, corpus: Corpus | None = None,
                 split_override: dict | None = None):
        config.validate()
        self.config = config
        self.out = Path(config.out)
        self.out.mkdir(parents=True, exist_ok=True)
        (self.out / "stages").mkdir(exist_ok=True)
        self._corpus = corpus
        self._split_override = split_override
        # filesystem locations are excluded so identical experiments hash
        # identically regardless of where they read or write
        hashable = {
            k: repr(v) for k, v in config_dict(config).items() if k not in ("out", "corpus", "captions")
        }
        self.manifest: dict = {
            "config": {k: repr(v) for k, v in config_dict(config).items()},
            "config_hash": _sha256_json(hashable),
            "seed": config.seed,
            "stage_versions": dict(STAGE_VERSIONS),
            "stages": {},
        }

    # -- stage plumbing ----------------------------------------------------

    def _stage_dir(self, name: str, key: str) -> Path:
        return self.out / "stages" / f"{name}-{key[:12]}"

    def _run_stage(self, name: str, key_material: dict, compute, load, force: bool):
        key = _sha256_json({"stage": name, "version": STAGE_VERSIONS[name], **key_material})
        stage_dir = self._stage_dir(name, key)
        marker = stage_dir / "stage_key.json"
        cached = marker.exists() and not force
        try:
            if cached:
                payload = load(stage_dir)
            else:
                stage_dir.mkdir(parents=True, exist_ok=True)
                payload = compute(stage_dir)
                _dump_json(marker, {"stage": name, "key": key})
        except ValidationError:
            raise
        except Exception as exc:  # surface with stage name and provenance
            raise StageError(name, str(exc), provenance=str(stage_dir)) from exc
        artifacts = {
            p.name: _sha256_file(p)
            for p in sorted(stage_dir.rglob("*"))
            if p.is_file() and p.name != "stage_key.json"
        }
        self.manifest["stages"][name] = {"key": key, "cached": cached, "artifacts": artifacts}
        return key, payload

    # -- stages ------------------------------------------------------------

    def _stage_prep(self, force: bool):
        cfg = self.config
        corpus = self._corpus if self._corpus is not None else load_corpus(cfg.corpus)
        fingerprint = (
            _fingerprint_tree(cfg.corpus)
            if self._corpus is None
            else _sha256_json(sorted(corpus.class_ids))
        )
        material = {
            "corpus": fingerprint,
            "split_mode": cfg.split_mode,
            "unseen_fraction": cfg.unseen_fraction,
            "validation_fraction": cfg.validation_fraction,
            "seed": cfg.seed,
            "override": sorted(self._split_override.items()) if self._split_override else None,
        }

        def compute(stage_dir):
            split = make_split(
                corpus,
                cfg.split_mode,
                cfg.unseen_fraction,
                cfg.seed,
                cfg.validation_fraction,
                explicit=self._split_override,
            )
            write_split_tsv(split, stage_dir / "split.tsv")
            _dump_json(
                stage_dir / "split.json",
                {
                    "mode": split.mode,
                    "validation_fraction": split.validation_fraction,
                    "seen": sorted(split.seen_class_ids),
                    "unseen": sorted(split.unseen_class_ids),
                },
            )
            return {"corpus": corpus, "split": split}

        def load(stage_dir):
            data = json.loads((stage_dir / "split.json").read_text())
            split = SplitSpec(
                frozenset(data["seen"]),
                frozenset(data["unseen"]),
                data["mode"],
                data["validation_fraction"],
            )
            validate_split(corpus, split)
            return {"corpus": corpus, "split": split}

        return self._run_stage("prep", material, compute, load, force)

    def _stage_textproc(self, prep_key: str, corpus: Corpus, force: bool):
        cfg = self.config
        material = {"prep": prep_key, "min_df": cfg.min_df}
        ordered = sorted(corpus.classes, key=lambda c: c.class_id)

        def compute(stage_dir):
            tokens = {c.class_id: doc_tokens(c.document) for c in ordered}
            vocab = fit_vocabulary([tokens[c.class_id] for c in ordered], cfg.min_df)
            vecs = {cid: tfidf(tok, vocab) for cid, tok in tokens.items()}
            write_vocab_tsv(vocab, stage_dir / "vocab.tsv")
            with open(stage_dir / "docvecs.txt", "w", encoding="utf-8") as fh:
                fh.write(f"# dim={vocab.size} num_documents={vocab.num_documents}\n")
                for cid in sorted(vecs):
                    fh.write(f"{cid}\t{dump_sparse(vecs[cid])}\n")
            return {"vocab": vocab, "doc_vecs": vecs}

        def load(stage_dir):
            vecs, vocab = _load_docvecs(stage_dir / "docvecs.txt", stage_dir / "vocab.tsv")
            return {"vocab": vocab, "doc_vecs": vecs}

        return self._run_stage("textproc", material, compute, load, force)

    def _caption_bank(self, corpus: Corpus):
        cfg = self.config
        if cfg.captions:
            return read_evec(cfg.captions)
        if corpus.embeddings is None:
            raise ConfigurationError(
                "the VRS stage needs embeddings.evec in the corpus or a --captions file"
            )
        return corpus.embeddings

    def _stage_vrs(self, textproc_key: str, corpus: Corpus, force: bool):
        cfg = self.config
        material = {
            "textproc": textproc_key,
            "summarizer": cfg.summarizer,
            "threshold": cfg.vrs_threshold,
            "topk": cfg.vrs_topk,
            "captions": _sha256_file(cfg.captions) if cfg.captions else "corpus",
            "caption_limit": cfg.caption_limit,
            "min_df": cfg.min_df,
        }
        ordered = sorted(corpus.classes, key=lambda c: c.class_id)

        def compute(stage_dir):
            selections = {}
            scorecards = {}
            if cfg.summarizer == "parts":
                for rec in ordered:
                    selections[rec.class_id] = vrsmod.parts_keyword_selection(rec, PART_KEYWORDS)
            else:
                caption_bank = self._caption_bank(corpus)
                sentence_bank = corpus.embeddings if corpus.embeddings is not None else caption_bank
                bank = _merge_banks(sentence_bank, caption_bank)
                caption_ids = sorted(bank.captions)
                if cfg.caption_limit > 0:
                    caption_ids = caption_ids[: cfg.caption_limit]
                threshold, topk = cfg.vrs_threshold, cfg.vrs_topk
                if threshold is None and topk is None:
                    threshold = 0.0
                for rec in ordered:
                    card = vrsmod.summarize(rec, bank, caption_ids, threshold, topk)
                    selections[rec.class_id] = card.selected
                    scorecards[rec.class_id] = card
                vrsmod.write_scores_tsv(stage_dir / "vrs_scores.tsv", scorecards)
            summary_dir = stage_dir / "summary"
            summary_dir.mkdir(exist_ok=True)
            summaries = {}
            for rec in ordered:
                rewritten = vrsmod.rewrite_document(rec, selections[rec.class_id])
                summaries[rec.class_id] = rewritten
                (summary_dir / f"{rec.class_id}.txt").write_text(
                    "".join(s + "\n" for s in rewritten.document), "utf-8"
                )
            tokens = {cid: doc_tokens(summaries[cid].document) for cid in summaries}
            vocab = fit_vocabulary([tokens[c.class_id] for c in ordered], cfg.min_df)
            vecs = {cid: tfidf(tok, vocab) for cid, tok in tokens.items()}
            write_vocab_tsv(vocab, stage_dir / "summary_vocab.tsv")
            with open(stage_dir / "summary_vecs.txt", "w", encoding="utf-8") as fh:
                fh.write(f"# dim={vocab.size} num_documents={vocab.num_documents}\n")
                for cid in sorted(vecs):
                    fh.write(f"{cid}\t{dump_sparse(vecs[cid])}\n")
            prf = None
            if corpus.vrl_gold:
                try:
                    precision, recall, removed = vrsmod.vrs_prf(selections, corpus.vrl_gold)
                    prf = {"precision": precision, "recall": recall, "removed_fraction": removed}
                except ValidationError:
                    prf = None
            _dump_json(stage_dir / "vrs_meta.json", {"prf": prf})
            return {"summary_vecs": vecs, "vocab": vocab, "prf": prf}

        def load(stage_dir):
            vecs, vocab = _load_docvecs(stage_dir / "summary_vecs.txt", stage_dir / "summary_vocab.tsv")
            meta = json.loads((stage_dir / "vrs_meta.json").read_text())
            return {"summary_vecs": vecs, "vocab": vocab, "prf": meta["prf"]}

        return self._run_stage("vrs", material, compute, load, force)

    def _stage_similarity(self, textproc_key: str, prep_key: str, corpus: Corpus,
                          split: SplitSpec, doc_vecs: dict, force: bool):
        cfg = self.config
        material = {
            "textproc": textproc_key,
            "prep": prep_key,
            "eps": cfg.eps,
            "min_cluster": cfg.min_cluster,
            "sim_threshold": cfg.sim_threshold,
            "category_as_cluster": cfg.category_as_cluster,
        }
        class_ids = sorted(doc_vecs)
        vectors = [doc_vecs[cid] for cid in class_ids]

        def compute(stage_dir):
            if cfg.category_as_cluster:
                cats = sorted({corpus.class_by_id(cid).category_id for cid in class_ids})
                cat_index = {cat: i for i, cat in enumerate(cats)}
                labels = np.array(
                    [cat_index[corpus.class_by_id(cid).category_id] for cid in class_ids]
                )
                assignments = [sim.ClusterAssignment(labels, len(cats), "DBSCAN")]
                sim.write_clusters_tsv(
                    stage_dir / "clusters.tsv", class_ids, assignments[0], assignments[0]
                )
            else:
                db = sim.dbscan(vectors, cfg.eps, cfg.min_cluster)
                hd = sim.hdbscan_lite(vectors, cfg.min_cluster)
                assignments = [db, hd]
                sim.write_clusters_tsv(stage_dir / "clusters.tsv", class_ids, db, hd)
            active = sim.similarity_gate(assignments, split, cfg.sim_threshold, class_ids)
            _dump_json(
                stage_dir / "gate.json",
                {
                    "active": active,
                    "num_clusters": [a.num_clusters for a in assignments],
                    "methods": [a.method for a in assignments],
                },
            )
            return {"assignments": assignments, "active": active, "class_ids": class_ids}

        def load(stage_dir):
            gate = json.loads((stage_dir / "gate.json").read_text())
            rows = [
                line.split("\t")
                for line in (stage_dir / "clusters.tsv").read_text().splitlines()
            ]
            db_labels = np.array([int(r[1]) for r in rows])
            hd_labels = np.array([int(r[2]) for r in rows])
            methods = gate["methods"]
            nums = gate["num_clusters"]
            if len(methods) == 1:
                assignments = [sim.ClusterAssignment(db_labels, nums[0], methods[0])]
            else:
                assignments = [
                    sim.ClusterAssignment(db_labels, nums[0], methods[0]),
                    sim.ClusterAssignment(hd_labels, nums[1], methods[1]),
                ]
            return {"assignments": assignments, "active": gate["active"], "class_ids": class_ids}

        return self._run_stage("similarity", material, compute, load, force)

    def _final_doc_vecs(self, corpus, split, model_vecs, similarity_payload):
        """Per-class model-input vectors, cluster-augmented when the gate is on."""
        if similarity_payload is None:
            return dict(model_vecs), False
        active = similarity_payload["active"]
        class_ids = similarity_payload["class_ids"]
        assignments = similarity_payload["assignments"]
        out = {}
        for pos, cid in enumerate(class_ids):
            block = sim.cluster_bow(assignments, pos)
            out[cid] = sim.augment(model_vecs[cid], block, active)
        return out, active

    def _stage_model(self, upstream_key: str, corpus: Corpus, split: SplitSpec,
                     doc_vecs: dict, force: bool):
        cfg = self.config
        material = {
            "upstream": upstream_key,
            "lr": cfg.lr,
            "batch_size": cfg.batch_size,
            "epochs": cfg.epochs,
            "l2_weight": cfg.l2_weight,
            "seed": cfg.seed,
            "gzsl": cfg.gzsl,
            "seen_test_fraction": cfg.seen_test_fraction,
        }
        seen_ids = sorted(split.seen_class_ids)

        def compute(stage_dir):
            train_images, _ = _partition_seen_images(corpus, split, cfg)
            if not train_images:
                raise ValidationError("empty training set")
            counts = {cid: 0 for cid in seen_ids}
            for im in train_images:
                counts[im.class_id] += 1
            missing = [cid for cid, n in counts.items() if n == 0]
            if missing:
                raise ValidationError(f"seen classes without training images: {missing}")
            label_of = {cid: i for i, cid in enumerate(seen_ids)}
            x = np.stack([im.features for im in train_images])
            y = np.array([label_of[im.class_id] for im in train_images])
            docs = [doc_vecs[cid] for cid in seen_ids]
            tc = TrainConfig(
                learning_rate=cfg.lr,
                epochs=cfg.epochs,
                batch_size=cfg.batch_size,
                seed=cfg.seed,
                l2_weight=cfg.l2_weight,
            )
            trained, losses = train(x, y, docs, tc)
            save_model(stage_dir / "model.zwm", trained)
            with open(stage_dir / "loss.csv", "w", encoding="utf-8") as fh:
                fh.write("epoch,loss\n")
                for i, loss in enumerate(losses):
                    fh.write(f"{i},{loss:.17g}\n")
            return {"model": trained, "losses": losses}

        def load(stage_dir):
            trained = load_model(stage_dir / "model.zwm")
            losses = [
                float(line.split(",")[1])
                for line in (stage_dir / "loss.csv").read_text().splitlines()[1:]
            ]
            return {"model": trained, "losses": losses}

        return self._run_stage("model", material, compute, load, force)

    def _stage_eval(self, model_key: str, corpus: Corpus, split: SplitSpec,
                    doc_vecs: dict, model_payload: dict, extra_report: dict, force: bool):
        cfg = self.config
        material = {"model": model_key, "gzsl": cfg.gzsl, "bias_grid_size": cfg.bias_grid_size}

        def compute(stage_dir):
            trained = model_payload["model"]
            unseen_ids = sorted(split.unseen_class_ids)
            unseen_docs = [doc_vecs[cid] for cid in unseen_ids]
            test_unseen = sorted(corpus.images_of(unseen_ids), key=lambda im: im.image_id)
            if not test_unseen:
                raise ValidationError("no images for unseen classes")
            predictions = [
                unseen_ids[predict(trained, im.features, unseen_docs)] for im in test_unseen
            ]
            gold = [im.class_id for im in test_unseen]
            report = zsl_report(predictions, gold)

            gzsl_part = None
            if cfg.gzsl:
                _, held_out = _partition_seen_images(corpus, split, cfg)
                mixed = sorted(held_out + test_unseen, key=lambda im: im.image_id)
                all_ids = sorted(split.seen_class_ids | split.unseen_class_ids)
                all_docs = [doc_vecs[cid] for cid in all_ids]
                matrix = np.stack([scores(trained, im.features, all_docs) for im in mixed])
                gz = suc_curve(
                    matrix,
                    [im.class_id for im in mixed],
                    all_ids,
                    split.seen_class_ids,
                    grid_size=cfg.bias_grid_size,
                )
                gzsl_part = gz
                with open(stage_dir / "suc_points.csv", "w", encoding="utf-8") as fh:
                    fh.write("seen_acc,unseen_acc\n")
                    for s_acc, u_acc in gz.suc_points:
                        fh.write(f"{s_acc:.17g},{u_acc:.17g}\n")

            doc = _report_dict(self.config, self.manifest, report, gzsl_part, extra_report)
            _dump_json(stage_dir / "report.json", doc)
            return {"report": doc}

        def load(stage_dir):
            return {"report": json.loads((stage_dir / "report.json").read_text())}

        return self._run_stage("eval", material, compute, load, force)

    def _stage_nns(self, textproc_key: str, prep_key: str, corpus: Corpus,
                   split: SplitSpec, doc_vecs: dict, force: bool):
        cfg = self.config
        material = {
            "textproc": textproc_key,
            "prep": prep_key,
            "centroids": cfg.nns_centroids,
        }

        def compute(stage_dir):
            seen_images = sorted(
                corpus.images_of(split.seen_class_ids), key=lambda im: im.image_id
            )
            seen_docs = {cid: doc_vecs[cid] for cid in split.seen_class_ids}
            unseen_docs = {cid: doc_vecs[cid] for cid in split.unseen_class_ids}
            test = sorted(corpus.images_of(split.unseen_class_ids), key=lambda im: im.image_id)
            if not test:
                raise ValidationError("no images for unseen classes")
            predictions = []
            with open(stage_dir / "nns_predictions.tsv", "w", encoding="utf-8") as fh:
                for im in test:
                    pred = nns_predict(
                        im.features, seen_images, seen_docs, unseen_docs,
                        use_centroids=cfg.nns_centroids,
                    )
                    predictions.append(pred)
                    fh.write(f"{im.image_id}\t{im.class_id}\t{pred}\n")
            report = zsl_report(predictions, [im.class_id for im in test])
            doc = _report_dict(
                self.config, self.manifest, report, None,
                {"similarity_active": None, "vrs_prf": None},
            )
            _dump_json(stage_dir / "report.json", doc)
            return {"report": doc}

        def load(stage_dir):
            return {"report": json.loads((stage_dir / "report.json").read_text())}

        return self._run_stage("nns", material, compute, load, force)

    # -- whole runs ----------------------------------------------------------

    def run(self, force: bool = False) -> dict:
        cfg = self.config
        prep_key, prep = self._stage_prep(force)
        corpus, split = prep["corpus"], prep["split"]
        text_key, text = self._stage_textproc(prep_key, corpus, force)

        if cfg.variant == "nns":
            _, payload = self._stage_nns(text_key, prep_key, corpus, split, text["doc_vecs"], force)
            self._write_manifest()
            return payload["report"]

        model_vecs = text["doc_vecs"]
        upstream_key = text_key
        extra: dict = {"similarity_active": None, "vrs_prf": None}
        if cfg.uses_vrs:
            vrs_key, vrs_payload = self._stage_vrs(text_key, corpus, force)
            model_vecs = vrs_payload["summary_vecs"]
            upstream_key = vrs_key
            extra["vrs_prf"] = vrs_payload["prf"]

        similarity_payload = None
        if cfg.uses_similarity:
            sim_key, similarity_payload = self._stage_similarity(
                text_key, prep_key, corpus, split, text["doc_vecs"], force
            )
            upstream_key = _sha256_json({"docs": upstream_key, "similarity": sim_key})

        final_vecs, active = self._final_doc_vecs(corpus, split, model_vecs, similarity_payload)
        if cfg.uses_similarity:
            extra["similarity_active"] = active

        model_key, model_payload = self._stage_model(upstream_key, corpus, split, final_vecs, force)
        _, eval_payload = self._stage_eval(
            model_key, corpus, split, final_vecs, model_payload, extra, force
        )
        self._write_manifest()
        return eval_payload["report"]

    def _write_manifest(self):
        _dump_json(self.out / "manifest.json", self.manifest)


def _report_dict(cfg, manifest, zsl: EvalReport, gzsl: EvalReport | None, extra: dict) -> dict:
    doc = {
        "variant": cfg.variant,
        "seed": cfg.seed,
        "config_hash": manifest["config_hash"],
        "zsl": zsl.to_dict(),
        "gzsl": gzsl.to_dict() if gzsl is not None else None,
    }
    doc.update(extra)
    return doc


def _merge_banks(sentence_bank, caption_bank):
    """Sentence entries from one bank, caption entries from the other."""
    if sentence_bank is caption_bank:
        return sentence_bank
    if sentence_bank.dim != caption_bank.dim:
        raise ValidationError(
            f"sentence bank dim {sentence_bank.dim} != caption bank dim {caption_bank.dim}"
        )
    return EmbeddingBank(
        dim=sentence_bank.dim,
        sentences=dict(sentence_bank.sentences),
        captions=dict(caption_bank.captions),
    )


def _partition_seen_images(corpus: Corpus, split: SplitSpec, cfg: PipelineConfig):
    """Split seen-class images into (train, gzsl holdout); holdout empty unless gzsl."""
    seen_images = sorted(corpus.images_of(split.seen_class_ids), key=lambda im: im.image_id)
    if not cfg.gzsl or cfg.seen_test_fraction <= 0:
        return seen_images, []
    rng = np.random.default_rng(cfg.seed + 1)
    held = []
    train_set = []
    by_class: dict = {}
    for im in seen_images:
        by_class.setdefault(im.class_id, []).append(im)
    for cid in sorted(by_class):
        group = by_class[cid]
        k = int(round(cfg.seen_test_fraction * len(group)))
        k = min(k, len(group) - 1)  # keep at least one training image per class
        chosen = set(rng.choice(len(group), size=k, replace=False).tolist()) if k > 0 else set()
        for i, im in enumerate(group):
            (held if i in chosen else train_set).append(im)
    return train_set, held


def _load_docvecs(vec_path, vocab_path):
    lines = Path(vec_path).read_text("utf-8").splitlines()
    header = lines[0]
    meta = dict(part.split("=") for part in header.lstrip("# ").split())
    dim, num_docs = int(meta["dim"]), int(meta["num_documents"])
    vocab = read_vocab_tsv(vocab_path, num_docs)
    vecs = {}
    for line in lines[1:]:
        cid, _, payload = line.partition("\t")
        vecs[int(cid)] = parse_sparse(payload, dim)
    return vecs, vocab


# ---------------------------------------------------------------------------
# grid search and sweeps


def _validation_pipeline(cfg: PipelineConfig, out_dir) -> tuple[Pipeline, Corpus]:
    """Pipeline over seen classes only, with a held-out pseudo-unseen set.

    Validation classes are drawn like an SCS split over the seen classes
    (each keeps a training classmate in its category where possible), so
    hyperparameter search sees the same transfer structure as the test
    split instead of accidentally orphaning a category.
    """
    corpus = load_corpus(cfg.corpus)
    base_split = make_split(
        corpus, cfg.split_mode, cfg.unseen_fraction, cfg.seed, cfg.validation_fraction
    )
    seen_ids = sorted(base_split.seen_class_ids)
    if len(seen_ids) < 2:
        raise ValidationError("validation split needs at least two seen classes")
    sub = subset_corpus(corpus, seen_ids)
    import warnings as _warnings

    try:
        with _warnings.catch_warnings():
            _warnings.simplefilter("ignore")
            val_split = make_split(
                sub, "SCS", cfg.validation_fraction, cfg.seed + 17, cfg.validation_fraction
            )
        val_ids = set(val_split.unseen_class_ids)
    except ValidationError:
        rng = np.random.default_rng(cfg.seed + 17)
        n_val = max(1, int(round(cfg.validation_fraction * len(seen_ids))))
        n_val = min(n_val, len(seen_ids) - 1)
        val_ids = set(np.array(seen_ids)[rng.permutation(len(seen_ids))[:n_val]].tolist())
    override = {cid: ("unseen" if cid in val_ids else "seen") for cid in seen_ids}
    sub_cfg = replace(cfg, out=str(out_dir), split_mode="explicit", gzsl=False)
    return Pipeline(sub_cfg, corpus=sub, split_override=override), sub


def subset_corpus(corpus: Corpus, class_ids) -> Corpus:
    wanted = set(class_ids)
    classes = tuple(c for c in corpus.classes if c.class_id in wanted)
    images = tuple(im for im in corpus.images if im.class_id in wanted)
    embeddings = corpus.embeddings
    if embeddings is not None:
        embeddings = EmbeddingBank(
            dim=embeddings.dim,
            sentences={k: v for k, v in embeddings.sentences.items() if k[0] in wanted},
            captions=dict(embeddings.captions),
        )
    gold = {k: v for k, v in corpus.vrl_gold.items() if k[0] in wanted}
    return Corpus(
        classes=classes,
        images=images,
        feature_dim=corpus.feature_dim,
        embeddings=embeddings,
        captions=dict(corpus.captions),
        vrl_gold=gold,
        explicit_split=None,
    )


def grid_search(cfg: PipelineConfig, param_grid: dict, out_dir=None):
    """Exhaustive validation-accuracy search; first grid order wins ties.

    param_grid maps config keys to candidate value lists. Returns
    (best_config, results) where results is a list of (values, accuracy).
    """
    if not param_grid or any(len(v) == 0 for v in param_grid.values()):
        raise ValidationError("parameter grid must be non-empty")
    out_dir = Path(out_dir) if out_dir is not None else Path(cfg.out) / "grid"
    out_dir.mkdir(parents=True, exist_ok=True)
    keys = list(param_grid)
    combos = [()]
    for key in keys:
        combos = [prev + (val,) for prev in combos for val in param_grid[key]]
    best = None
    results = []
    for i, combo in enumerate(combos):
        candidate = replace(cfg, **dict(zip(keys, combo)))
        pipe, _ = _validation_pipeline(candidate, out_dir / f"combo-{i}")
        report = pipe.run()
        acc = report["zsl"]["top1"]
        results.append((dict(zip(keys, combo)), acc))
        if best is None or acc > best[1]:
            best = (candidate, acc)
    best_cfg = replace(best[0], out=cfg.out)
    with open(out_dir / "best_config.cfg", "w", encoding="utf-8") as fh:
        for key, value in config_dict(best_cfg).items():
            if value is None or value == "":
                continue
            fh.write(f"{key}={value}\n")
    return best_cfg, results


def sweep_captions(cfg: PipelineConfig, max_captions: int, out_dir=None):
    """Accuracy per caption-bank size L = 1..max_captions."""
    if not cfg.uses_vrs:
        raise ValidationError("caption sweep requires a +vrs variant")
    out_dir = Path(out_dir) if out_dir is not None else Path(cfg.out) / "sweep"
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for limit in range(1, max_captions + 1):
        sub_cfg = replace(cfg, caption_limit=limit, out=str(out_dir / f"L{limit}"))
        report = Pipeline(sub_cfg).run()
        rows.append((limit, report["zsl"]["top1"]))
    with open(out_dir / "caption_sweep.csv", "w", encoding="utf-8") as fh:
        fh.write("captions,top1\n")
        for limit, acc in rows:
            fh.write(f"{limit},{acc:.17g}\n")
    return rows
