import json
from pathlib import Path

import numpy as np
import pytest

from synthgen import build_synthetic_corpus, sce_split_mapping, scs_split_mapping
from zest.corpus import load_corpus, make_split
from zest.errors import ValidationError
from zest.eval import zsl_report
from zest.model import TrainConfig, predict, train
from zest.pipeline import (
    Pipeline,
    PipelineConfig,
    build_config,
    grid_search,
    parse_config_file,
)
from zest.textproc import doc_tokens, fit_vocabulary, tfidf

FAST = dict(lr=5e-3, batch_size=16, epochs=6, eps=0.65, sim_threshold=0.15)


def fast_corpus(root, seed=0):
    return build_synthetic_corpus(root, seed=seed, images_per_class=8)


def make_cfg(corpus_dir, out_dir, variant="vanilla", seed=0, **extra):
    params = dict(
        corpus=str(corpus_dir), out=str(out_dir), variant=variant,
        split_mode="explicit", seed=seed, **FAST,
    )
    params.update(extra)
    return PipelineConfig(**params)


class TestComposition:
    def test_vanilla_equals_manual_composition(self, tmp_path):
        fast_corpus(tmp_path / "corp")
        cfg = make_cfg(tmp_path / "corp", tmp_path / "out")
        report = Pipeline(cfg, split_override=scs_split_mapping()).run()

        corpus = load_corpus(tmp_path / "corp")
        split = make_split(corpus, "explicit", explicit=scs_split_mapping())
        ordered = sorted(corpus.classes, key=lambda c: c.class_id)
        tokens = {c.class_id: doc_tokens(c.document) for c in ordered}
        vocab = fit_vocabulary([tokens[c.class_id] for c in ordered], 1)
        vecs = {cid: tfidf(tok, vocab) for cid, tok in tokens.items()}

        seen_ids = sorted(split.seen_class_ids)
        label_of = {cid: i for i, cid in enumerate(seen_ids)}
        train_images = sorted(corpus.images_of(seen_ids), key=lambda im: im.image_id)
        x = np.stack([im.features for im in train_images])
        y = np.array([label_of[im.class_id] for im in train_images])
        docs = [vecs[cid] for cid in seen_ids]
        tc = TrainConfig(
            learning_rate=cfg.lr, epochs=cfg.epochs, batch_size=cfg.batch_size, seed=cfg.seed
        )
        model, _ = train(x, y, docs, tc)

        unseen_ids = sorted(split.unseen_class_ids)
        unseen_docs = [vecs[cid] for cid in unseen_ids]
        test = sorted(corpus.images_of(unseen_ids), key=lambda im: im.image_id)
        preds = [unseen_ids[predict(model, im.features, unseen_docs)] for im in test]
        manual = zsl_report(preds, [im.class_id for im in test])

        assert report["zsl"]["top1"] == manual.top1
        assert report["zsl"]["per_class_accuracy"] == {
            str(k): v for k, v in sorted(manual.per_class_accuracy.items())
        }


class TestGateBehavior:
    def test_inactive_gate_reproduces_vanilla_exactly(self, tmp_path):
        fast_corpus(tmp_path / "corp")
        rep_v = Pipeline(
            make_cfg(tmp_path / "corp", tmp_path / "out-v"),
            split_override=sce_split_mapping(),
        ).run()
        rep_s = Pipeline(
            make_cfg(tmp_path / "corp", tmp_path / "out-s", variant="similarity"),
            split_override=sce_split_mapping(),
        ).run()
        assert rep_s["similarity_active"] is False
        assert rep_s["zsl"] == rep_v["zsl"]
        model_v = (Path(tmp_path / "out-v") / "stages").glob("model-*/model.zwm")
        model_s = (Path(tmp_path / "out-s") / "stages").glob("model-*/model.zwm")
        assert next(model_v).read_bytes() == next(model_s).read_bytes()

    def test_active_gate_on_scs_split(self, tmp_path):
        fast_corpus(tmp_path / "corp")
        rep = Pipeline(
            make_cfg(tmp_path / "corp", tmp_path / "out", variant="similarity"),
            split_override=scs_split_mapping(),
        ).run()
        assert rep["similarity_active"] is True

    def test_clustering_unchanged_by_vrs(self, tmp_path):
        fast_corpus(tmp_path / "corp")
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        Pipeline(
            make_cfg(tmp_path / "corp", out_a, variant="similarity"),
            split_override=scs_split_mapping(),
        ).run()
        Pipeline(
            make_cfg(tmp_path / "corp", out_b, variant="similarity+vrs", vrs_threshold=0.5),
            split_override=scs_split_mapping(),
        ).run()
        clusters_a = next((out_a / "stages").glob("similarity-*/clusters.tsv")).read_text()
        clusters_b = next((out_b / "stages").glob("similarity-*/clusters.tsv")).read_text()
        assert clusters_a == clusters_b


class TestDeterminismAndCaching:
    def test_reruns_byte_identical_reports(self, tmp_path):
        fast_corpus(tmp_path / "corp")
        rep_a = Pipeline(
            make_cfg(tmp_path / "corp", tmp_path / "out-a", variant="similarity", gzsl=True),
            split_override=scs_split_mapping(),
        ).run()
        rep_b = Pipeline(
            make_cfg(tmp_path / "corp", tmp_path / "out-b", variant="similarity", gzsl=True),
            split_override=scs_split_mapping(),
        ).run()
        bytes_a = next((tmp_path / "out-a" / "stages").glob("eval-*/report.json")).read_bytes()
        bytes_b = next((tmp_path / "out-b" / "stages").glob("eval-*/report.json")).read_bytes()
        assert bytes_a == bytes_b
        assert rep_a == rep_b

    def test_cache_reuse_and_forced_recompute(self, tmp_path):
        fast_corpus(tmp_path / "corp")
        cfg = make_cfg(tmp_path / "corp", tmp_path / "out")
        pipe1 = Pipeline(cfg, split_override=scs_split_mapping())
        pipe1.run()
        manifest1 = json.loads((tmp_path / "out" / "manifest.json").read_text())
        assert all(not s["cached"] for s in manifest1["stages"].values())

        pipe2 = Pipeline(cfg, split_override=scs_split_mapping())
        pipe2.run()
        manifest2 = json.loads((tmp_path / "out" / "manifest.json").read_text())
        assert all(s["cached"] for s in manifest2["stages"].values())
        assert {n: s["artifacts"] for n, s in manifest1["stages"].items()} == {
            n: s["artifacts"] for n, s in manifest2["stages"].items()
        }

        pipe3 = Pipeline(cfg, split_override=scs_split_mapping())
        pipe3.run(force=True)
        manifest3 = json.loads((tmp_path / "out" / "manifest.json").read_text())
        assert all(not s["cached"] for s in manifest3["stages"].values())
        assert {n: s["artifacts"] for n, s in manifest1["stages"].items()} == {
            n: s["artifacts"] for n, s in manifest3["stages"].items()
        }


class TestGzslAndAblations:
    def test_gzsl_report_has_auc(self, tmp_path):
        fast_corpus(tmp_path / "corp")
        rep = Pipeline(
            make_cfg(tmp_path / "corp", tmp_path / "out", gzsl=True),
            split_override=scs_split_mapping(),
        ).run()
        assert rep["gzsl"] is not None
        assert 0.0 <= rep["gzsl"]["auc"] <= 1.0
        suc_csv = next((tmp_path / "out" / "stages").glob("eval-*/suc_points.csv"))
        assert suc_csv.read_text().startswith("seen_acc,unseen_acc")

    def test_vrs_prf_reported_with_gold(self, tmp_path):
        fast_corpus(tmp_path / "corp")
        rep = Pipeline(
            make_cfg(
                tmp_path / "corp", tmp_path / "out",
                variant="vanilla+vrs", vrs_threshold=0.5,
            ),
            split_override=scs_split_mapping(),
        ).run()
        prf = rep["vrs_prf"]
        # planted bands split exactly at 0.5: summaries = informative halves
        assert prf["precision"] == 1.0 and prf["recall"] == 1.0
        assert prf["removed_fraction"] == pytest.approx(0.5)

    def test_parts_summarizer(self, tmp_path):
        fast_corpus(tmp_path / "corp")
        rep = Pipeline(
            make_cfg(
                tmp_path / "corp", tmp_path / "out",
                variant="vanilla+vrs", summarizer="parts",
            ),
            split_override=scs_split_mapping(),
        ).run()
        assert rep["zsl"]["top1"] >= 0.0

    def test_category_as_cluster_ablation(self, tmp_path):
        fast_corpus(tmp_path / "corp")
        rep = Pipeline(
            make_cfg(
                tmp_path / "corp", tmp_path / "out",
                variant="similarity", category_as_cluster=True,
            ),
            split_override=scs_split_mapping(),
        ).run()
        assert rep["similarity_active"] is True

    def test_nns_variant(self, tmp_path):
        fast_corpus(tmp_path / "corp")
        rep = Pipeline(
            make_cfg(tmp_path / "corp", tmp_path / "out", variant="nns"),
            split_override=scs_split_mapping(),
        ).run()
        assert rep["variant"] == "nns"
        assert rep["zsl"]["top1"] > 0.5


class TestSweepAndGrid:
    def test_caption_sweep_rows_and_plateau(self, tmp_path):
        fast_corpus(tmp_path / "corp")
        cfg = make_cfg(
            tmp_path / "corp", tmp_path / "out",
            variant="vanilla+vrs", vrs_threshold=0.5,
        )
        # identical caption embeddings: accuracy must plateau immediately
        rows = []
        for limit, acc in sweep_captions_with_split(cfg, 10):
            rows.append((limit, acc))
        assert [r[0] for r in rows] == list(range(1, 11))
        assert all(acc == rows[0][1] for _, acc in rows[1:])
        csv = (tmp_path / "out" / "sweep" / "caption_sweep.csv").read_text().splitlines()
        assert len(csv) == 11

    def test_grid_singleton(self, tmp_path):
        fast_corpus(tmp_path / "corp")
        cfg = make_cfg(
            tmp_path / "corp", tmp_path / "out",
            variant="similarity", split_mode="SCS",
            validation_fraction=0.3, unseen_fraction=0.34,
        )
        best, results = grid_search(cfg, {"eps": [0.65]})
        assert best.eps == 0.65
        assert len(results) == 1

    def test_grid_prefers_strictly_better_config(self, tmp_path):
        fast_corpus(tmp_path / "corp")
        cfg = make_cfg(
            tmp_path / "corp", tmp_path / "out",
            split_mode="SCS", validation_fraction=0.3, unseen_fraction=0.34,
        )
        best, results = grid_search(cfg, {"epochs": [0, 20]})
        accs = {combo["epochs"]: acc for combo, acc in results}
        assert accs[20] > accs[0]
        assert best.epochs == 20
        assert (tmp_path / "out" / "grid" / "best_config.cfg").exists()

    def test_eps_grid_smoke(self, tmp_path):
        fast_corpus(tmp_path / "corp")
        cfg = make_cfg(
            tmp_path / "corp", tmp_path / "out",
            variant="similarity", split_mode="SCS",
            validation_fraction=0.3, unseen_fraction=0.34, epochs=2,
        )
        grid = {"eps": [round(0.05 + 0.05 * i, 2) for i in range(18)]}
        best, results = grid_search(cfg, grid)
        assert len(results) == 18

    def test_empty_grid_rejected(self, tmp_path):
        fast_corpus(tmp_path / "corp")
        cfg = make_cfg(tmp_path / "corp", tmp_path / "out")
        with pytest.raises(ValidationError):
            grid_search(cfg, {})


def sweep_captions_with_split(cfg, max_captions):
    """Caption sweep against the explicit SCS mapping used by the fixtures."""
    from dataclasses import replace

    rows = []
    out_root = Path(cfg.out) / "sweep"
    out_root.mkdir(parents=True, exist_ok=True)
    for limit in range(1, max_captions + 1):
        sub = replace(cfg, caption_limit=limit, out=str(out_root / f"L{limit}"))
        report = Pipeline(sub, split_override=scs_split_mapping()).run()
        rows.append((limit, report["zsl"]["top1"]))
    with open(out_root / "caption_sweep.csv", "w", encoding="utf-8") as fh:
        fh.write("captions,top1\n")
        for limit, acc in rows:
            fh.write(f"{limit},{acc:.17g}\n")
    return rows


class TestConfigParsing:
    def test_round_trip_file_and_overrides(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text(
            "# comment\ncorpus=/data/corp\nvariant=similarity\neps=0.4\n"
            "gzsl=true\nepochs=9\nvrs_threshold=0.25\n"
        )
        values = parse_config_file(path)
        cfg = build_config(values, {"eps": 0.5})
        assert cfg.variant == "similarity"
        assert cfg.eps == 0.5  # flag beats file
        assert cfg.gzsl is True and cfg.epochs == 9
        assert cfg.vrs_threshold == 0.25

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("nonsense=1\n")
        with pytest.raises(ValidationError):
            parse_config_file(path)

    def test_unknown_variant_rejected(self):
        with pytest.raises(ValidationError):
            build_config({"corpus": "x", "variant": "quantum"})

    def test_out_falls_back_to_env(self, monkeypatch, tmp_path):
        monkeypatch.setenv("ZEST_OUT", str(tmp_path / "envout"))
        cfg = build_config({"corpus": "x"})
        assert cfg.out == str(tmp_path / "envout")
