"""Acceptance gate: one test per release criterion, each printing a verdict.

Every criterion runs against the deterministic mock world only; no network,
no GPU, no external weights.
"""

from __future__ import annotations

import contextlib
import io
import json
import random
import time
from pathlib import Path

import pytest
import requests

import fuzz
import oracles
from adcritic import protocol
from adcritic.backends import MockBackend
from adcritic.cache import FileCache
from adcritic.cli import main as cli_main
from adcritic.core import FeatureLabel, TextVariant, write_records
from adcritic.editor import PostEditor
from adcritic.enums import ModelRole
from adcritic.errors import ProtocolError
from adcritic.evaluate import EvalReport, EvalRow
from adcritic.gateway import Gateway
from adcritic.metrics import (
    bleu,
    classification_accuracy,
    meteor,
    rouge_l,
    sentence_bleu,
    tokenize,
)
from adcritic.mockserve import MockCriticServer
from adcritic.mockworld import make_corpus
from adcritic.prompts import PromptEngine
from adcritic.trainset import TrainsetBuilder, split_classification
from test_metrics import (
    BLEU_CORPUS_CASES,
    BLEU_SENTENCE_CASES,
    METEOR_CASES,
    ROUGE_CASES,
)
from test_trainset import ClassificationExample, feat


@contextlib.contextmanager
def criterion(name: str):
    try:
        yield
    except BaseException:
        print(f"[ACCEPTANCE] {name}: FAIL")
        raise
    print(f"[ACCEPTANCE] {name}: PASS")


def fresh_pipeline(tmp_path, tag="a"):
    backend = MockBackend()
    gateway = Gateway({role: backend for role in ModelRole}, FileCache(tmp_path / f"cache-{tag}"))
    engine = PromptEngine()
    return gateway, engine, PostEditor(gateway, engine), backend


class TestAcceptance:
    def test_metric_oracle_suite(self):
        """>= 20 hand-built cases match brute-force oracles to 1e-9 (raw scale)."""
        with criterion("metric-oracle-suite"):
            started = time.perf_counter()
            cases = 0
            for candidates, references in BLEU_CORPUS_CASES:
                expected = oracles.corpus_bleu_oracle(candidates, references)
                assert bleu(candidates, references).value / 100.0 == pytest.approx(
                    expected, abs=1e-9
                )
                cases += 1
            for candidate, reference in BLEU_SENTENCE_CASES:
                expected = oracles.sentence_bleu_oracle(candidate, reference)
                assert sentence_bleu(candidate, reference) == pytest.approx(
                    expected, abs=1e-9
                )
                cases += 1
            for candidate, reference in ROUGE_CASES:
                expected = oracles.rouge_l_oracle(candidate, reference)
                assert rouge_l(candidate, reference).value / 100.0 == pytest.approx(
                    expected, abs=1e-9
                )
                cases += 1
            for candidate, reference, m, chunks in METEOR_CASES:
                expected = oracles.meteor_oracle(
                    m, len(tokenize(candidate)), len(tokenize(reference)), chunks
                )
                assert meteor(candidate, reference).value / 100.0 == pytest.approx(
                    expected, abs=1e-9
                )
                cases += 1
            assert cases >= 20
            assert rouge_l("a b c d", "a c b d").value == pytest.approx(75.0, abs=1e-9)
            assert meteor("the cat sat", "the cat sat").value == pytest.approx(
                98.15, abs=0.01
            )
            assert time.perf_counter() - started < 5.0

    def test_mock_world_end_to_end(self, tmp_path):
        """Combined output is clean under the manifest oracle on 20 records."""
        with criterion("mock-world-end-to-end"):
            started = time.perf_counter()
            gateway, engine, editor, _ = fresh_pipeline(tmp_path)
            records = make_corpus(20, seed=31)
            for record in records:
                out = editor.run_all(record)
                feedback = editor.last_feedback

                combined_keys = set(
                    oracles.mentioned_features(out[TextVariant.COMBINED].text)
                )
                salient = set(oracles.salient_manifest_keys(record))
                visible = oracles.visible_keys(record)
                assert combined_keys - visible == set(), record.record_id
                assert salient - combined_keys == set(), record.record_id

                pruned_keys = set(oracles.mentioned_features(out[TextVariant.PRUNED].text))
                erroneous_keys = {lf.feature.key for lf in feedback.erroneous}
                assert pruned_keys & erroneous_keys == set(), record.record_id

                manual = editor.append(
                    editor.prune(out[TextVariant.DRAFT].text, feedback.erroneous),
                    feedback.missing_salient,
                )
                assert out[TextVariant.COMBINED].text == manual, record.record_id
            assert time.perf_counter() - started < 30.0

    def test_trainset_builder_soundness(self, tmp_path):
        """Builder labels equal brute-force labels on 100% of >= 200 features."""
        with criterion("trainset-builder-soundness"):
            gateway, engine, editor, _ = fresh_pipeline(tmp_path)
            builder = TrainsetBuilder(gateway, engine, editor, seed=7)
            records = make_corpus(30, seed=57)
            build = builder.build(records)
            assert not build.failed_records

            for inv in build.inventories:
                keys = {f.key for f in inv.features}
                assert inv.visible | inv.not_visible == keys
                assert not inv.visible & inv.not_visible
                assert inv.hallucinated <= inv.not_visible
                assert not inv.salient & inv.non_salient
                assert (inv.salient | inv.non_salient) <= inv.visible

            examples = build.classification_train + build.classification_val
            image_owner = {
                img.id: r.record_id for r in records for img in r.images
            }
            labels_seen = set()
            feature_checks = 0
            for record in records:
                draft = editor.generate_draft(record, editor.generate_key_features(record))
                expected = {
                    k: v
                    for k, v in oracles.oracle_record_labels(record, draft.text).items()
                    if v != "aligned"
                }
                got = {
                    e.feature.key: e.label.value
                    for e in examples
                    if image_owner[e.image_id] == record.record_id
                }
                assert got == expected, record.record_id
                feature_checks += len(got)
                labels_seen.update(got.values())
            assert feature_checks >= 200
            assert labels_seen == {"salient", "non_salient", "hallucinated"}

            hundred = [
                ClassificationExample(
                    image_id=f"img{i}",
                    feature=feat(f"feature {i}"),
                    label=FeatureLabel.SALIENT,
                    rationale="r.",
                )
                for i in range(100)
            ]
            first = split_classification(hundred, 0.87, seed=11)
            again = split_classification(hundred, 0.87, seed=11)
            assert (len(first[0]), len(first[1])) == (87, 13)
            assert first == again

    def test_determinism_and_caching(self, tmp_path):
        """Two warm-cache pipeline runs: identical trees, zero backend calls."""
        with criterion("determinism-and-caching"):
            corpus = tmp_path / "corpus.jsonl"
            write_records(corpus, make_corpus(8, seed=23))
            out_dir = tmp_path / "out"
            config = {
                "paths": {
                    "corpus": str(corpus),
                    "cache_dir": str(tmp_path / "shared-cache"),
                    "output_dir": str(out_dir),
                },
                "backends": {"default": {"kind": "mock"}},
                "seed": 23,
                "workers": 1,
            }
            config_path = tmp_path / "config.json"
            config_path.write_text(json.dumps(config))

            def run_tree() -> dict:
                stats = {}
                for argv in (
                    ["edit", "--variant", "combined", "--config", str(config_path)],
                    ["build-trainset", "--config", str(config_path)],
                    ["preprocess-gt", "--config", str(config_path)],
                    [
                        "eval",
                        "--config",
                        str(config_path),
                        "--gen",
                        str(out_dir / "edited.combined.jsonl"),
                        "--gt",
                        str(out_dir / "faithful_gt.jsonl"),
                    ],
                ):
                    with contextlib.redirect_stdout(io.StringIO()):
                        assert cli_main(argv) == 0
                    manifest = json.loads((out_dir / "run-manifest.json").read_text())
                    stats[argv[0]] = manifest["cache"]
                return stats

            def tree() -> dict[str, bytes]:
                return {
                    str(p.relative_to(out_dir)): p.read_bytes()
                    for p in sorted(out_dir.rglob("*"))
                    if p.is_file()
                }

            run_tree()  # cold run fills the cache
            stats_a = run_tree()
            tree_a = tree()
            stats_b = run_tree()
            tree_b = tree()

            for stats in (stats_a, stats_b):
                for command, cache_stats in stats.items():
                    assert cache_stats["backend_calls"] == 0, command
            assert tree_a == tree_b

    def test_reporting_arithmetic(self):
        """Accuracy granularity matches the reporting fixture; bolding with ties."""
        with criterion("reporting-arithmetic"):
            pairs = [(FeatureLabel.HALLUCINATED, FeatureLabel.HALLUCINATED)] * 9612
            pairs += [(FeatureLabel.HALLUCINATED, FeatureLabel.SALIENT)] * 388
            accuracy = classification_accuracy(pairs)
            assert accuracy[FeatureLabel.HALLUCINATED] == 96.12

            rows = [
                EvalRow(variant="baseline", metrics={"bleu": 8.08, "meteor": 25.28}),
                EvalRow(variant="pruned", metrics={"bleu": 10.13, "meteor": 28.08}),
                EvalRow(variant="appended", metrics={"bleu": 10.13, "meteor": 23.14}),
                EvalRow(variant="combined", metrics={"bleu": 10.13, "meteor": None}),
            ]
            report = EvalReport(rows=rows)
            bold = report.bold_cells()
            assert ("pruned", "bleu") in bold
            assert ("appended", "bleu") in bold
            assert ("combined", "bleu") in bold
            assert ("baseline", "bleu") not in bold
            assert ("pruned", "meteor") in bold and len(
                [cell for cell in bold if cell[1] == "meteor"]
            ) == 1
            assert "n/a" in report.render_table()

    def test_protocol_conformance(self, tmp_path):
        """Client parses 1000 fuzzed valid responses, rejects 100 invalid;
        the mock server passes the same suite over live HTTP."""
        with criterion("protocol-conformance"):
            rng = random.Random(1234)
            for body in fuzz.valid_classify_bodies(rng, 500):
                protocol.parse_classify_response(body)
            for body in fuzz.valid_salient_bodies(rng, 500):
                protocol.parse_salient_response(body)
            for body in fuzz.invalid_bodies(rng, 100):
                with pytest.raises(ProtocolError):
                    protocol.parse_classify_response(body)
                with pytest.raises(ProtocolError):
                    protocol.parse_salient_response(body)

            records = make_corpus(5, seed=77, images_dir=tmp_path / "imgs")
            image_bytes = [
                Path(img.uri).read_bytes() for r in records for img in r.images
            ]
            with MockCriticServer(records) as server:
                for i in range(60):
                    image = image_bytes[i % len(image_bytes)] if i % 3 else b"unknown"
                    feature = fuzz.random_text(rng, 24).strip() or "f"
                    body = protocol.render_classify_request(image, feature)
                    resp = requests.post(server.endpoint + protocol.CLASSIFY_PATH, data=body)
                    assert resp.status_code == 200
                    protocol.parse_classify_response(resp.content)

                    body = protocol.render_salient_request(image)
                    resp = requests.post(server.endpoint + protocol.SALIENT_PATH, data=body)
                    assert resp.status_code == 200
                    protocol.parse_salient_response(resp.content)
                for bad in (b"{}", b"no json", b'{"image": 5, "feature": "f"}'):
                    resp = requests.post(server.endpoint + protocol.CLASSIFY_PATH, data=bad)
                    assert resp.status_code == 400
