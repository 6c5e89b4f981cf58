from __future__ import annotations

import pytest

import toyworld
from critic_service.data import (
    ImageResolver,
    classifier_target,
    dataset_digest,
    decode_tokens,
    encode_text,
    lister_target,
    load_classification,
    load_salient,
)
from critic_service.errors import DatasetSchemaError


class TestLoaders:
    def test_classification_round(self, tmp_path):
        path, _, rows = toyworld.classifier_set(tmp_path, n=9)
        examples = load_classification(path)
        assert len(examples) == 9
        assert examples[0].feature == rows[0]["feature"]
        assert examples[0].label == rows[0]["label"]

    def test_salient_round(self, tmp_path):
        path, _, rows = toyworld.lister_set(tmp_path, n=3)
        examples = load_salient(path)
        assert [list(e.features) for e in examples] == [r["salient_features"] for r in rows]

    def test_empty_dataset_rejected(self, tmp_path):
        empty = tmp_path / "empty.jsonl"
        empty.write_text("")
        with pytest.raises(DatasetSchemaError):
            load_classification(empty)

    def test_unknown_label_rejected(self, tmp_path):
        toyworld.write_jsonl(
            tmp_path / "bad.jsonl",
            [{"image_id": "a", "feature": "f", "label": "maybe", "rationale": ""}],
        )
        with pytest.raises(DatasetSchemaError):
            load_classification(tmp_path / "bad.jsonl")

    def test_missing_key_rejected(self, tmp_path):
        toyworld.write_jsonl(tmp_path / "bad.jsonl", [{"image_id": "a"}])
        with pytest.raises(DatasetSchemaError):
            load_salient(tmp_path / "bad.jsonl")

    def test_missing_file_rejected(self, tmp_path):
        with pytest.raises(DatasetSchemaError):
            load_classification(tmp_path / "nope.jsonl")


class TestTargets:
    def test_classifier_target_grammar(self):
        assert (
            classifier_target("non-salient", "Too plain.")
            == "label: non-salient | rationale: Too plain."
        )

    def test_lister_target_grammar(self):
        assert lister_target(["a", "b c"]) == "[a]; [b c]"

    def test_byte_round_trip(self):
        text = "label: salient | rationale: Buyers love it. éü"
        assert decode_tokens(encode_text(text)) == text


class TestResolver:
    def test_images_dir_route(self, tmp_path):
        toyworld.write_image(tmp_path / "imgs", "x1")
        resolver = ImageResolver(images_dir=tmp_path / "imgs")
        assert resolver.resolve("x1").startswith(b"toy-image:x1")

    def test_records_file_route(self, tmp_path):
        images_dir = tmp_path / "imgs"
        toyworld.write_image(images_dir, "r-img")
        records = toyworld.records_file(tmp_path, images_dir, ["r-img"])
        resolver = ImageResolver(records_file=records)
        assert resolver.resolve("r-img").startswith(b"toy-image:r-img")

    def test_unresolvable_id(self, tmp_path):
        resolver = ImageResolver(images_dir=tmp_path)
        with pytest.raises(DatasetSchemaError):
            resolver.resolve("ghost")


def test_dataset_digest_changes_with_content(tmp_path):
    a = tmp_path / "a.jsonl"
    a.write_text('{"x": 1}\n')
    d1 = dataset_digest(a)
    a.write_text('{"x": 2}\n')
    assert dataset_digest(a) != d1
