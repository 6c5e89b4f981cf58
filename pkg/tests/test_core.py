from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adcritic.core import (
    DuplicateImageId,
    canonical_key,
    canonicalize_feature,
    parse_record,
    read_records,
    write_records,
)
from adcritic.core import FeatureOrigin, ImageRef, MixedModalRecord, MockManifest, StructuredData
from adcritic.errors import EmptyFeature, SchemaError
from adcritic.mockworld import make_corpus


def minimal_raw(**overrides):
    raw = {
        "record_id": "r1",
        "structured": {"kind": "kg", "triples": [["house", "hasBedrooms", "3"]]},
        "images": [{"id": "img0", "uri": "img0.png"}],
    }
    raw.update(overrides)
    return raw


class TestParseRecord:
    def test_minimal_record(self):
        record = parse_record(minimal_raw())
        assert record.record_id == "r1"
        assert record.structured.triples == (("house", "hasBedrooms", "3"),)
        assert len(record.images) == 1
        assert record.images[0].id == "img0"
        assert record.ground_truth_text is None

    def test_empty_images_rejected(self):
        with pytest.raises(SchemaError):
            parse_record(minimal_raw(images=[]))

    def test_duplicate_image_id(self):
        raw = minimal_raw(
            images=[{"id": "img0", "uri": "a.png"}, {"id": "img0", "uri": "b.png"}]
        )
        with pytest.raises(DuplicateImageId):
            parse_record(raw)

    def test_unknown_key_strict_vs_lax(self):
        raw = minimal_raw(extra="x")
        with pytest.raises(SchemaError):
            parse_record(raw, strict=True)
        assert parse_record(raw, strict=False).record_id == "r1"

    def test_missing_required_field(self):
        raw = minimal_raw()
        del raw["structured"]
        with pytest.raises(SchemaError):
            parse_record(raw)

    def test_table_records_carry_exactly_one_image(self):
        raw = {
            "record_id": "p1",
            "structured": {"kind": "table", "pairs": [["color", "mint green"]]},
            "images": [{"id": "a", "uri": "a.png"}, {"id": "b", "uri": "b.png"}],
        }
        with pytest.raises(SchemaError):
            parse_record(raw)

    def test_manifest_salient_must_be_visible(self):
        raw = minimal_raw(
            images=[
                {
                    "id": "img0",
                    "uri": "a.png",
                    "manifest": {"visible": ["fence"], "salient": ["pool"]},
                }
            ]
        )
        with pytest.raises(SchemaError):
            parse_record(raw)


class TestCanonicalizeFeature:
    def test_collapses_and_casefolds(self):
        feature = canonicalize_feature("  White  Picket Fence ", FeatureOrigin.CRITIC_LIST)
        assert feature.display == "White Picket Fence"
        assert feature.key == "white picket fence"

    def test_already_canonical(self):
        feature = canonicalize_feature("verandah", FeatureOrigin.GENERATED_TEXT)
        assert feature.display == "verandah"
        assert feature.key == "verandah"

    def test_whitespace_only_rejected(self):
        with pytest.raises(EmptyFeature):
            canonicalize_feature("   ", FeatureOrigin.CRITIC_LIST)

    @given(st.text(min_size=1))
    def test_idempotent(self, raw):
        try:
            first = canonicalize_feature(raw, FeatureOrigin.CRITIC_LIST)
        except EmptyFeature:
            return
        second = canonicalize_feature(first.display, FeatureOrigin.CRITIC_LIST)
        assert second.key == first.key
        assert second.display == first.display

    @given(st.text(min_size=1), st.text(min_size=1))
    def test_matching_is_key_equality(self, a, b):
        try:
            fa = canonicalize_feature(a, FeatureOrigin.CRITIC_LIST)
            fb = canonicalize_feature(b, FeatureOrigin.CRITIC_LIST)
        except EmptyFeature:
            return
        assert (fa.key == fb.key) == (canonical_key(a) == canonical_key(b))


class TestRoundTrip:
    def test_empty_dataset(self, tmp_path):
        path = tmp_path / "empty.jsonl"
        write_records(path, [])
        assert read_records(path) == []

    def test_single_record(self, tmp_path):
        record = parse_record(minimal_raw(ground_truth_text="A fine home."))
        path = tmp_path / "one.jsonl"
        write_records(path, [record])
        assert read_records(path) == [record]

    def test_thousand_synthetic_records(self, tmp_path):
        records = make_corpus(1000, seed=11)
        path = tmp_path / "corpus.jsonl"
        write_records(path, records)
        loaded = read_records(path)
        assert loaded == records  # structural equality, stable order

    def test_duplicate_record_id_rejected(self, tmp_path):
        record = parse_record(minimal_raw())
        path = tmp_path / "dup.jsonl"
        write_records(path, [record, record])
        with pytest.raises(SchemaError):
            read_records(path)


@st.composite
def structured_strategy(draw):
    field = st.text(
        alphabet=st.characters(blacklist_categories=("Cs", "Cc")), min_size=1, max_size=12
    ).filter(lambda s: s.strip())
    if draw(st.booleans()):
        rows = draw(st.lists(st.tuples(field, field, field), min_size=1, max_size=4))
        return StructuredData.kg(rows)
    rows = draw(st.lists(st.tuples(field, field), min_size=1, max_size=4))
    return StructuredData.table(rows)


@settings(max_examples=60)
@given(structured_strategy())
def test_serialization_bijection_over_random_records(tmp_path_factory, structured):
    record = MixedModalRecord(
        record_id="r1",
        structured=structured,
        images=(
            ImageRef(
                id="img0",
                uri="img0.png",
                manifest=MockManifest(visible=("fence",), salient=("fence",)),
            ),
        ),
        ground_truth_text="It features fence.",
    )
    path = tmp_path_factory.mktemp("bijection") / "r.jsonl"
    write_records(path, [record])
    assert read_records(path) == [record]
