from __future__ import annotations

import itertools

import numpy as np
import pytest

from adcritic.backends import MockBackend
from adcritic.cache import FileCache
from adcritic.core import (
    HALLUCINATED_RATIONALE,
    FeatureLabel,
    FeatureOrigin,
    ImageRef,
    MockManifest,
    canonicalize_feature,
)
from adcritic.enums import ModelRole
from adcritic.errors import BackendUnavailable, CacheCorrupt, SchemaError
from adcritic.gateway import (
    Gateway,
    ModelRequest,
    canonical_request_bytes,
    request_cache_key,
)
from adcritic.prompts import TemplateId


def img(i, visible=(), salient=()):
    return ImageRef(
        id=f"img{i}",
        uri=f"img{i}.png",
        manifest=MockManifest(visible=tuple(visible), salient=tuple(salient)),
    )


def feature(text):
    return canonicalize_feature(text, FeatureOrigin.GENERATED_TEXT)


class FailingBackend:
    id = "failing:down"

    def __init__(self):
        self.calls = 0

    def invoke(self, req):
        self.calls += 1
        raise BackendUnavailable("connection refused")


class TestComplete:
    def test_second_call_served_from_cache(self, gateway, engine):
        prompt = engine.render(TemplateId.EXTRACT_FEATURES, {"sentence": "It features a shed."})
        req = gateway.request(ModelRole.EXTRACTOR_LLM, prompt=prompt)
        first = gateway.complete(req)
        second = gateway.complete(req)
        assert first == second
        assert gateway.stats.backend_calls == 1
        assert gateway.stats.hits == 1

    def test_scripted_fixture(self, gateway, engine, mock_backend):
        mock_backend.script(ModelRole.EXTRACTOR_LLM, "scripted answer")
        prompt = engine.render(TemplateId.EXTRACT_FEATURES, {"sentence": "x"})
        req = gateway.request(ModelRole.EXTRACTOR_LLM, prompt=prompt)
        assert gateway.complete(req) == "scripted answer"

    def test_backend_down_no_cache(self, tmp_path, engine):
        gw = Gateway(
            {ModelRole.EXTRACTOR_LLM: FailingBackend()}, FileCache(tmp_path / "c")
        )
        prompt = engine.render(TemplateId.EXTRACT_FEATURES, {"sentence": "x"})
        req = gw.request(ModelRole.EXTRACTOR_LLM, prompt=prompt)
        with pytest.raises(BackendUnavailable):
            gw.complete(req)

    def test_unconfigured_role(self, tmp_path):
        gw = Gateway({}, FileCache(tmp_path / "c"))
        with pytest.raises(BackendUnavailable):
            gw.backend_for(ModelRole.EXTRACTOR_LLM)

    def test_per_role_retry_override(self, tmp_path, engine):
        backend = FailingBackend()
        gw = Gateway(
            {ModelRole.EXTRACTOR_LLM: backend},
            FileCache(tmp_path / "c"),
            max_retries=1,
            role_retries={ModelRole.EXTRACTOR_LLM: 3},
        )
        prompt = engine.render(TemplateId.EXTRACT_FEATURES, {"sentence": "x"})
        with pytest.raises(BackendUnavailable):
            gw.complete(gw.request(ModelRole.EXTRACTOR_LLM, prompt=prompt))
        assert backend.calls == 4  # 1 attempt + 3 role-specific retries

    def test_warm_cache_survives_backend_outage(self, tmp_path, engine, mock_backend):
        cache = FileCache(tmp_path / "c")
        prompt = engine.render(TemplateId.EXTRACT_FEATURES, {"sentence": "It features a shed."})
        warm = Gateway({ModelRole.EXTRACTOR_LLM: mock_backend}, cache)
        warm_req = warm.request(ModelRole.EXTRACTOR_LLM, prompt=prompt)
        expected = warm.complete(warm_req)

        failing = FailingBackend()
        failing.id = mock_backend.id  # same backend identity, dead transport
        cold = Gateway({ModelRole.EXTRACTOR_LLM: failing}, cache)
        req = cold.request(ModelRole.EXTRACTOR_LLM, prompt=prompt)
        assert cold.complete(req) == expected
        assert cold.stats.backend_calls == 0


class TestCacheKeys:
    def test_key_stable_across_constructions(self, engine):
        prompt = engine.render(TemplateId.EXTRACT_FEATURES, {"sentence": "s"})
        a = ModelRequest(
            role=ModelRole.EXTRACTOR_LLM, backend_id="mock:world-v1", prompt=prompt
        )
        b = ModelRequest(
            role=ModelRole.EXTRACTOR_LLM, backend_id="mock:world-v1", prompt=prompt
        )
        assert request_cache_key(a) == request_cache_key(b)

    def test_key_frozen_value(self):
        """Canonical serialization is pinned; a change here breaks old caches."""
        req = ModelRequest(
            role=ModelRole.TEXT_EMBEDDER, backend_id="mock:world-v1", text="hello"
        )
        assert canonical_request_bytes(req) == (
            b'{"backend_id":"mock:world-v1","feature":null,"images":[],'
            b'"prompt":null,"role":"text_embedder","text":"hello"}'
        )
        # sha256(backend_id \0 role \0 canonical bytes), computed by hand once
        assert (
            request_cache_key(req)
            == "d7408a66ddcf9ba447c361fb02ff91d43eb6d9cd3b717ebe3d50e4a654044d09"
        )

    def test_different_backends_do_not_collide(self):
        a = ModelRequest(role=ModelRole.TEXT_EMBEDDER, backend_id="a", text="x")
        b = ModelRequest(role=ModelRole.TEXT_EMBEDDER, backend_id="b", text="x")
        assert request_cache_key(a) != request_cache_key(b)

    def test_corrupt_entry_detected(self, tmp_path):
        cache = FileCache(tmp_path / "c")
        cache.put("deadbeef", b"req", b"resp")
        with pytest.raises(CacheCorrupt):
            cache.entry("cafebabe")
        entry = cache.entry("deadbeef")
        assert entry.response == b"resp"
        assert entry.request_echo == b"req"


class TestClassifyFeature:
    def test_salient_in_any_image(self, gateway):
        images = [img(0, visible=["fence"], salient=["fence"]), img(1)]
        verdict = gateway.classify_feature(images, feature("fence"))
        assert verdict.label is FeatureLabel.SALIENT

    def test_visible_but_not_salient(self, gateway):
        images = [img(0, visible=["small tree"]), img(1)]
        verdict = gateway.classify_feature(images, feature("small tree"))
        assert verdict.label is FeatureLabel.NON_SALIENT

    def test_absent_everywhere_is_hallucinated(self, gateway):
        images = [img(0, visible=["fence"]), img(1, visible=["shed"])]
        verdict = gateway.classify_feature(images, feature("swimming pool"))
        assert verdict.label is FeatureLabel.HALLUCINATED
        assert verdict.rationale == HALLUCINATED_RATIONALE

    def test_aggregation_order_independent(self, gateway):
        images = [
            img(0, visible=["fence"]),
            img(1, visible=["fence"], salient=["fence"]),
            img(2),
        ]
        expected = gateway.classify_feature(images, feature("fence"))
        for perm in itertools.permutations(images):
            assert gateway.classify_feature(list(perm), feature("fence")) == expected

    def test_text_grammar_fallback(self, gateway, mock_backend):
        mock_backend.script(
            ModelRole.CRITIC_CLASSIFIER, "label: salient | rationale: Looks great."
        )
        verdict = gateway.classify_feature([img(0)], feature("fence"))
        assert verdict.label is FeatureLabel.SALIENT
        assert verdict.rationale == "Looks great."


class TestListSalient:
    def test_manifest_order(self, gateway):
        image = img(0, visible=["picket fence", "verandah", "shed"], salient=["picket fence", "verandah"])
        features = gateway.list_salient(image)
        assert [f.key for f in features] == ["picket fence", "verandah"]

    def test_empty_manifest(self, gateway):
        assert gateway.list_salient(img(0)) == []

    def test_scripted_bracket_fixture(self, gateway, mock_backend):
        mock_backend.script(ModelRole.CRITIC_LISTER, "[white porch]; [garden]")
        features = gateway.list_salient(img(0))
        assert [f.display for f in features] == ["white porch", "garden"]


class TestEmbeddings:
    def test_deterministic(self, gateway):
        a = gateway.embed_text("a fine house")
        b = gateway.embed_text("a fine house")
        assert a == b

    def test_self_similarity(self, gateway):
        v = gateway.embed_text("verandah").as_array()
        assert np.dot(v, v) == pytest.approx(1.0, abs=1e-6)

    def test_image_embedding_unit_norm(self, gateway):
        vec = gateway.embed_image(img(3)).as_array()
        assert np.linalg.norm(vec) == pytest.approx(1.0, abs=1e-6)

    def test_empty_text_rejected(self, gateway):
        with pytest.raises(SchemaError):
            gateway.embed_text("")


class TestRequestInvariants:
    def test_text_role_requires_prompt(self):
        with pytest.raises(SchemaError):
            ModelRequest(role=ModelRole.EXTRACTOR_LLM, backend_id="x")

    def test_classifier_requires_feature(self):
        with pytest.raises(SchemaError):
            ModelRequest(role=ModelRole.CRITIC_CLASSIFIER, backend_id="x", images=(img(0),))

    def test_lister_requires_exactly_one_image(self):
        with pytest.raises(SchemaError):
            ModelRequest(
                role=ModelRole.CRITIC_LISTER, backend_id="x", images=(img(0), img(1))
            )
