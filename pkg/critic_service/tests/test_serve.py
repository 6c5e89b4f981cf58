from __future__ import annotations

import base64
import json

import pytest
import requests

from critic_service.serve import CriticServer

LABELS = {"salient", "non-salient", "hallucinated"}


@pytest.fixture(scope="module")
def server(trained_world):
    with CriticServer(
        classifier_dir=trained_world["classifier_ckpt"],
        lister_dir=trained_world["lister_ckpt"],
    ) as live:
        yield live, trained_world


def post(server, path, payload):
    if isinstance(payload, dict):
        payload = json.dumps(payload).encode("utf-8")
    return requests.post(server.endpoint + path, data=payload, timeout=60)


def b64(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


class TestClassifyEndpoint:
    def test_well_formed_request_gets_schema_valid_verdict(self, server):
        live, world = server
        image = world["classifier_resolver"].resolve("memo0")
        resp = post(live, "/v1/classify", {"image": b64(image), "feature": "picket fence"})
        assert resp.status_code == 200
        body = resp.json()
        assert set(body) == {"label", "rationale"}
        assert body["label"] in LABELS
        assert isinstance(body["rationale"], str) and body["rationale"]

    def test_memorized_labels_recovered(self, server):
        live, world = server
        correct = 0
        for row in world["classifier_rows"]:
            image = world["classifier_resolver"].resolve(row["image_id"])
            resp = post(live, "/v1/classify", {"image": b64(image), "feature": row["feature"]})
            assert resp.status_code == 200
            correct += resp.json()["label"] == row["label"]
        assert correct >= 9

    def test_missing_feature_is_400(self, server):
        live, world = server
        image = world["classifier_resolver"].resolve("memo0")
        assert post(live, "/v1/classify", {"image": b64(image)}).status_code == 400

    def test_empty_feature_is_400(self, server):
        live, world = server
        image = world["classifier_resolver"].resolve("memo0")
        resp = post(live, "/v1/classify", {"image": b64(image), "feature": "  "})
        assert resp.status_code == 400

    def test_bad_base64_is_400(self, server):
        live, _ = server
        resp = post(live, "/v1/classify", {"image": "###", "feature": "fence"})
        assert resp.status_code == 400

    def test_extra_key_is_400(self, server):
        live, world = server
        image = world["classifier_resolver"].resolve("memo0")
        resp = post(
            live, "/v1/classify", {"image": b64(image), "feature": "f", "why": "not"}
        )
        assert resp.status_code == 400


class TestSalientEndpoint:
    def test_memorized_image_lists_trained_features(self, server):
        live, world = server
        exact = 0
        for row in world["lister_rows"]:
            image = world["lister_resolver"].resolve(row["image_id"])
            resp = post(live, "/v1/salient", {"image": b64(image)})
            assert resp.status_code == 200
            exact += resp.json()["features"] == row["salient_features"]
        assert exact >= 3

    def test_unknown_image_still_schema_valid(self, server):
        live, _ = server
        resp = post(live, "/v1/salient", {"image": b64(b"never seen this")})
        assert resp.status_code == 200
        features = resp.json()["features"]
        assert isinstance(features, list)
        assert all(isinstance(f, str) for f in features)

    def test_not_json_is_400(self, server):
        live, _ = server
        assert post(live, "/v1/salient", b"<xml/>").status_code == 400


def test_unknown_path_is_404(server):
    live, _ = server
    assert post(live, "/v1/unknown", {}).status_code == 404


def test_single_checkpoint_serves_both_endpoints(trained_world):
    with CriticServer(classifier_dir=trained_world["classifier_ckpt"]) as live:
        image = trained_world["classifier_resolver"].resolve("memo0")
        resp = post(live, "/v1/salient", {"image": b64(image)})
        assert resp.status_code == 200
        assert isinstance(resp.json()["features"], list)
