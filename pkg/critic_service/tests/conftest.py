from __future__ import annotations

import pytest

import toyworld
from critic_service.data import ImageResolver
from critic_service.train import TrainerConfig, train


@pytest.fixture(scope="session")
def trained_world(tmp_path_factory):
    """One memorization-trained checkpoint per task, shared across tests."""
    root = tmp_path_factory.mktemp("trained-world")

    cls_path, cls_images, cls_rows = toyworld.memorization_set(root)
    cls_resolver = ImageResolver(images_dir=cls_images)
    cls_config = TrainerConfig(
        task="classifier",
        epochs=30,
        batch_size=16,
        learning_rate=3e-2,
        seed=5,
        max_output_tokens=64,
    )
    train(cls_config, cls_path, cls_resolver, out_dir=root / "ckpt-classifier")

    list_path, list_images, list_rows = toyworld.lister_set(root, n=4)
    list_resolver = ImageResolver(images_dir=list_images)
    list_config = TrainerConfig(
        task="lister",
        epochs=200,
        batch_size=16,
        learning_rate=1e-2,
        seed=5,
        max_output_tokens=64,
    )
    train(list_config, list_path, list_resolver, out_dir=root / "ckpt-lister")

    return {
        "root": root,
        "classifier_ckpt": root / "ckpt-classifier",
        "classifier_rows": cls_rows,
        "classifier_resolver": cls_resolver,
        "lister_ckpt": root / "ckpt-lister",
        "lister_rows": list_rows,
        "lister_resolver": list_resolver,
    }
