from __future__ import annotations

import pytest
import torch
import torch.nn.functional as F

from critic_service.data import BOS, EOS, VOCAB_SIZE, encode_text
from critic_service.errors import ModelUnavailable
from critic_service.model import LoraLinear, TinyVLM, build_model, pack_image


@pytest.fixture(scope="module")
def model() -> TinyVLM:
    torch.manual_seed(0)
    return TinyVLM(rank=8, alpha=16, dropout=0.0)


def example_batch(model, prompt="feature: fence\nanswer:", target="label: salient"):
    prompt_ids = encode_text(prompt)
    target_ids = encode_text(target)
    seq = prompt_ids + [BOS] + target_ids + [EOS]
    labels = [-100] * len(seq)
    for i in range(len(prompt_ids) + 1, len(seq)):
        labels[i] = seq[i]
    images, masks = pack_image(b"some image bytes", model.dims.max_image_bytes)
    token_ids = torch.tensor([seq], dtype=torch.long)
    label_ids = torch.tensor([labels], dtype=torch.long)
    return images, masks, token_ids, label_ids, len(prompt_ids)


class TestAdapters:
    def test_only_lora_parameters_trainable(self, model):
        trainable = {n for n, p in model.named_parameters() if p.requires_grad}
        assert trainable
        assert all("lora_a" in n or "lora_b" in n for n in trainable)

    def test_adapters_cover_qformer_and_decoder_and_head(self, model):
        trainable = {n for n, p in model.named_parameters() if p.requires_grad}
        assert any(n.startswith("qformer.") for n in trainable)
        assert any(n.startswith("decoder.") for n in trainable)
        assert any(n.startswith("head.") for n in trainable)

    def test_fresh_adapters_are_identity(self):
        torch.manual_seed(1)
        layer = LoraLinear(16, 8, rank=4, alpha=8, dropout=0.0)
        x = torch.randn(3, 16)
        assert torch.allclose(layer(x), layer.base(x))


class TestLossMasking:
    def test_loss_only_over_target_tokens(self, model):
        images, masks, token_ids, labels, prompt_len = example_batch(model)
        with torch.no_grad():
            logits = model.token_logits(images, masks, token_ids)
            loss = model.loss_batch(images, masks, token_ids, labels)

        shifted = labels[:, 1:]
        manual = F.cross_entropy(
            logits.reshape(-1, VOCAB_SIZE), shifted.reshape(-1), ignore_index=-100
        )
        assert torch.allclose(loss, manual)

        # perturbing logits at prompt (masked) positions leaves the loss unchanged
        perturbed = logits.clone()
        masked_positions = (shifted[0] == -100).nonzero().flatten()
        assert len(masked_positions) > 0
        perturbed[0, masked_positions] = torch.randn_like(perturbed[0, masked_positions])
        after = F.cross_entropy(
            perturbed.reshape(-1, VOCAB_SIZE), shifted.reshape(-1), ignore_index=-100
        )
        assert torch.allclose(manual, after)

        # perturbing a target-position logit does change the loss
        target_positions = (shifted[0] != -100).nonzero().flatten()
        perturbed2 = logits.clone()
        perturbed2[0, target_positions[0], 0] += 5.0
        changed = F.cross_entropy(
            perturbed2.reshape(-1, VOCAB_SIZE), shifted.reshape(-1), ignore_index=-100
        )
        assert not torch.allclose(manual, changed)


class TestInference:
    def test_generate_is_deterministic_and_bounded(self, model):
        images, masks, *_ = example_batch(model)
        prompt = encode_text("feature: fence\nanswer:")
        a = model.generate(images, masks, prompt, max_new_tokens=16)
        b = model.generate(images, masks, prompt, max_new_tokens=16)
        assert a == b
        assert len(a) <= 16
        assert all(0 <= t < VOCAB_SIZE for t in a)

    def test_score_continuation_finite_order(self, model):
        images, masks, *_ = example_batch(model)
        prompt = encode_text("feature: fence\nanswer:")
        score = model.score_continuation(images, masks, prompt, encode_text("label: salient"))
        assert score < 0.0  # log-probability of a multi-token continuation

    def test_pack_image_clips_and_pads(self, model):
        width = model.dims.max_image_bytes
        ids, mask = pack_image(b"\x01" * (width + 50), width)
        assert ids.shape == (1, width)
        assert bool(mask.all())
        ids, mask = pack_image(b"\x01\x02", width)
        assert int(mask.sum()) == 2


def test_unknown_base_model_rejected():
    with pytest.raises(ModelUnavailable):
        build_model("frontier-vlm-7b", 16, 32, 0.05, seed=0)
