"""Adapter fine-tuning on the two critic tasks.

Both tasks are trained as conditional generation with token-level
cross-entropy computed on the target span only; the prompt (the feature
being judged, or the fixed listing instruction) and the image conditioning
are never part of the loss.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import torch

from . import data as D
from .errors import CheckpointError, DatasetSchemaError, NonFiniteLoss
from .model import TinyVLM, build_model, pack_image

TASKS = ("classifier", "lister")


@dataclass(slots=True)
class TrainerConfig:
    task: str
    epochs: int = 25
    batch_size: int = 16
    learning_rate: float = 5e-5
    max_output_tokens: int = 350
    lora_rank: int = 16
    lora_alpha: int = 32
    lora_dropout: float = 0.05
    seed: int = 0
    base_model: str = "tiny-bytelm"
    device: str = "cpu"

    def __post_init__(self):
        if self.task not in TASKS:
            raise DatasetSchemaError(f"task must be one of {TASKS}, got {self.task!r}")
        if min(self.epochs, self.batch_size, self.max_output_tokens, self.lora_rank) <= 0:
            raise DatasetSchemaError("epochs, batch_size, max_output_tokens, rank must be positive")
        if self.learning_rate <= 0:
            raise DatasetSchemaError("learning_rate must be positive")


@dataclass(slots=True)
class TrainingRun:
    config: TrainerConfig
    train_losses: list[float] = field(default_factory=list)
    val_losses: list[float] = field(default_factory=list)
    checkpoint: str | None = None
    dataset_digests: dict = field(default_factory=dict)


def load_examples(config: TrainerConfig, path):
    if config.task == "classifier":
        return D.load_classification(path)
    return D.load_salient(path)


def _encode_example(example, resolver: D.ImageResolver, config: TrainerConfig, model: TinyVLM):
    prompt = D.encode_text(example.prompt)
    target = D.encode_text(example.target)[: config.max_output_tokens]
    seq = prompt + [D.BOS] + target + [D.EOS]
    labels = [-100] * len(seq)
    for i in range(len(prompt) + 1, len(seq)):
        labels[i] = seq[i]
    image_ids, image_mask = pack_image(
        resolver.resolve(example.image_id), model.dims.max_image_bytes
    )
    return seq, labels, image_ids[0], image_mask[0]


def _batches(encoded, batch_size, generator):
    order = torch.randperm(len(encoded), generator=generator).tolist()
    for start in range(0, len(encoded), batch_size):
        yield [encoded[i] for i in order[start : start + batch_size]]


def _collate(batch, device):
    width = max(len(seq) for seq, *_ in batch)
    token_ids = torch.full((len(batch), width), D.PAD, dtype=torch.long)
    labels = torch.full((len(batch), width), -100, dtype=torch.long)
    images = torch.stack([img for *_, img, _ in batch])
    masks = torch.stack([mask for *_, mask in batch])
    for row, (seq, lab, _, _) in enumerate(batch):
        token_ids[row, : len(seq)] = torch.tensor(seq, dtype=torch.long)
        labels[row, : len(lab)] = torch.tensor(lab, dtype=torch.long)
    return (
        images.to(device),
        masks.to(device),
        token_ids.to(device),
        labels.to(device),
    )


def _epoch_loss(model, encoded, config, device, generator=None, optimizer=None):
    total, batches = 0.0, 0
    gen = generator or torch.Generator().manual_seed(0)
    for batch in _batches(encoded, config.batch_size, gen):
        images, masks, token_ids, labels = _collate(batch, device)
        loss = model.loss_batch(images, masks, token_ids, labels)
        value = float(loss.detach())
        if not math.isfinite(value):
            raise NonFiniteLoss(f"loss became {value}")
        if optimizer is not None:
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
        total += value
        batches += 1
    return total / max(batches, 1)


def train(
    config: TrainerConfig,
    train_path,
    resolver: D.ImageResolver,
    val_path=None,
    out_dir=None,
) -> TrainingRun:
    """Fine-tune the adapters; persists a loadable checkpoint when out_dir is set."""
    examples = load_examples(config, train_path)
    model = build_model(
        config.base_model, config.lora_rank, config.lora_alpha, config.lora_dropout, config.seed
    )
    device = torch.device(config.device)
    model.to(device)
    encoded = [_encode_example(e, resolver, config, model) for e in examples]
    val_encoded = None
    if val_path is not None:
        val_encoded = [
            _encode_example(e, resolver, config, model)
            for e in load_examples(config, val_path)
        ]

    optimizer = torch.optim.Adam(model.adapter_parameters(), lr=config.learning_rate)
    run = TrainingRun(config=config, dataset_digests={"train": D.dataset_digest(train_path)})
    if val_path is not None:
        run.dataset_digests["val"] = D.dataset_digest(val_path)

    for epoch in range(config.epochs):
        generator = torch.Generator().manual_seed(config.seed * 100003 + epoch)
        model.train()
        run.train_losses.append(
            _epoch_loss(model, encoded, config, device, generator, optimizer)
        )
        if val_encoded:
            model.eval()
            with torch.no_grad():
                run.val_losses.append(_epoch_loss(model, val_encoded, config, device))

    if out_dir is not None:
        run.checkpoint = str(save_checkpoint(model, config, run, out_dir))
    return run


# ---------------------------------------------------------------------------
# Checkpoints: full weights + adapter-only weights + config digest + vocab


def save_checkpoint(model: TinyVLM, config: TrainerConfig, run: TrainingRun, out_dir) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    torch.save(model.state_dict(), out_dir / "model.pt")
    adapters = {
        name: tensor
        for name, tensor in model.state_dict().items()
        if "lora_a" in name or "lora_b" in name
    }
    torch.save(adapters, out_dir / "adapters.pt")
    meta = {
        "config": asdict(config),
        "dataset_digests": run.dataset_digests,
        "train_losses": run.train_losses,
        "val_losses": run.val_losses,
    }
    (out_dir / "config.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    (out_dir / "tokenizer.json").write_text(
        json.dumps(
            {"kind": "byte", "vocab_size": D.VOCAB_SIZE, "bos": D.BOS, "eos": D.EOS, "pad": D.PAD}
        )
    )
    return out_dir


def load_checkpoint(ckpt_dir) -> tuple[TinyVLM, TrainerConfig]:
    ckpt_dir = Path(ckpt_dir)
    meta_path = ckpt_dir / "config.json"
    weights_path = ckpt_dir / "model.pt"
    if not meta_path.exists() or not weights_path.exists():
        raise CheckpointError(f"not a checkpoint directory: {ckpt_dir}")
    meta = json.loads(meta_path.read_text())
    config = TrainerConfig(**meta["config"])
    model = build_model(
        config.base_model, config.lora_rank, config.lora_alpha, config.lora_dropout, config.seed
    )
    state = torch.load(weights_path, map_location="cpu", weights_only=True)
    model.load_state_dict(state)
    model.eval()
    return model, config


# ---------------------------------------------------------------------------
# Label prediction used by evaluation and the server


def predict_label(model: TinyVLM, image: bytes, feature: str) -> str:
    """Pick the label whose canonical continuation scores highest.

    Scores are length-normalized log-probabilities of ``label: <L>`` so the
    longer label strings are not penalized.
    """
    image_ids, image_mask = pack_image(image, model.dims.max_image_bytes)
    prompt = D.encode_text(D.CLASSIFIER_PROMPT.format(feature=feature))
    best_label, best_score = None, -math.inf
    for label in D.LABELS:
        continuation = D.encode_text(f"label: {label}")
        score = model.score_continuation(image_ids, image_mask, prompt, continuation)
        score /= len(continuation)
        if score > best_score:
            best_label, best_score = label, score
    return best_label
