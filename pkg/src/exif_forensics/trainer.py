"""Symmetric patch/metadata contrastive training, CropCLR and supervision ablations."""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .config import ModelConfig, TrainConfig
from .encoders import (
    Checkpoint,
    ExifTokenizer,
    build_model,
    compute_pixel_stats,
    pad_batch,
    save_checkpoint,
    to_pixels,
)
from .errors import DataError, NonFiniteInputError, UnknownTagError, UsageError
from .exif_metadata import (
    CanonicalText,
    ExifRecord,
    load_registry,
    passes_training_filter,
    serialize,
)
from .models import TrainLogRecord
from .patches import PatchSpec, random_crop

logger = logging.getLogger(__name__)


@dataclass
class TrainingExample:
    source_id: str
    image: np.ndarray
    record: ExifRecord | None = None
    caption: str | None = None


@dataclass
class CropPairBatch:
    """Two crops per image; crop i of ``first`` and crop i of ``second`` are positives."""

    source_ids: list[str]
    first: np.ndarray
    second: np.ndarray
    first_specs: list[PatchSpec]
    second_specs: list[PatchSpec]

    def __len__(self) -> int:
        return len(self.source_ids)


@dataclass
class TrainOutcome:
    checkpoint: Checkpoint
    records: list[TrainLogRecord] = field(default_factory=list)

    @property
    def step_losses(self) -> list[float]:
        return [r.loss for r in self.records if r.event == "step"]

    @property
    def epoch_records(self) -> list[TrainLogRecord]:
        return [r for r in self.records if r.event == "epoch"]


def _as_logits(sim, tau: float) -> torch.Tensor:
    if tau <= 0:
        raise UsageError(f"Temperature must be positive, got {tau}")
    sim = torch.as_tensor(sim)
    if sim.ndim != 2 or sim.shape[0] != sim.shape[1]:
        raise UsageError(f"Similarity matrix must be square, got shape {tuple(sim.shape)}")
    if not torch.isfinite(sim).all():
        raise NonFiniteInputError("similarity matrix")
    return sim / tau


def info_nce_vm(sim, tau: float) -> torch.Tensor:
    """
    Row-wise InfoNCE: mean over rows of -log softmax(sim / tau) at the diagonal.

    ``sim[i, j]`` is the dot product of patch i with text j. Accepts arrays or
    tensors; tensors keep their autograd graph.
    """
    logits = _as_logits(sim, tau)
    targets = torch.arange(logits.shape[0], device=logits.device)
    return F.cross_entropy(logits, targets)


def combined_loss(sim, tau: float) -> torch.Tensor:
    """Patch-to-text plus text-to-patch InfoNCE."""
    sim = torch.as_tensor(sim)
    return info_nce_vm(sim, tau) + info_nce_vm(sim.T, tau)


def in_batch_retrieval_accuracy(sim) -> float:
    """Fraction of rows whose best-scoring column is their own pair."""
    sim = torch.as_tensor(sim)
    best = sim.argmax(dim=1)
    return float((best == torch.arange(sim.shape[0])).float().mean())


def supervision_text(
    record: ExifRecord | None,
    mode: str,
    tag: str | None = None,
    caption: str | None = None,
    order: str = "fixed",
    names: bool = True,
    rng: np.random.Generator | None = None,
) -> CanonicalText | None:
    """
    Text paired with an image under a supervision mode.

    Returns None when the example has nothing to offer (tag absent, no caption),
    in which case the caller skips it.
    """
    if mode == "full-exif":
        if record is None or len(record) == 0:
            return None
        return serialize(record, order=order, names=names, rng=rng)
    if mode == "single-tag":
        if not tag:
            raise UsageError("single-tag supervision needs supervision_tag")
        value = record.get(tag) if record is not None else None
        if value is None:
            return None
        single = ExifRecord(tags=[(tag, value)], source_id=record.source_id)
        return serialize(single, order="fixed", names=names)
    if mode == "description":
        if not caption or not caption.strip():
            return None
        return CanonicalText(text=caption, order="fixed", names=False)
    raise UsageError(f"Supervision mode {mode!r} has no text side")


def _has_two_origins(image: np.ndarray, side: int) -> bool:
    height, width = image.shape[:2]
    return height >= side and width >= side and (height - side + 1) * (width - side + 1) >= 2


def cropclr_batch(
    images: Sequence[tuple[str, np.ndarray]], side: int, rng: np.random.Generator
) -> CropPairBatch:
    """
    Draw two crops with different origins from each image.

    Images that cannot hold two distinct crop origins are skipped with a warning.

    Raises:
        DataError: If a source id repeats or fewer than two images remain
    """
    ids = [source_id for source_id, _ in images]
    if len(set(ids)) != len(ids):
        raise DataError(
            "CropCLR batches need distinct source images",
            error_code="DUPLICATE_SOURCE",
        )

    kept, first, second, first_specs, second_specs = [], [], [], [], []
    for source_id, image in images:
        if not _has_two_origins(image, side):
            logger.warning(f"Skipping {source_id}: too small for two {side}px crops")
            continue
        spec_a, block_a = random_crop(image, side, rng, source_id)
        while True:
            spec_b, block_b = random_crop(image, side, rng, source_id)
            if (spec_b.x, spec_b.y) != (spec_a.x, spec_a.y):
                break
        kept.append(source_id)
        first.append(block_a)
        second.append(block_b)
        first_specs.append(spec_a)
        second_specs.append(spec_b)

    if len(kept) < 2:
        raise DataError(f"CropCLR needs at least 2 usable images, got {len(kept)}")
    return CropPairBatch(
        source_ids=kept,
        first=np.stack(first),
        second=np.stack(second),
        first_specs=first_specs,
        second_specs=second_specs,
    )


def _usable_examples(
    examples: Sequence[TrainingExample], config: TrainConfig, side: int
) -> list[TrainingExample]:
    seen: set[str] = set()
    usable = []
    for example in examples:
        if example.source_id in seen:
            logger.warning(f"Duplicate source id {example.source_id}; keeping the first")
            continue
        seen.add(example.source_id)
        height, width = example.image.shape[:2]
        if config.supervision == "cropclr":
            if not _has_two_origins(example.image, side):
                logger.warning(f"Skipping {example.source_id}: too small for CropCLR")
                continue
        elif height < side or width < side:
            logger.warning(f"Skipping {example.source_id}: smaller than {side}px")
            continue
        if config.supervision == "full-exif" and (
            example.record is None or not passes_training_filter(example.record)
        ):
            continue
        if config.supervision in ("single-tag", "description") and supervision_text(
            example.record, config.supervision, config.supervision_tag, example.caption
        ) is None:
            logger.warning(f"Skipping {example.source_id}: no {config.supervision} text")
            continue
        usable.append(example)
    return usable


def _fit_texts(examples: Sequence[TrainingExample], config: TrainConfig) -> list[str]:
    texts = [" ".join(load_registry().names)]
    if config.supervision == "cropclr":
        return texts
    for example in examples:
        text = supervision_text(
            example.record,
            config.supervision,
            config.supervision_tag,
            example.caption,
            order="fixed",
            names=True,
        )
        if text is not None:
            texts.append(text.text)
    return texts


@dataclass
class _Batch:
    patches: np.ndarray
    others: np.ndarray | None = None
    tokens: list[list[int]] | None = None


def _epoch_schedule(
    examples: Sequence[TrainingExample],
    config: TrainConfig,
    side: int,
    tokenize: Callable[[str], list[int]],
    rng: np.random.Generator,
) -> list[_Batch]:
    order = rng.permutation(len(examples))
    batches = []
    for start in range(0, len(order), config.batch_size):
        chosen = [examples[i] for i in order[start : start + config.batch_size]]
        if len(chosen) < 2:
            continue
        if config.supervision == "cropclr":
            pairs = cropclr_batch([(e.source_id, e.image) for e in chosen], side, rng)
            batches.append(_Batch(patches=pairs.first, others=pairs.second))
            continue
        blocks, tokens = [], []
        for example in chosen:
            _, block = random_crop(example.image, side, rng, example.source_id)
            text = supervision_text(
                example.record,
                config.supervision,
                config.supervision_tag,
                example.caption,
                order=config.tag_order,
                names=config.tag_names,
                rng=rng,
            )
            blocks.append(block)
            tokens.append(tokenize(text.text))
        batches.append(_Batch(patches=np.stack(blocks), tokens=tokens))
    return batches


def train(
    examples: Sequence[TrainingExample],
    model_config: ModelConfig,
    train_config: TrainConfig,
    rng: np.random.Generator,
    log_path: Path | None = None,
    checkpoint_path: Path | None = None,
    resume: Checkpoint | None = None,
) -> TrainOutcome:
    """
    Optimize the symmetric contrastive objective over random crops.

    Each epoch shuffles the examples into batches of distinct source images and
    crops one patch per image. Step and epoch records are appended to
    ``log_path`` as JSON Lines when given.

    Args:
        examples: Training images with their EXIF records or captions
        model_config: Encoder sizes (ignored when resuming)
        train_config: Optimization recipe and supervision mode
        rng: Source of all sampling randomness, including weight initialization
        log_path: Optional JSON Lines training log
        checkpoint_path: Optional path for the final checkpoint
        resume: Checkpoint whose weights, optimizer state and step count continue

    Returns:
        TrainOutcome with the final checkpoint and all log records

    Raises:
        DataError: If no usable examples remain after filtering
    """
    if train_config.supervision == "single-tag":
        if not train_config.supervision_tag:
            raise UsageError("single-tag supervision needs train.supervision_tag")
        if train_config.supervision_tag not in load_registry().names:
            raise UnknownTagError(train_config.supervision_tag)

    if resume is not None:
        model_config = resume.model_config
    side = model_config.patch_side

    usable = _usable_examples(examples, train_config, side)
    if len(usable) < 2:
        raise DataError(
            f"Need at least 2 usable training images, got {len(usable)} of {len(examples)}",
            suggestion="Check the manifest filter decisions and the patch side",
            error_code="EMPTY_TRAINING_SET",
        )
    logger.info(
        f"Training on {len(usable)} images ({train_config.supervision}, "
        f"{train_config.epochs} epochs, batch {train_config.batch_size})"
    )

    torch.manual_seed(int(rng.integers(2**31)))
    if resume is not None:
        tokenizer, model = resume.tokenizer, resume.model
        pixel_mean, pixel_std = resume.pixel_mean, resume.pixel_std
        step = int(resume.train_state.get("step", 0))
        first_epoch = int(resume.train_state.get("epoch", 0))
    else:
        tokenizer = ExifTokenizer.fit(
            _fit_texts(usable, train_config), model_config.vocab_size, model_config.max_tokens
        )
        model = build_model(model_config, tokenizer)
        pixel_mean, pixel_std = compute_pixel_stats(e.image for e in usable)
        step, first_epoch = 0, 0

    optimizer = torch.optim.AdamW(
        model.parameters(),
        lr=train_config.learning_rate,
        weight_decay=train_config.weight_decay,
    )
    if resume is not None and "optimizer" in resume.train_state:
        optimizer.load_state_dict(resume.train_state["optimizer"])
        for group in optimizer.param_groups:
            group["lr"] = train_config.learning_rate

    batches_per_epoch = sum(
        1 for start in range(0, len(usable), train_config.batch_size)
        if len(usable) - start >= 2
    )
    total_steps = batches_per_epoch * train_config.epochs
    if train_config.max_steps is not None:
        total_steps = min(total_steps, train_config.max_steps)
    if train_config.schedule == "cosine":
        scheduler = torch.optim.lr_scheduler.CosineAnnealingLR(
            optimizer, T_max=max(total_steps, 1), eta_min=0.0
        )
    else:
        scheduler = torch.optim.lr_scheduler.ConstantLR(optimizer, factor=1.0, total_iters=0)

    records: list[TrainLogRecord] = []
    log_file = open(log_path, "a", encoding="utf-8") if log_path else None

    def emit(record: TrainLogRecord) -> None:
        records.append(record)
        if log_file:
            log_file.write(record.model_dump_json() + "\n")
            log_file.flush()

    tau = train_config.temperature
    run_steps = 0
    schedule: list[_Batch] | None = None
    epoch = first_epoch
    try:
        for epoch in range(first_epoch, first_epoch + train_config.epochs):
            if schedule is None or train_config.resample_each_epoch:
                schedule = _epoch_schedule(usable, train_config, side, tokenizer.encode, rng)
            model.train()
            losses, hits, seen = [], 0.0, 0
            for batch in schedule:
                if run_steps >= total_steps:
                    break
                patches = model.patch(to_pixels(batch.patches, pixel_mean, pixel_std))
                if batch.others is not None:
                    others = model.patch(to_pixels(batch.others, pixel_mean, pixel_std))
                else:
                    ids, lengths = pad_batch(batch.tokens, tokenizer.pad_id)
                    others = model.text(ids, lengths)
                sim = patches @ others.T
                loss = combined_loss(sim, tau)

                optimizer.zero_grad()
                loss.backward()
                learning_rate = optimizer.param_groups[0]["lr"]
                optimizer.step()
                scheduler.step()

                step += 1
                run_steps += 1
                size = sim.shape[0]
                losses.append(float(loss.detach()))
                hits += in_batch_retrieval_accuracy(sim.detach()) * size
                seen += size
                emit(
                    TrainLogRecord(
                        event="step",
                        step=step,
                        epoch=epoch,
                        loss=losses[-1],
                        learning_rate=learning_rate,
                    )
                )

            if losses:
                emit(
                    TrainLogRecord(
                        event="epoch",
                        step=step,
                        epoch=epoch,
                        mean_loss=float(np.mean(losses)),
                        retrieval_top1=hits / seen,
                    )
                )
                logger.info(
                    f"Epoch {epoch}: mean loss {np.mean(losses):.4f}, "
                    f"top-1 retrieval {hits / seen:.3f}"
                )
            if run_steps >= total_steps:
                break
    finally:
        if log_file:
            log_file.close()

    model.eval()
    checkpoint = Checkpoint(
        model=model,
        tokenizer=tokenizer,
        pixel_mean=np.asarray(pixel_mean),
        pixel_std=np.asarray(pixel_std),
        model_config=model_config,
        train_config=train_config,
        train_state={
            "step": step,
            "epoch": epoch + 1,
            "optimizer": optimizer.state_dict(),
        },
    )
    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, checkpoint)
    return TrainOutcome(checkpoint=checkpoint, records=records)
