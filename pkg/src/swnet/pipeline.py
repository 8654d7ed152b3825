"""
Training loop, checkpointing, inference export, and the ablation and
modality comparison runners.

Checkpoints are single torch.save containers:

    model        flat state dict (dotted parameter names -> tensors)
    optimizer    AdamW state
    scheduler    cosine annealing state
    epoch        last completed epoch
    global_step  optimizer steps taken so far
    config       RunConfig snapshot
    rng          python / numpy / torch generator states
    parameters   trainable parameter count
    provenance   git state of the code
"""

import json
import logging
import math
import random
import shutil
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np
import torch
import torch.nn.functional as F
from torch.utils.data import DataLoader

from .config import RunConfig, apply_determinism, seed_everything
from .data import (
    IMAGE_SUFFIX,
    SYNTH_RECORD,
    BimodalDataset,
    generate_synthetic,
    load_dataset,
    read_image,
    read_mask,
    resize_image,
    scan_ids,
    write_image,
)
from .decoder import SWNet
from .losses import LossBreakdown, total_loss
from .metrics import (
    DatasetEvaluation,
    MetricReport,
    evaluate_dataset,
    markdown_table,
    write_report,
)
from .provenance import describe_code

logger = logging.getLogger(__name__)

LOG_NAME = "train_log.jsonl"
LAST_CHECKPOINT = "last.pt"
OVERLAY_DIR = "overlay"
PREDICTION_THRESHOLD = 0.5

ABLATION_LABELS = {
    "edge_only": "only Edge",
    "cbam_only": "only CBAM",
    "full": "Edge + CBAM",
}
MODALITY_LABELS = {"rgb": "Vis", "nir": "NIR", "both": "Vis+NIR"}

PathLike = Union[str, Path]


class TrainingDivergedError(RuntimeError):
    """A non-finite loss was produced; the offending batch was dumped."""

    def __init__(
        self, message: str, batch_ids: Sequence[str], dump_path: Optional[Path]
    ):
        super().__init__(message)
        self.batch_ids = list(batch_ids)
        self.dump_path = dump_path


class CheckpointMismatchError(ValueError):
    """Checkpoint parameters do not fit the model built from the config."""

    def __init__(
        self,
        missing: Sequence[str],
        unexpected: Sequence[str],
        mismatched: Sequence[str],
    ):
        self.missing = list(missing)
        self.unexpected = list(unexpected)
        self.mismatched = list(mismatched)
        parts = []
        if self.mismatched:
            parts.append(f"shape mismatch: {', '.join(self.mismatched)}")
        if self.missing:
            parts.append(f"missing: {', '.join(self.missing)}")
        if self.unexpected:
            parts.append(f"unexpected: {', '.join(self.unexpected)}")
        super().__init__("Checkpoint incompatible with model; " + "; ".join(parts))


#
# Model and optimization
#


def build_model(cfg: RunConfig) -> SWNet:
    return SWNet(
        backbone=cfg.backbone,
        width=cfg.decoder_width,
        cbam_ratio=cfg.cbam_ratio,
        use_cbam=cfg.use_cbam,
        use_edge=cfg.use_edge,
        modality=cfg.modality,
    )


def count_parameters(model: torch.nn.Module) -> int:
    return sum(p.numel() for p in model.parameters() if p.requires_grad)


def build_optimizer(model: torch.nn.Module, cfg: RunConfig) -> torch.optim.AdamW:
    return torch.optim.AdamW(
        model.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay
    )


def build_scheduler(
    optimizer: torch.optim.Optimizer, cfg: RunConfig
) -> torch.optim.lr_scheduler.CosineAnnealingLR:
    """Per-epoch cosine annealing from lr to lr·lr_floor_ratio."""
    return torch.optim.lr_scheduler.CosineAnnealingLR(
        optimizer, T_max=cfg.epochs, eta_min=cfg.lr_floor
    )


def cosine_lr(cfg: RunConfig, epoch: float) -> float:
    """Closed-form learning rate after `epoch` completed epochs."""
    floor = cfg.lr_floor
    cosine = (1.0 + math.cos(math.pi * epoch / cfg.epochs)) / 2.0
    return floor + (cfg.lr - floor) * cosine


def load_model_state(model: torch.nn.Module, state: Dict[str, torch.Tensor]) -> None:
    """Strict state loading that names every incompatible parameter."""
    own = model.state_dict()
    missing = sorted(set(own) - set(state))
    unexpected = sorted(set(state) - set(own))
    mismatched = sorted(
        name
        for name in set(own) & set(state)
        if tuple(own[name].shape) != tuple(state[name].shape)
    )
    if missing or unexpected or mismatched:
        raise CheckpointMismatchError(missing, unexpected, mismatched)
    model.load_state_dict(state)


#
# Checkpoints
#


def save_checkpoint(
    path: Path,
    model: torch.nn.Module,
    optimizer: torch.optim.Optimizer,
    scheduler: Any,
    cfg: RunConfig,
    epoch: int,
    global_step: int,
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(
        {
            "model": model.state_dict(),
            "optimizer": optimizer.state_dict(),
            "scheduler": scheduler.state_dict(),
            "epoch": epoch,
            "global_step": global_step,
            "config": cfg.model_dump(mode="json"),
            "rng": {
                "python": random.getstate(),
                "numpy": np.random.get_state(),
                "torch": torch.get_rng_state(),
            },
            "parameters": count_parameters(model),
            "provenance": describe_code(),
        },
        path,
    )
    return path


def load_checkpoint(path: PathLike) -> Dict[str, Any]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"Checkpoint does not exist: {path}")
    payload = torch.load(path, map_location="cpu", weights_only=False)
    for key in ("model", "config", "epoch"):
        if key not in payload:
            raise ValueError(f"Checkpoint {path} has no '{key}' entry")
    return payload


def _restore_rng(states: Dict[str, Any]) -> None:
    random.setstate(states["python"])
    np.random.set_state(states["numpy"])
    torch.set_rng_state(states["torch"])


#
# Data
#


def resolve_data_root(cfg: RunConfig) -> Path:
    """
    Directory holding the run's rgb/, nir/ and mask/ data.

    Synthetic data is generated under <out_dir>/data and reused when the
    recorded generator config matches.
    """
    cfg.require_data()
    if cfg.data_root is not None:
        return Path(cfg.data_root)

    assert cfg.synth is not None
    root = Path(cfg.out_dir) / "data"
    record_path = root / SYNTH_RECORD
    wanted = cfg.synth.model_dump(mode="json")
    if record_path.is_file():
        record = json.loads(record_path.read_text(encoding="utf-8"))
        if record.get("config") == wanted:
            logger.info(f"Reusing synthetic dataset at {root}")
            return root
        logger.info(f"Synthetic dataset at {root} has another config; regenerating")
        shutil.rmtree(root)
    generate_synthetic(cfg.synth, root)
    return root


def make_loader(dataset: BimodalDataset, cfg: RunConfig, epoch: int) -> DataLoader:
    """Shuffled loader whose order depends only on (seed, epoch)."""
    generator = torch.Generator()
    generator.manual_seed(cfg.seed * 1000 + epoch)
    return DataLoader(
        dataset,
        batch_size=cfg.batch_size,
        shuffle=True,
        generator=generator,
        num_workers=cfg.num_workers,
    )


#
# Training
#


@dataclass
class TrainingResult:
    model: SWNet
    checkpoint: Path
    log_path: Path
    history: List[Dict[str, Any]] = field(default_factory=list)


def _dump_batch(dump_dir: Path, global_step: int, batch: Dict[str, Any]) -> Path:
    path = Path(dump_dir) / f"diverged_step_{global_step:06d}.pt"
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(dict(batch), path)
    return path


def train_step(
    model: SWNet,
    optimizer: torch.optim.Optimizer,
    batch: Dict[str, Any],
    cfg: RunConfig,
    dump_dir: Optional[Path] = None,
    global_step: int = 0,
) -> LossBreakdown:
    """
    One optimizer step on a collated batch.

    Raises:
        TrainingDivergedError: the total loss is not finite; the batch is
            written to dump_dir first when given
    """
    model.train()
    bundle = model(batch["rgb"], batch["nir"])
    breakdown = total_loss(
        bundle, batch["mask"], batch["edge"], cfg.boundary_gain, cfg.boundary_window
    )
    if not torch.isfinite(breakdown.total):
        ids = list(batch.get("id", []))
        dump_path = _dump_batch(dump_dir, global_step, batch) if dump_dir else None
        raise TrainingDivergedError(
            f"Non-finite loss at step {global_step} on batch {ids}"
            + (f"; batch dumped to {dump_path}" if dump_path else ""),
            ids,
            dump_path,
        )
    optimizer.zero_grad(set_to_none=True)
    breakdown.total.backward()
    optimizer.step()
    return breakdown


def train(cfg: RunConfig, resume: Optional[PathLike] = None) -> TrainingResult:
    """
    Train SWNet end to end.

    Args:
        cfg: Run configuration; data comes from data_root or synth
        resume: Optional checkpoint to continue from (its epoch is the last
            completed one)

    Returns:
        TrainingResult with the final model, the last checkpoint path and the
        step records written during this call
    """
    cfg = apply_determinism(cfg)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    checkpoint_dir = out_dir / "checkpoints"

    root = resolve_data_root(cfg)
    dataset = BimodalDataset(load_dataset(root, "train"), cfg.input_side, cfg.edge_k)

    seed_everything(cfg.seed)
    model = build_model(cfg)
    optimizer = build_optimizer(model, cfg)
    scheduler = build_scheduler(optimizer, cfg)
    logger.info(
        f"SWNet [{cfg.ablation}, {cfg.modality}] with "
        f"{count_parameters(model):,} parameters; "
        f"{len(dataset)} training samples at {cfg.input_side}px"
    )

    start_epoch, global_step = 0, 0
    log_path = out_dir / LOG_NAME
    if resume is not None:
        payload = load_checkpoint(resume)
        load_model_state(model, payload["model"])
        optimizer.load_state_dict(payload["optimizer"])
        scheduler.load_state_dict(payload["scheduler"])
        start_epoch = int(payload["epoch"])
        global_step = int(payload.get("global_step", 0))
        _restore_rng(payload["rng"])
        logger.info(f"Resuming from {resume} after epoch {start_epoch}")
    else:
        log_path.write_text("", encoding="utf-8")

    history: List[Dict[str, Any]] = []
    checkpoint = checkpoint_dir / LAST_CHECKPOINT
    if resume is not None:
        checkpoint = Path(resume)
    with log_path.open("a", encoding="utf-8") as log_handle:
        for epoch in range(start_epoch + 1, cfg.epochs + 1):
            lr = optimizer.param_groups[0]["lr"]
            totals = []
            for step, batch in enumerate(make_loader(dataset, cfg, epoch), start=1):
                global_step += 1
                breakdown = train_step(
                    model, optimizer, batch, cfg, out_dir, global_step
                )
                record = {
                    "epoch": epoch,
                    "step": step,
                    "global_step": global_step,
                    "lr": lr,
                    "batch": list(batch["id"]),
                    **breakdown.to_record(),
                }
                log_handle.write(json.dumps(record) + "\n")
                history.append(record)
                totals.append(record["total"])
                message = f"epoch {epoch} step {step}: loss {record['total']:.4f}"
                if global_step % cfg.log_every == 0:
                    logger.info(message)
                else:
                    logger.debug(message)
            log_handle.flush()
            scheduler.step()

            checkpoint = save_checkpoint(
                checkpoint_dir / f"epoch_{epoch:03d}.pt",
                model,
                optimizer,
                scheduler,
                cfg,
                epoch,
                global_step,
            )
            shutil.copyfile(checkpoint, checkpoint_dir / LAST_CHECKPOINT)
            logger.info(
                f"Epoch {epoch}/{cfg.epochs}: mean loss {float(np.mean(totals)):.4f}, "
                f"lr {lr:.2e}, checkpoint {checkpoint}"
            )

    return TrainingResult(
        model=model, checkpoint=checkpoint, log_path=log_path, history=history
    )


#
# Inference
#


@dataclass
class PredictionResult:
    predictions: List[Path]
    overlays: List[Path]


def error_overlay(pred: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """
    Color-coded agreement map of a thresholded prediction against the mask.

    True positives are white, false positives red, false negatives blue and
    true negatives black.
    """
    if pred.shape != mask.shape:
        raise ValueError(
            f"Prediction {pred.shape} and mask {mask.shape} differ in size"
        )
    hit = pred >= PREDICTION_THRESHOLD
    gt = mask.astype(bool)
    overlay = np.zeros(pred.shape + (3,), dtype=np.float32)
    overlay[hit & gt] = (1.0, 1.0, 1.0)
    overlay[hit & ~gt] = (1.0, 0.0, 0.0)
    overlay[~hit & gt] = (0.0, 0.0, 1.0)
    return overlay


@torch.no_grad()
def predict_sample(
    model: SWNet, rgb: np.ndarray, nir: np.ndarray, side: int
) -> np.ndarray:
    """Final probability map for one H×W sample, returned at its original size."""
    h, w = rgb.shape[:2]
    rgb_t = torch.from_numpy(resize_image(rgb, side).transpose(2, 0, 1).copy())[None]
    nir_t = torch.from_numpy(resize_image(nir, side).transpose(2, 0, 1).copy())[None]
    model.eval()
    final = model(rgb_t, nir_t).final
    if final.shape[-2:] != (h, w):
        final = F.interpolate(final, size=(h, w), mode="bilinear", align_corners=False)
    return final[0, 0].clamp(0.0, 1.0).numpy()


def predict(
    checkpoint: PathLike,
    input_dir: PathLike,
    output_dir: PathLike,
    cfg: Optional[RunConfig] = None,
    ids: Optional[Sequence[str]] = None,
    overlays: bool = True,
) -> PredictionResult:
    """
    Export the refined probability map of every sample in input_dir.

    Args:
        checkpoint: Checkpoint written by train
        input_dir: Directory with rgb/ and nir/ (mask/ optional)
        output_dir: Receives <id>.png maps and overlay/<id>.png when masks exist
        cfg: Config to build the model from; defaults to the checkpoint's own
        ids: Restrict export to these sample ids
        overlays: Render error overlays against available masks

    Raises:
        CheckpointMismatchError: checkpoint parameters do not fit the model
    """
    payload = load_checkpoint(checkpoint)
    cfg = cfg if cfg is not None else RunConfig.model_validate(payload["config"])
    model = build_model(cfg)
    load_model_state(model, payload["model"])

    input_dir, output_dir = Path(input_dir), Path(output_dir)
    available = scan_ids(input_dir, required=("rgb", "nir"))
    if ids is not None:
        unknown = sorted(set(ids) - set(available))
        if unknown:
            raise ValueError(f"Sample '{unknown[0]}' not found in {input_dir}")
        available = [i for i in available if i in set(ids)]

    result = PredictionResult(predictions=[], overlays=[])
    for sample_id in available:
        rgb = read_image(input_dir / "rgb" / f"{sample_id}{IMAGE_SUFFIX}", 3)
        nir = read_image(input_dir / "nir" / f"{sample_id}{IMAGE_SUFFIX}", 1)
        if rgb.shape[:2] != nir.shape[:2]:
            raise ValueError(
                f"Sample '{sample_id}': RGB {rgb.shape[:2]} and "
                f"NIR {nir.shape[:2]} differ in size"
            )
        final = predict_sample(model, rgb, nir, cfg.input_side)
        pred_path = output_dir / f"{sample_id}{IMAGE_SUFFIX}"
        write_image(pred_path, final)
        result.predictions.append(pred_path)

        mask_path = input_dir / "mask" / f"{sample_id}{IMAGE_SUFFIX}"
        if overlays and mask_path.is_file():
            overlay_path = output_dir / OVERLAY_DIR / f"{sample_id}{IMAGE_SUFFIX}"
            write_image(overlay_path, error_overlay(final, read_mask(mask_path)))
            result.overlays.append(overlay_path)

    logger.info(f"Wrote {len(result.predictions)} predictions to {output_dir}")
    return result


#
# Experiments
#


def evaluate_checkpoint(
    checkpoint: PathLike, cfg: RunConfig, label: str = "SWNet"
) -> DatasetEvaluation:
    """Predict the test split and write report.json / report.md / sweep.csv."""
    root = resolve_data_root(cfg)
    manifest = load_dataset(root, "test")
    out_dir = Path(cfg.out_dir)
    pred_dir = out_dir / "predictions"
    predict(checkpoint, root, pred_dir, cfg=cfg, ids=manifest.samples)
    evaluation = evaluate_dataset(pred_dir, root / "mask", ids=manifest.samples)
    write_report(
        evaluation,
        out_dir / "eval",
        label,
        extra={
            "config": cfg.model_dump(mode="json"),
            "checkpoint": str(checkpoint),
            "provenance": describe_code(),
        },
    )
    return evaluation


def run_experiment(cfg: RunConfig, label: str = "SWNet") -> MetricReport:
    training = train(cfg)
    return evaluate_checkpoint(training.checkpoint, cfg, label).report


def _shared_data(cfg: RunConfig) -> RunConfig:
    """Materialize the data once so every variant sees the same samples."""
    root = resolve_data_root(cfg)
    return cfg.model_copy(update={"data_root": root, "synth": None})


def _run_variants(
    cfg: RunConfig,
    field_name: str,
    labels: Dict[str, str],
    table_name: str,
    first_column: str,
) -> Dict[str, MetricReport]:
    base = _shared_data(cfg)
    out_dir = Path(cfg.out_dir)
    reports: Dict[str, MetricReport] = {}
    for value, label in labels.items():
        variant = base.model_copy(
            update={field_name: value, "out_dir": out_dir / value}
        )
        logger.info(f"Running variant {field_name}={value}")
        reports[value] = run_experiment(variant, label)

    table = markdown_table([(labels[k], r) for k, r in reports.items()], first_column)
    (out_dir / f"{table_name}.md").write_text(table, encoding="utf-8")
    payload = {k: r.to_dict() for k, r in reports.items()}
    (out_dir / f"{table_name}.json").write_text(
        json.dumps(payload, indent=2), encoding="utf-8"
    )
    logger.info(f"Wrote {table_name} table to {out_dir / f'{table_name}.md'}")
    return reports


def ablate(cfg: RunConfig) -> Dict[str, MetricReport]:
    """Three seeded runs differing only in the ablation flag."""
    return _run_variants(cfg, "ablation", ABLATION_LABELS, "ablation", "Setting")


def compare_modalities(cfg: RunConfig) -> Dict[str, MetricReport]:
    """Vis, NIR and Vis+NIR runs of the unchanged architecture."""
    return _run_variants(cfg, "modality", MODALITY_LABELS, "modalities", "Input")
