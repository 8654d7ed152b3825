"""
Bimodal dataset handling: directory loading, synthetic spectral camouflage,
edge ground truth and resizing.

On-disk layout shared by loading, generation and prediction export:

    <root>/rgb/<id>.png     8-bit, 3 channels
    <root>/nir/<id>.png     8-bit, 1 channel
    <root>/mask/<id>.png    8-bit, 1 channel, binarized at half intensity
"""

from __future__ import annotations

import json
import logging
import math
import shutil
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image
from pydantic import BaseModel, Field, model_validator
from scipy import ndimage
from torch.utils.data import Dataset

logger = logging.getLogger(__name__)

MODALITY_DIRS = ("rgb", "nir", "mask")
IMAGE_SUFFIX = ".png"
MASK_THRESHOLD = 0.5
TRAIN_FRACTION = 0.8
SYNTH_RECORD = "synth.json"

Split = Literal["train", "test"]

# Foliage-like base colors for the synthetic canopy.
FOLIAGE_LOW = np.array([0.12, 0.30, 0.08])
FOLIAGE_HIGH = np.array([0.30, 0.55, 0.25])


def _is_binary(array: np.ndarray) -> bool:
    return bool(np.isin(array, (0, 1)).all())


@dataclass(frozen=True)
class BimodalSample:
    """One aligned RGB/NIR/mask record with optional edge ground truth."""

    id: str
    rgb: np.ndarray
    nir: np.ndarray
    mask: np.ndarray
    edge: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        if self.mask.ndim != 2:
            raise ValueError(
                f"Sample '{self.id}': mask must be H×W, got {self.mask.shape}"
            )
        h, w = self.mask.shape
        if self.rgb.shape != (h, w, 3):
            raise ValueError(
                f"Sample '{self.id}': rgb shape {self.rgb.shape} != {(h, w, 3)}"
            )
        if self.nir.shape != (h, w, 1):
            raise ValueError(
                f"Sample '{self.id}': nir shape {self.nir.shape} != {(h, w, 1)}"
            )
        if not _is_binary(self.mask):
            raise ValueError(f"Sample '{self.id}': mask values must be in {{0, 1}}")
        if self.edge is not None and self.edge.shape != (h, w):
            raise ValueError(
                f"Sample '{self.id}': edge shape {self.edge.shape} != {(h, w)}"
            )

    @property
    def size(self) -> Tuple[int, int]:
        return self.mask.shape[0], self.mask.shape[1]


class SynthConfig(BaseModel):
    """Parameters of the synthetic spectral-camouflage generator."""

    n_samples: int = Field(200, gt=0)
    size: int = Field(64, ge=64, description="Square side in pixels")
    n_blobs: Tuple[int, int] = Field((1, 3), description="Inclusive blob count range")
    blob_radius: Tuple[float, float] = Field(
        (0.08, 0.16), description="Blob radius range as a fraction of the side"
    )
    rgb_gap: float = Field(
        0.0, ge=0.0, le=1.0, description="Mean RGB distance foreground vs background"
    )
    nir_gap: float = Field(
        0.4, ge=0.0, le=1.0, description="Mean NIR reflectance offset of foreground"
    )
    texture_scale: float = Field(4.0, gt=0.0)
    noise_sigma: float = Field(0.02, ge=0.0)
    seed: int = 0

    @model_validator(mode="after")
    def _check_detectable(self) -> "SynthConfig":
        if self.rgb_gap == 0 and self.nir_gap == 0:
            raise ValueError(
                "rgb_gap and nir_gap are both 0: targets would be undetectable"
            )
        low, high = self.n_blobs
        if low < 1 or high < low:
            raise ValueError(
                f"n_blobs must be a range with minimum ≥ 1, got {self.n_blobs}"
            )
        r_low, r_high = self.blob_radius
        if not 0 < r_low <= r_high < 0.5:
            raise ValueError(
                f"blob_radius must satisfy 0 < low ≤ high < 0.5, got {self.blob_radius}"
            )
        return self


class DatasetManifest(BaseModel):
    """Ordered list of sample ids for one split of a dataset root."""

    root: Path
    samples: List[str]
    split: Split
    source: Literal["disk", "synthetic"]
    seeds: Dict[str, int] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _check_ids(self) -> "DatasetManifest":
        if len(set(self.samples)) != len(self.samples):
            raise ValueError("Manifest sample ids must be unique")
        if self.source == "synthetic":
            missing = [s for s in self.samples if s not in self.seeds]
            if missing:
                raise ValueError(
                    f"Synthetic sample '{missing[0]}' has no generator seed"
                )
        return self

    def __len__(self) -> int:
        return len(self.samples)

    def save(self, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.model_dump_json(indent=2), encoding="utf-8")
        return path

    @classmethod
    def load(cls, path: Path) -> "DatasetManifest":
        return cls.model_validate_json(Path(path).read_text(encoding="utf-8"))


#
# Edge ground truth and resizing
#


def derive_edge_gt(mask: np.ndarray, k: int = 3) -> np.ndarray:
    """
    Edge map as the difference between local max and min pooling of the mask.

    Args:
        mask: H×W binary array
        k: Odd pooling window size

    Returns:
        H×W uint8 array in {0, 1}; 1 where the k-window holds both classes
    """
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ValueError(f"Edge derivation expects an H×W mask, got shape {mask.shape}")
    if k < 1 or k % 2 == 0:
        raise ValueError(f"Edge window must be a positive odd size, got {k}")
    if not _is_binary(mask):
        raise ValueError("Edge derivation requires a binary mask with values in {0, 1}")

    binary = mask.astype(np.uint8)
    # mode="nearest" is replicate padding, so output size equals input size
    upper = ndimage.maximum_filter(binary, size=k, mode="nearest")
    lower = ndimage.minimum_filter(binary, size=k, mode="nearest")
    return (upper - lower).astype(np.uint8)


def resize_image(array: np.ndarray, size: Union[int, Tuple[int, int]]) -> np.ndarray:
    """Bilinear, antialiased resize of an H×W×C float image to size (side or (h, w))."""
    if isinstance(size, int):
        size = (size, size)
    tensor = torch.from_numpy(np.ascontiguousarray(array, dtype=np.float32))
    tensor = tensor.permute(2, 0, 1).unsqueeze(0)
    resized = F.interpolate(
        tensor, size=tuple(size), mode="bilinear", align_corners=False, antialias=True
    )
    return resized[0].permute(1, 2, 0).clamp(0.0, 1.0).numpy()


def _resize_nearest(mask: np.ndarray, side: int) -> np.ndarray:
    tensor = torch.from_numpy(mask.astype(np.float32))[None, None]
    resized = F.interpolate(tensor, size=(side, side), mode="nearest")
    return (resized[0, 0].numpy() > MASK_THRESHOLD).astype(np.uint8)


def resize_sample(sample: BimodalSample, side: int, edge_k: int = 3) -> BimodalSample:
    """
    Resize a sample to side×side.

    RGB and NIR are resampled bilinearly, the mask by nearest neighbour and
    re-binarized. The edge map is always recomputed from the resized mask.
    """
    if side <= 0:
        raise ValueError(f"Resize side must be positive, got {side}")

    if sample.size == (side, side):
        return replace(sample, edge=derive_edge_gt(sample.mask, edge_k))

    mask = _resize_nearest(sample.mask, side)
    return BimodalSample(
        id=sample.id,
        rgb=resize_image(sample.rgb, side),
        nir=resize_image(sample.nir, side),
        mask=mask,
        edge=derive_edge_gt(mask, edge_k),
    )


#
# Image IO
#


def _to_uint8(array: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(array, dtype=np.float64) * 255.0), 0, 255).astype(
        np.uint8
    )


def read_image(path: Path, channels: int) -> np.ndarray:
    """Read an 8-bit PNG as float32 in [0, 1] with shape H×W×channels."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"Image does not exist: {path}")
    try:
        with Image.open(path) as image:
            converted = image.convert("RGB" if channels == 3 else "L")
            array = np.asarray(converted, dtype=np.float32) / 255.0
    except Exception as e:
        raise ValueError(f"Unreadable image '{path}': {e}") from e
    return array if channels == 3 else array[..., None]


def read_mask(path: Path) -> np.ndarray:
    """Read a mask PNG and binarize it at half of full intensity."""
    return (read_image(path, 1)[..., 0] > MASK_THRESHOLD).astype(np.uint8)


def write_image(path: Path, array: np.ndarray) -> None:
    """Write a float [0, 1] array (H×W, H×W×1 or H×W×3) as an 8-bit PNG."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pixels = _to_uint8(array)
    if pixels.ndim == 3 and pixels.shape[2] == 1:
        pixels = pixels[..., 0]
    Image.fromarray(pixels).save(path)


def _verify_image(path: Path) -> None:
    try:
        with Image.open(path) as image:
            image.verify()
    except Exception as e:
        raise ValueError(f"Unreadable image '{path}': {e}") from e


def read_sample(root: Path, sample_id: str, edge_k: int = 3) -> BimodalSample:
    root = Path(root)
    mask = read_mask(root / "mask" / f"{sample_id}{IMAGE_SUFFIX}")
    return BimodalSample(
        id=sample_id,
        rgb=read_image(root / "rgb" / f"{sample_id}{IMAGE_SUFFIX}", 3),
        nir=read_image(root / "nir" / f"{sample_id}{IMAGE_SUFFIX}", 1),
        mask=mask,
        edge=derive_edge_gt(mask, edge_k),
    )


def write_sample(root: Path, sample: BimodalSample) -> None:
    root = Path(root)
    write_image(root / "rgb" / f"{sample.id}{IMAGE_SUFFIX}", sample.rgb)
    write_image(root / "nir" / f"{sample.id}{IMAGE_SUFFIX}", sample.nir)
    write_image(root / "mask" / f"{sample.id}{IMAGE_SUFFIX}", sample.mask)


#
# Directory datasets
#


def scan_ids(root: Path, required: Sequence[str] = MODALITY_DIRS) -> List[str]:
    """
    List sample ids present in every required subdirectory, sorted.

    Raises:
        FileNotFoundError: root does not exist
        ValueError: no samples at all, or an id lacks a counterpart file
    """
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"Dataset root does not exist: {root}")

    stems: Dict[str, set] = {}
    for name in required:
        subdir = root / name
        stems[name] = (
            {p.stem for p in subdir.glob(f"*{IMAGE_SUFFIX}") if p.is_file()}
            if subdir.is_dir()
            else set()
        )

    everything = set().union(*stems.values())
    if not everything:
        raise ValueError(f"no complete samples in {root}")

    complete = set.intersection(*stems.values())
    unmatched = sorted(everything - complete)
    if unmatched:
        first = unmatched[0]
        missing = [name for name in required if first not in stems[name]]
        more = f" ({len(unmatched) - 1} more unmatched)" if len(unmatched) > 1 else ""
        raise ValueError(
            f"Sample '{first}' has no counterpart file in {', '.join(missing)}/{more}"
        )
    return sorted(complete)


def split_ids(ids: Sequence[str], split: Split) -> List[str]:
    """Deterministic 80/20 split of already sorted ids."""
    n_train = math.ceil(TRAIN_FRACTION * len(ids))
    if split == "train":
        return list(ids[:n_train])
    if split == "test":
        return list(ids[n_train:])
    raise ValueError(f"Unknown split '{split}', expected 'train' or 'test'")


def load_dataset(root: Path, split: Split = "train") -> DatasetManifest:
    """
    Build a manifest for one split of a directory dataset.

    Args:
        root: Directory holding rgb/, nir/ and mask/ with matching filenames
        split: "train" (first 80% of sorted ids) or "test" (the rest)

    Returns:
        DatasetManifest; source is "synthetic" when the root carries a
        generator record
    """
    root = Path(root)
    ids = scan_ids(root)
    for sample_id in ids:
        for name in MODALITY_DIRS:
            _verify_image(root / name / f"{sample_id}{IMAGE_SUFFIX}")

    selected = split_ids(ids, split)
    if not selected:
        raise ValueError(f"no complete samples in the {split} split of {root}")

    record_path = root / SYNTH_RECORD
    if record_path.is_file():
        record = json.loads(record_path.read_text(encoding="utf-8"))
        seeds = {k: int(v) for k, v in record["seeds"].items() if k in selected}
        manifest = DatasetManifest(
            root=root, samples=selected, split=split, source="synthetic", seeds=seeds
        )
    else:
        manifest = DatasetManifest(
            root=root, samples=selected, split=split, source="disk"
        )

    logger.info(
        f"Loaded {manifest.source} dataset {root} [{split}]: "
        f"{len(selected)} of {len(ids)} samples"
    )
    return manifest


#
# Synthetic spectral camouflage
#


def _smooth_field(rng: np.random.Generator, size: int, scale: float) -> np.ndarray:
    noise = rng.standard_normal((size, size))
    field = ndimage.gaussian_filter(noise, sigma=scale, mode="wrap")
    std = field.std()
    return (field - field.mean()) / std if std > 0 else field


def _blob_mask(
    rng: np.random.Generator,
    size: int,
    n_blobs: Tuple[int, int],
    radius_range: Tuple[float, float],
) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    mask = np.zeros((size, size), dtype=bool)
    count = int(rng.integers(n_blobs[0], n_blobs[1] + 1))
    for _ in range(count):
        r0 = rng.uniform(*radius_range) * size
        cy, cx = rng.uniform(r0 + 1, size - r0 - 1, size=2)
        theta = np.arctan2(yy - cy, xx - cx)
        # star-shaped around the center: a few low harmonics keep the outline smooth
        radius = np.full_like(theta, r0)
        for harmonic in (2, 3, 4):
            amplitude = rng.uniform(-0.15, 0.15)
            phase = rng.uniform(0.0, 2 * np.pi)
            radius += r0 * amplitude * np.cos(harmonic * theta + phase)
        mask |= np.hypot(yy - cy, xx - cx) <= radius
    return mask.astype(np.uint8)


def synthesize_sample(cfg: SynthConfig, sample_id: str, seed: int) -> BimodalSample:
    """
    Render one camouflaged scene.

    Foreground and background share one RGB texture distribution, the
    foreground mean shifted by rgb_gap along a random color direction. In NIR
    the foreground reflects nir_gap more than the background.
    """
    rng = np.random.default_rng(seed)
    size = cfg.size
    mask = _blob_mask(rng, size, cfg.n_blobs, cfg.blob_radius)
    foreground = mask.astype(bool)

    base = rng.uniform(FOLIAGE_LOW, FOLIAGE_HIGH)
    luminance = _smooth_field(rng, size, cfg.texture_scale)
    rgb = base + 0.08 * luminance[..., None]
    for channel in range(3):
        rgb[..., channel] += 0.03 * _smooth_field(rng, size, cfg.texture_scale)
    if cfg.rgb_gap > 0:
        direction = np.abs(rng.standard_normal(3)) * np.sign(0.5 - base)
        direction /= np.linalg.norm(direction)
        rgb[foreground] += cfg.rgb_gap * direction
    rgb += cfg.noise_sigma * rng.standard_normal(rgb.shape)

    nir = rng.uniform(0.25, 0.35) + 0.02 * _smooth_field(rng, size, cfg.texture_scale)
    nir = nir + cfg.nir_gap * foreground
    nir += cfg.noise_sigma * rng.standard_normal(nir.shape)

    return BimodalSample(
        id=sample_id,
        rgb=np.clip(rgb, 0.0, 1.0).astype(np.float32),
        nir=np.clip(nir, 0.0, 1.0).astype(np.float32)[..., None],
        mask=mask,
        edge=derive_edge_gt(mask),
    )


def _clear_synthetic(root: Path) -> None:
    """Remove an earlier synthetic dataset; never touch images we did not generate."""
    existing = [root / name for name in MODALITY_DIRS if (root / name).is_dir()]
    if not existing:
        return
    if not (root / SYNTH_RECORD).is_file():
        if any(any(d.iterdir()) for d in existing):
            raise ValueError(
                f"Refusing to write synthetic data into {root}: it already holds "
                f"images without a {SYNTH_RECORD} record"
            )
        return
    logger.info(f"Replacing the synthetic dataset at {root}")
    for directory in existing:
        shutil.rmtree(directory)
    (root / SYNTH_RECORD).unlink()


def generate_synthetic(
    cfg: SynthConfig, root: Path, split: Split = "train"
) -> DatasetManifest:
    """
    Materialize a synthetic dataset under root and return the manifest of one split.

    Deterministic under a fixed seed: per-sample seeds are spawned from
    cfg.seed and recorded in synth.json next to the images.
    """
    if cfg.rgb_gap == 0 and cfg.nir_gap == 0:
        raise ValueError(
            "Refusing to generate undetectable targets: rgb_gap = nir_gap = 0"
        )

    root = Path(root)
    _clear_synthetic(root)
    root.mkdir(parents=True, exist_ok=True)
    seeds = np.random.SeedSequence(cfg.seed).generate_state(cfg.n_samples)
    ids = [f"patch_{index:04d}" for index in range(cfg.n_samples)]

    logger.info(f"Generating {cfg.n_samples} synthetic samples under {root}")
    for sample_id, seed in zip(ids, seeds):
        write_sample(root, synthesize_sample(cfg, sample_id, int(seed)))
        logger.debug(f"Wrote synthetic sample {sample_id} (seed={int(seed)})")

    record = {
        "config": cfg.model_dump(mode="json"),
        "seeds": {sample_id: int(seed) for sample_id, seed in zip(ids, seeds)},
    }
    (root / SYNTH_RECORD).write_text(json.dumps(record, indent=2), encoding="utf-8")
    return load_dataset(root, split)


#
# Torch dataset
#


def sample_to_tensors(sample: BimodalSample) -> Dict[str, Any]:
    """Channel-first float tensors for one sample."""
    tensors: Dict[str, Any] = {
        "id": sample.id,
        "rgb": torch.from_numpy(np.ascontiguousarray(sample.rgb.transpose(2, 0, 1))),
        "nir": torch.from_numpy(np.ascontiguousarray(sample.nir.transpose(2, 0, 1))),
        "mask": torch.from_numpy(sample.mask.astype(np.float32))[None],
    }
    edge = sample.edge if sample.edge is not None else derive_edge_gt(sample.mask)
    tensors["edge"] = torch.from_numpy(edge.astype(np.float32))[None]
    return tensors


class BimodalDataset(Dataset):
    """Resized samples of a manifest as channel-first tensors."""

    def __init__(self, manifest: DatasetManifest, side: int, edge_k: int = 3):
        self.manifest = manifest
        self.side = side
        self.edge_k = edge_k
        self._cache: Dict[int, BimodalSample] = {}

    def __len__(self) -> int:
        return len(self.manifest.samples)

    def sample(self, index: int) -> BimodalSample:
        if index not in self._cache:
            sample_id = self.manifest.samples[index]
            raw = read_sample(self.manifest.root, sample_id, self.edge_k)
            self._cache[index] = resize_sample(raw, self.side, self.edge_k)
        return self._cache[index]

    def __getitem__(self, index: int) -> Dict[str, Any]:
        return sample_to_tensors(self.sample(index))
