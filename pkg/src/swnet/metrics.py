"""
Camouflaged object detection metrics: MAE, F-measure and E-measure threshold
sweeps, S-measure, weighted F-measure, and dataset-level reports.

Conventions:
    - F-measure uses β² = 0.3, weighted F-measure β² = 1.
    - Threshold sweeps binarize with pred ≥ k/255 for k = 0..255. The sweep and
      the adaptive threshold share the same comparison. At k = 0 every pixel is
      foreground, so mean curves of a perfect binary map stay just below 1.
    - Adaptive threshold is min(2·mean(pred), 1).
    - S-measure uses α = 0.5.
    - Degenerate ground truth (all background) is handled explicitly per metric.
"""

import csv
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.ndimage import convolve, distance_transform_edt

from .data import IMAGE_SUFFIX, read_image, read_mask

logger = logging.getLogger(__name__)

EPS = np.finfo(np.float64).eps
F_BETA2 = 0.3
WF_BETA2 = 1.0
S_ALPHA = 0.5
N_THRESHOLDS = 256
# t = k/255 for k = 0..255; a pixel is foreground at t when pred ≥ t
THRESHOLDS = np.arange(N_THRESHOLDS, dtype=np.float64) / (N_THRESHOLDS - 1)


def _prepare(pred: np.ndarray, gt: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(
            f"Prediction shape {pred.shape} != ground truth shape {gt.shape}"
        )
    if pred.size == 0:
        raise ValueError("Empty prediction map")
    if pred.min() < 0.0 or pred.max() > 1.0:
        raise ValueError(
            f"Prediction values must lie in [0, 1], "
            f"got range [{pred.min()}, {pred.max()}]"
        )
    if not np.isin(gt, (0, 1)).all():
        raise ValueError("Ground truth must be binary with values in {0, 1}")
    return pred, gt.astype(bool)


def normalize_prediction(pred: np.ndarray) -> np.ndarray:
    """Min-max normalize only when values leave [0, 1]."""
    pred = np.asarray(pred, dtype=np.float64)
    low, high = pred.min(), pred.max()
    if low >= 0.0 and high <= 1.0:
        return pred
    if high == low:
        return np.zeros_like(pred)
    return (pred - low) / (high - low)


def adaptive_threshold(pred: np.ndarray) -> float:
    return float(min(2.0 * pred.mean(), 1.0))


#
# Pixel-wise and threshold-sweep measures
#


def mae(pred: np.ndarray, gt: np.ndarray) -> float:
    pred, gt = _prepare(pred, gt)
    return float(np.abs(pred - gt).mean())


@dataclass(frozen=True)
class ThresholdCurve:
    """A metric evaluated over the 256-step threshold sweep."""

    curve: np.ndarray
    adaptive: float
    mean: float
    max: float


def threshold_counts(pred: np.ndarray, gt: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    True- and false-positive counts at every sweep threshold.

    Returns:
        (tp, fp), each of length 256; tp is non-increasing in the threshold
    """
    pred, gt = _prepare(pred, gt)
    fg = np.sort(pred[gt])
    bg = np.sort(pred[~gt])
    # number of values ≥ t equals len − (number of values < t)
    tp = fg.size - np.searchsorted(fg, THRESHOLDS, side="left")
    fp = bg.size - np.searchsorted(bg, THRESHOLDS, side="left")
    return tp.astype(np.int64), fp.astype(np.int64)


def _f_score(tp: np.ndarray, fp: np.ndarray, n_fg: int, beta2: float) -> np.ndarray:
    tp = np.asarray(tp, dtype=np.float64)
    fp = np.asarray(fp, dtype=np.float64)
    predicted = tp + fp
    if n_fg == 0:
        # empty target: perfect only when nothing is predicted
        return (predicted == 0).astype(np.float64)
    precision = np.divide(tp, predicted, out=np.zeros_like(tp), where=predicted > 0)
    recall = tp / n_fg
    denominator = beta2 * precision + recall
    return np.divide(
        (1 + beta2) * precision * recall,
        denominator,
        out=np.zeros_like(tp),
        where=denominator > 0,
    )


def precision_recall_curve(
    pred: np.ndarray, gt: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    tp, fp = threshold_counts(pred, gt)
    n_fg = int(np.count_nonzero(np.asarray(gt)))
    predicted = (tp + fp).astype(np.float64)
    precision = np.divide(
        tp, predicted, out=np.zeros_like(predicted), where=predicted > 0
    )
    recall = tp / n_fg if n_fg else np.zeros_like(predicted)
    return precision, recall


def f_measure_curve(pred: np.ndarray, gt: np.ndarray) -> ThresholdCurve:
    """F_β (β² = 0.3) over the threshold sweep, at the adaptive threshold, mean and max."""
    pred, gt = _prepare(pred, gt)
    n_fg = int(gt.sum())
    tp, fp = threshold_counts(pred, gt)
    curve = _f_score(tp, fp, n_fg, F_BETA2)

    binary = pred >= adaptive_threshold(pred)
    tp_adp = np.count_nonzero(binary & gt)
    fp_adp = np.count_nonzero(binary & ~gt)
    adaptive = float(_f_score(np.array([tp_adp]), np.array([fp_adp]), n_fg, F_BETA2)[0])
    return ThresholdCurve(curve, adaptive, float(curve.mean()), float(curve.max()))


def _enhanced_alignment(binary: np.ndarray, gt: np.ndarray) -> float:
    if not gt.any():
        enhanced = 1.0 - binary
    elif gt.all():
        enhanced = binary.astype(np.float64)
    else:
        fm = binary - binary.mean()
        g = gt - gt.mean()
        align = 2.0 * g * fm / (g * g + fm * fm)
        enhanced = (align + 1.0) ** 2 / 4.0
    return float(np.mean(enhanced))


def e_measure_curve(pred: np.ndarray, gt: np.ndarray) -> ThresholdCurve:
    """Enhanced-alignment measure over the threshold sweep."""
    pred, gt = _prepare(pred, gt)
    gt_f = gt.astype(np.float64)
    curve = np.array(
        [_enhanced_alignment((pred >= t).astype(np.float64), gt_f) for t in THRESHOLDS]
    )
    adaptive = _enhanced_alignment(
        (pred >= adaptive_threshold(pred)).astype(np.float64), gt_f
    )
    return ThresholdCurve(curve, adaptive, float(curve.mean()), float(curve.max()))


#
# Structure measure
#


def _object_score(values: np.ndarray) -> float:
    if values.size == 0:
        return 0.0
    x = values.mean()
    sigma = values.std(ddof=1) if values.size > 1 else 0.0
    return float(2.0 * x / (x * x + 1.0 + sigma + EPS))


def _s_object(pred: np.ndarray, gt: np.ndarray) -> float:
    u = gt.mean()
    o_fg = _object_score(pred[gt])
    o_bg = _object_score(1.0 - pred[~gt])
    return float(u * o_fg + (1.0 - u) * o_bg)


def _centroid(gt: np.ndarray) -> Tuple[int, int]:
    h, w = gt.shape
    if not gt.any():
        return int(round(w / 2)), int(round(h / 2))
    rows, cols = np.nonzero(gt)
    # one-based split point, matching the reference quadrant division
    return int(np.round(cols.mean())) + 1, int(np.round(rows.mean())) + 1


def _ssim(pred: np.ndarray, gt: np.ndarray) -> float:
    n = pred.size
    if n == 0:
        return 0.0
    x = pred.mean()
    y = gt.mean()
    sigma_x2 = ((pred - x) ** 2).sum() / (n - 1 + EPS)
    sigma_y2 = ((gt - y) ** 2).sum() / (n - 1 + EPS)
    sigma_xy = ((pred - x) * (gt - y)).sum() / (n - 1 + EPS)
    alpha = 4.0 * x * y * sigma_xy
    beta = (x * x + y * y) * (sigma_x2 + sigma_y2)
    if alpha != 0:
        return float(alpha / (beta + EPS))
    if beta == 0:
        return 1.0
    return 0.0


def _s_region(pred: np.ndarray, gt: np.ndarray) -> float:
    h, w = gt.shape
    area = h * w
    cx, cy = _centroid(gt)
    gt_f = gt.astype(np.float64)
    quadrants = [
        (slice(0, cy), slice(0, cx)),
        (slice(0, cy), slice(cx, w)),
        (slice(cy, h), slice(0, cx)),
        (slice(cy, h), slice(cx, w)),
    ]
    w1 = cx * cy / area
    w2 = (w - cx) * cy / area
    w3 = cx * (h - cy) / area
    weights = (w1, w2, w3, 1.0 - w1 - w2 - w3)
    return float(
        sum(
            weight * _ssim(pred[rows, cols], gt_f[rows, cols])
            for weight, (rows, cols) in zip(weights, quadrants)
        )
    )


def s_measure(pred: np.ndarray, gt: np.ndarray, alpha: float = S_ALPHA) -> float:
    """S_α = α·S_object + (1 − α)·S_region."""
    pred, gt = _prepare(pred, gt)
    y = gt.mean()
    if y == 0:
        return float(1.0 - pred.mean())
    if y == 1:
        return float(pred.mean())
    score = alpha * _s_object(pred, gt) + (1.0 - alpha) * _s_region(pred, gt)
    return float(max(score, 0.0))


#
# Weighted F-measure
#


def gaussian_kernel(size: int = 7, sigma: float = 5.0) -> np.ndarray:
    """Normalized 2-D Gaussian, small tails zeroed as in the usual fspecial convention."""
    m = (size - 1) / 2
    y, x = np.ogrid[-m : m + 1, -m : m + 1]
    kernel = np.exp(-(x * x + y * y) / (2.0 * sigma * sigma))
    kernel[kernel < np.finfo(kernel.dtype).eps * kernel.max()] = 0
    total = kernel.sum()
    return kernel / total if total != 0 else kernel


def weighted_f_measure(
    pred: np.ndarray, gt: np.ndarray, beta2: float = WF_BETA2
) -> float:
    """
    Weighted F-measure: errors are spread to background pixels from their
    nearest foreground pixel, smoothed by a 7×7 Gaussian (σ = 5), and
    background errors are weighted up with distance from the object.
    """
    pred, gt = _prepare(pred, gt)
    if not gt.any():
        return 1.0 if not pred.any() else 0.0
    if not pred.any():
        return 0.0

    dist, (idx_r, idx_c) = distance_transform_edt(~gt, return_indices=True)
    error = np.abs(pred - gt)
    spread = error.copy()
    background = ~gt
    spread[background] = error[idx_r[background], idx_c[background]]

    smoothed = convolve(spread, weights=gaussian_kernel(), mode="constant", cval=0.0)
    min_error = np.where(gt & (smoothed < error), smoothed, error)
    importance = np.where(background, 2.0 - np.exp(np.log(0.5) / 5.0 * dist), 1.0)
    weighted_error = min_error * importance

    tp_w = gt.sum() - weighted_error[gt].sum()
    fp_w = weighted_error[background].sum()
    recall = 1.0 - weighted_error[gt].mean()
    precision = tp_w / (tp_w + fp_w + EPS)
    score = (1.0 + beta2) * recall * precision / (recall + beta2 * precision + EPS)
    return float(score)


#
# Reports
#

REPORT_COLUMNS = (
    ("s_alpha", "$S_\\alpha$ ↑"),
    ("f_w_beta", "$F^w_\\beta$ ↑"),
    ("mae", "$M$ ↓"),
    ("e_adp", "$E^{adp}_\\phi$ ↑"),
    ("e_mean", "$E^{mean}_\\phi$ ↑"),
    ("e_max", "$E^{max}_\\phi$ ↑"),
    ("f_adp", "$F^{adp}_\\beta$ ↑"),
    ("f_mean", "$F^{mean}_\\beta$ ↑"),
    ("f_max", "$F^{max}_\\beta$ ↑"),
)


@dataclass(frozen=True)
class MetricReport:
    s_alpha: float
    f_w_beta: float
    mae: float
    e_adp: float
    e_mean: float
    e_max: float
    f_adp: float
    f_mean: float
    f_max: float

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)

    @classmethod
    def average(cls, reports: Sequence["MetricReport"]) -> "MetricReport":
        if not reports:
            raise ValueError("Cannot average an empty list of reports")
        return cls(
            **{
                f.name: float(np.mean([getattr(r, f.name) for r in reports]))
                for f in fields(cls)
            }
        )

    def markdown_row(self, label: str) -> str:
        values = " | ".join(f"{getattr(self, key):.4f}" for key, _ in REPORT_COLUMNS)
        return f"| {label} | {values} |"


def markdown_table(
    rows: Sequence[Tuple[str, MetricReport]], first_column: str = "Run"
) -> str:
    """Markdown table with one row per report, columns in the standard COD order."""
    titles = " | ".join(title for _, title in REPORT_COLUMNS)
    header = f"| {first_column} | {titles} |"
    rule = "|" + "---|" * (len(REPORT_COLUMNS) + 1)
    body = [report.markdown_row(label) for label, report in rows]
    return "\n".join([header, rule] + body) + "\n"


@dataclass(frozen=True)
class SampleEvaluation:
    id: str
    report: MetricReport
    f_curve: np.ndarray
    e_curve: np.ndarray
    precision: np.ndarray
    recall: np.ndarray


def evaluate_sample(
    sample_id: str, pred: np.ndarray, gt: np.ndarray
) -> SampleEvaluation:
    pred = normalize_prediction(pred)
    f_curve = f_measure_curve(pred, gt)
    e_curve = e_measure_curve(pred, gt)
    precision, recall = precision_recall_curve(pred, gt)
    report = MetricReport(
        s_alpha=s_measure(pred, gt),
        f_w_beta=weighted_f_measure(pred, gt),
        mae=mae(pred, gt),
        e_adp=e_curve.adaptive,
        e_mean=e_curve.mean,
        e_max=e_curve.max,
        f_adp=f_curve.adaptive,
        f_mean=f_curve.mean,
        f_max=f_curve.max,
    )
    return SampleEvaluation(
        sample_id, report, f_curve.curve, e_curve.curve, precision, recall
    )


def _pair_paths(
    pred_dir: Path, gt_dir: Path, ids: Optional[Sequence[str]] = None
) -> List[Tuple[str, Path, Path]]:
    preds = {p.stem: p for p in pred_dir.glob(f"*{IMAGE_SUFFIX}") if p.is_file()}
    gts = {p.stem: p for p in gt_dir.glob(f"*{IMAGE_SUFFIX}") if p.is_file()}
    if ids is not None:
        wanted = set(ids)
        preds = {k: v for k, v in preds.items() if k in wanted}
        gts = {k: v for k, v in gts.items() if k in wanted}
    if not preds:
        raise ValueError(f"No predictions found in {pred_dir}")
    missing_gt = sorted(set(preds) - set(gts))
    if missing_gt:
        raise ValueError(
            f"Prediction '{missing_gt[0]}{IMAGE_SUFFIX}' "
            f"has no ground truth in {gt_dir}"
        )
    missing_pred = sorted(set(gts) - set(preds))
    if missing_pred:
        raise ValueError(
            f"Ground truth '{missing_pred[0]}{IMAGE_SUFFIX}' "
            f"has no prediction in {pred_dir}"
        )
    return [(stem, preds[stem], gts[stem]) for stem in sorted(preds)]


def _evaluate_paths(item: Tuple[str, Path, Path]) -> SampleEvaluation:
    sample_id, pred_path, gt_path = item
    pred = read_image(pred_path, 1)[..., 0].astype(np.float64)
    gt = read_mask(gt_path)
    if pred.shape != gt.shape:
        raise ValueError(
            f"Sample '{sample_id}': prediction {pred.shape} and "
            f"ground truth {gt.shape} differ in size"
        )
    return evaluate_sample(sample_id, pred, gt)


@dataclass
class DatasetEvaluation:
    report: MetricReport
    samples: List[SampleEvaluation]

    def per_sample(self) -> Dict[str, Dict[str, float]]:
        return {s.id: s.report.to_dict() for s in self.samples}


def evaluate_dataset(
    pred_dir: Path,
    gt_dir: Path,
    workers: int = 1,
    ids: Optional[Sequence[str]] = None,
) -> DatasetEvaluation:
    """
    Evaluate every prediction PNG against the same-named mask PNG.

    Per-sample metrics are averaged uniformly. Samples may be evaluated in
    parallel; results are reduced in sorted id order. When ids is given only
    those samples are paired.
    """
    pred_dir, gt_dir = Path(pred_dir), Path(gt_dir)
    pairs = _pair_paths(pred_dir, gt_dir, ids)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            samples = list(pool.map(_evaluate_paths, pairs))
    else:
        samples = [_evaluate_paths(pair) for pair in pairs]

    report = MetricReport.average([s.report for s in samples])
    logger.info(
        f"Evaluated {len(samples)} samples from {pred_dir}: "
        f"S={report.s_alpha:.4f} Fw={report.f_w_beta:.4f} M={report.mae:.4f}"
    )
    return DatasetEvaluation(report, samples)


def write_report(
    evaluation: DatasetEvaluation,
    out_dir: Path,
    label: str = "SWNet",
    extra: Optional[Dict[str, Any]] = None,
) -> Dict[str, Path]:
    """
    Write report.json, report.md and sweep.csv (dataset-mean threshold curves).

    Returns:
        Mapping of artifact name to written path
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    payload: Dict[str, Any] = {
        "label": label,
        "columns": [key for key, _ in REPORT_COLUMNS],
        "report": evaluation.report.to_dict(),
        "per_sample": evaluation.per_sample(),
    }
    if extra:
        payload.update(extra)
    json_path = out_dir / "report.json"
    json_path.write_text(json.dumps(payload, indent=2), encoding="utf-8")

    md_path = out_dir / "report.md"
    md_path.write_text(markdown_table([(label, evaluation.report)]), encoding="utf-8")

    csv_path = out_dir / "sweep.csv"
    stacked = {
        "precision": np.mean([s.precision for s in evaluation.samples], axis=0),
        "recall": np.mean([s.recall for s in evaluation.samples], axis=0),
        "f_measure": np.mean([s.f_curve for s in evaluation.samples], axis=0),
        "e_measure": np.mean([s.e_curve for s in evaluation.samples], axis=0),
    }
    with csv_path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["threshold", *stacked])
        for index, threshold in enumerate(THRESHOLDS):
            values = [f"{column[index]:.10f}" for column in stacked.values()]
            writer.writerow([f"{threshold:.6f}", *values])

    logger.info(f"Wrote metric report to {json_path}")
    return {"json": json_path, "markdown": md_path, "csv": csv_path}


def load_report(path: Path) -> Tuple[str, MetricReport]:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    label = payload.get("label", Path(path).parent.name)
    return label, MetricReport(**payload["report"])


def join_reports(paths: Sequence[Path], first_column: str = "Run") -> str:
    """One Markdown table from several report.json files, in the given order."""
    if not paths:
        raise ValueError("No reports to join")
    return markdown_table([load_report(p) for p in paths], first_column)
