"""Segmentation evaluation suite: MAE, weighted F-measure, mean E-measure,
and S-measure, plus directory-level evaluation.

Inputs are a prediction map in [0,1] and a binary ground truth of the same
size.  The exact conventions matter and are pinned here:

* weighted F: errors of background pixels are copied from their nearest
  foreground pixel (exact Euclidean distance transform; when several sites
  tie on distance the smallest error among them is copied, which keeps the
  metric transpose-invariant), smoothed by a 7x7 sigma-5 Gaussian whose
  weights are renormalized over the in-image window; background importance
  decays as 2 - exp(ln(0.5)/5 * d); beta^2 = 1.  An empty ground truth has
  undefined recall: the score is reported as 0 and flagged.
* mean E: 256 thresholds (k+1)/256 for k in 0..255 (evenly spaced in (0,1]),
  binarization is pred >= t; the alignment matrix uses mean-centered bias
  maps, and the per-threshold score is the plain average over all pixels.
  Degenerate truths: all-zero -> phi = 1 - M, all-one -> phi = M.
* S: alpha = 0.5; object score 2x/(x^2 + 1 + 2*sigma); region score splits at
  the truth centroid (rounded half-up, split row/col included in the
  top/left blocks) into 4 area-weighted SSIM-form terms with (N-1)-normalized
  moments.  Degenerate truths: all-zero -> 1 - mean(pred), all-one ->
  mean(pred).  The result is clamped to [0,1].
* every denominator is guarded by delta = 1e-12.
"""

import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import backend

DELTA = 1e-12
EM_THRESHOLDS = (np.arange(256, dtype=np.float64) + 1.0) / 256.0
WFM_BETA2 = 1.0
SM_ALPHA = 0.5


def _check_pair(pred, gt):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape or pred.ndim != 2:
        raise ValueError(f"metric inputs must be equal 2-D maps, got "
                         f"{pred.shape} and {gt.shape}")
    if not np.isfinite(pred).all():
        raise ValueError("prediction contains non-finite values")
    if pred.min() < 0.0 or pred.max() > 1.0:
        raise ValueError("prediction must lie in [0,1]")
    if not np.all((gt == 0.0) | (gt == 1.0)):
        raise ValueError("ground truth must be strictly binary")
    return pred, gt


def mae(pred, gt):
    """Mean absolute difference, in [0,1]."""
    pred, gt = _check_pair(pred, gt)
    return float(np.abs(pred - gt).mean())


# -- weighted F-measure -----------------------------------------------------------

def _gaussian_kernel(size=7, sigma=5.0):
    half = size // 2
    ax = np.arange(-half, half + 1, dtype=np.float64)
    k = np.exp(-(ax[:, None] ** 2 + ax[None, :] ** 2) / (2.0 * sigma * sigma))
    return k / k.sum()

_WFM_KERNEL = _gaussian_kernel()
_WFM_NORM_CACHE = {}

# Below this pixel count the jitted kernels lose to their own dispatch
# overhead; tiny inputs take the plain-numpy implementations directly.
_SMALL_IMAGE = 16384


def _conv_impl(size):
    from .kernels import numpy_impl
    return numpy_impl if size <= _SMALL_IMAGE else backend


def _smooth_renormalized(x):
    """7x7 sigma-5 Gaussian, weights renormalized over the in-image window
    (so constants are preserved up to the border)."""
    impl = _conv_impl(x.size)
    k = _WFM_KERNEL.reshape(1, 1, 7, 7)
    num = impl.conv2d_forward(x.reshape(1, 1, *x.shape), k, 1, 3, 1)[0, 0]
    den = _WFM_NORM_CACHE.get(x.shape)
    if den is None:
        den = impl.conv2d_forward(np.ones((1, 1, *x.shape)), k, 1, 3, 1)[0, 0]
        if len(_WFM_NORM_CACHE) < 64:
            _WFM_NORM_CACHE[x.shape] = den
    return num / den


def weighted_fmeasure(pred, gt):
    """Distance-weighted F-score in [0,1]; see the module docstring for the
    pinned error-propagation scheme.  Returns (score, empty_gt_flag)."""
    pred, gt = _check_pair(pred, gt)
    fg = gt > 0.5
    if not fg.any():
        return 0.0, True
    err = np.abs(pred - gt)
    dist2, copied = _conv_impl(gt.size).edt_copy_nearest(fg, err)
    err_t = err.copy()
    bg = ~fg
    err_t[bg] = copied[bg]
    smoothed = _smooth_renormalized(err_t)
    err_min = err.copy()
    take = fg & (smoothed < err)
    err_min[take] = smoothed[take]
    importance = np.ones_like(pred)
    importance[bg] = 2.0 - np.exp(math.log(0.5) / 5.0 * np.sqrt(dist2[bg]))
    weighted = err_min * importance
    fg_count = float(fg.sum())
    tp = fg_count - float(weighted[fg].sum())
    fp = float(weighted[bg].sum())
    fn = float(weighted[fg].sum())
    recall = tp / (tp + fn + DELTA)
    precision = tp / (tp + fp + DELTA)
    denom = WFM_BETA2 * precision + recall
    if denom <= DELTA:
        return 0.0, False
    score = (1.0 + WFM_BETA2) * precision * recall / denom
    return float(min(max(score, 0.0), 1.0)), False


# -- mean E-measure -----------------------------------------------------------------

def _alignment_score(m_bin, gt, gt_sum, size):
    if gt_sum == 0:
        phi = 1.0 - m_bin
    elif gt_sum == size:
        phi = m_bin
    else:
        bias_g = gt - gt.mean()
        bias_m = m_bin - m_bin.mean()
        xi = 2.0 * bias_g * bias_m / (bias_g * bias_g + bias_m * bias_m + DELTA)
        phi = (1.0 + xi) ** 2 / 4.0
    return float(phi.sum()) / size


def mean_emeasure(pred, gt):
    """Enhanced-alignment score averaged over the 256 binarization
    thresholds; in [0,1]."""
    pred, gt = _check_pair(pred, gt)
    size = gt.size
    gt_sum = int(gt.sum())
    # The alignment score only changes when the binarization does, i.e. at
    # distinct prediction values; group thresholds by the pattern they yield.
    levels = np.unique(pred)
    bucket = np.searchsorted(levels, EM_THRESHOLDS, side="left")
    total = 0.0
    for j in np.unique(bucket):
        count = int((bucket == j).sum())
        m_bin = (pred >= levels[j]) if j < len(levels) else np.zeros_like(pred)
        total += count * _alignment_score(m_bin.astype(np.float64), gt, gt_sum, size)
    return total / len(EM_THRESHOLDS)


# -- S-measure -----------------------------------------------------------------------

def _object_score(values):
    if values.size == 0:
        return 0.0
    x = float(values.mean())
    sigma = float(values.std())
    return 2.0 * x / (x * x + 1.0 + 2.0 * sigma + DELTA)


def _ssim_form(p, g):
    n = p.size
    x = float(p.mean())
    y = float(g.mean())
    sx = float(((p - x) ** 2).sum()) / (n - 1 + DELTA)
    sy = float(((g - y) ** 2).sum()) / (n - 1 + DELTA)
    sxy = float(((p - x) * (g - y)).sum()) / (n - 1 + DELTA)
    a = 4.0 * x * y * sxy
    b = (x * x + y * y) * (sx + sy)
    if a != 0.0:
        return a / (b + DELTA)
    return 1.0 if b == 0.0 else 0.0


def _centroid(gt):
    rows, cols = np.nonzero(gt)
    cy = int(math.floor(rows.mean() + 0.5))
    cx = int(math.floor(cols.mean() + 0.5))
    return cy, cx


def smeasure(pred, gt):
    """Structural similarity mixing object- and region-aware terms; in [0,1]."""
    pred, gt = _check_pair(pred, gt)
    mu = float(gt.mean())
    if mu == 0.0:
        return float(min(max(1.0 - pred.mean(), 0.0), 1.0))
    if mu == 1.0:
        return float(min(max(pred.mean(), 0.0), 1.0))

    fg = gt > 0.5
    s_object = mu * _object_score(pred[fg]) + (1.0 - mu) * _object_score((1.0 - pred)[~fg])

    cy, cx = _centroid(gt)
    h, w = gt.shape
    s_region = 0.0
    for rs, cs in ((slice(0, cy + 1), slice(0, cx + 1)),
                   (slice(0, cy + 1), slice(cx + 1, w)),
                   (slice(cy + 1, h), slice(0, cx + 1)),
                   (slice(cy + 1, h), slice(cx + 1, w))):
        g = gt[rs, cs]
        if g.size == 0:
            continue
        weight = g.size / gt.size
        s_region += weight * _ssim_form(pred[rs, cs], g)

    score = SM_ALPHA * s_object + (1.0 - SM_ALPHA) * s_region
    return float(min(max(score, 0.0), 1.0))


# -- dataset evaluation ----------------------------------------------------------------

@dataclass
class ImageScores:
    name: str
    mae: float
    wfm: float
    em: float
    sm: float
    empty_gt: bool = False


@dataclass
class MetricReport:
    rows: list = field(default_factory=list)
    skipped: list = field(default_factory=list)

    @property
    def count(self):
        return len(self.rows)

    def means(self):
        if not self.rows:
            return {"mae": 0.0, "wfm": 0.0, "em": 0.0, "sm": 0.0}
        n = len(self.rows)
        return {key: math.fsum(getattr(r, key) for r in self.rows) / n
                for key in ("mae", "wfm", "em", "sm")}

    def to_dict(self):
        return {
            "count": self.count,
            "means": self.means(),
            "skipped": list(self.skipped),
            "per_image": [{"name": r.name, "mae": r.mae, "wfm": r.wfm,
                           "em": r.em, "sm": r.sm, "empty_gt": r.empty_gt}
                          for r in self.rows],
        }


def evaluate_pair(pred, gt, name=""):
    wfm, flag = weighted_fmeasure(pred, gt)
    return ImageScores(name, mae(pred, gt), wfm, mean_emeasure(pred, gt),
                       smeasure(pred, gt), flag)


def evaluate_dataset(pred_dir, gt_dir):
    """Score same-named grayscale images from two directories.

    Predictions are rescaled from 8-bit to [0,1] and bilinearly resized to
    the truth's size when they differ; truths binarize at 0.5.  Files missing
    a counterpart are recorded in ``skipped``.  Rows are ordered by filename.
    """
    from .data import read_gray  # local import; data also uses this module's report

    pred_names = {f for f in os.listdir(pred_dir)
                  if f.lower().endswith((".png", ".pgm", ".ppm"))}
    gt_names = {f for f in os.listdir(gt_dir)
                if f.lower().endswith((".png", ".pgm", ".ppm"))}
    report = MetricReport()
    report.skipped = sorted(pred_names ^ gt_names)
    for name in sorted(pred_names & gt_names):
        pred = read_gray(os.path.join(pred_dir, name)) / 255.0
        gt = (read_gray(os.path.join(gt_dir, name)) / 255.0 > 0.5).astype(np.float64)
        if pred.shape != gt.shape:
            pred = backend.bilinear_forward(
                pred.reshape(1, 1, *pred.shape), gt.shape[0], gt.shape[1])[0, 0]
            pred = np.clip(pred, 0.0, 1.0)
        report.rows.append(evaluate_pair(pred, gt, name))
    return report


def format_report(report, decimals=6):
    """Tab-separated table: one row per image plus a final MEAN row."""
    fmt = f"{{:.{decimals}f}}"
    lines = ["\t".join(["filename", "mae", "wfm", "em", "sm", "flags"])]
    for r in report.rows:
        flags = "empty_gt" if r.empty_gt else "-"
        lines.append("\t".join([r.name] + [fmt.format(v) for v in
                                           (r.mae, r.wfm, r.em, r.sm)] + [flags]))
    m = report.means()
    lines.append("\t".join(["MEAN"] + [fmt.format(m[k]) for k in
                                       ("mae", "wfm", "em", "sm")] + ["-"]))
    return "\n".join(lines)
