"""Frame-level score assembly, AUROC, parameter accounting, and reports.

A window's fused (multi-actor) score lands on its future frames; frames
covered by several windows take the mean, and uncovered edge frames copy
the nearest covered frame. AUROC is the Mann-Whitney statistic with ties
counted half.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, EvalError
from .pipeline import ScoreRecord, multi_actor_score
from .posedata import LabelSet
from .tensor import Tensor


@dataclass
class FrameScoreSeries:
    video_id: str
    scores: np.ndarray    # one score per frame, starting at frame `start`
    coverage: np.ndarray  # windows contributing per frame
    start: int = 0


@dataclass
class RocResult:
    auroc: float
    curve: list[tuple[float, float]]  # (fpr, tpr), (0,0) .. (1,1)
    n_positive: int
    n_negative: int


def frame_scores(records: list[ScoreRecord], video_lengths: dict[str, int],
                 L: int, l: int) -> dict[str, FrameScoreSeries]:
    """Fuse actors per window position, then spread onto future frames."""
    by_pos: dict[tuple[str, int], list[float]] = {}
    for rec in records:
        if rec.video_id not in video_lengths:
            raise DataError(f"score record references unknown video {rec.video_id!r}")
        by_pos.setdefault((rec.video_id, rec.start_frame), []).append(rec.aggregate)

    sums = {v: np.zeros(n) for v, n in video_lengths.items()}
    counts = {v: np.zeros(n) for v, n in video_lengths.items()}
    for (video, start), actor_scores in by_pos.items():
        fused = multi_actor_score(actor_scores)
        for f in range(start + l, start + L):
            if 0 <= f < video_lengths[video]:
                sums[video][f] += fused
                counts[video][f] += 1

    out: dict[str, FrameScoreSeries] = {}
    for video, n in video_lengths.items():
        covered = counts[video] > 0
        scores = np.zeros(n)
        scores[covered] = sums[video][covered] / counts[video][covered]
        if covered.any():
            idx = np.flatnonzero(covered)
            for f in np.flatnonzero(~covered):
                nearest = idx[np.argmin(np.abs(idx - f))]
                scores[f] = scores[nearest]
        out[video] = FrameScoreSeries(video, scores, counts[video].astype(int))
    return out


def auroc_values(scores: np.ndarray, labels: np.ndarray) -> RocResult:
    """Mann-Whitney AUROC plus the ROC curve over distinct thresholds."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    n_neg = int(labels.size - n_pos)
    if n_pos == 0:
        raise EvalError("labels contain no positive (anomalous) frames")
    if n_neg == 0:
        raise EvalError("labels contain no negative (normal) frames")

    # average ranks with ties sharing the midrank
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(scores.size, dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < scores.size:
        j = i
        while j + 1 < scores.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    auc = u / (n_pos * n_neg)

    # curve: sweep thresholds from high to low, one point per distinct score
    desc = np.argsort(-scores, kind="stable")
    curve = [(0.0, 0.0)]
    tp = fp = 0
    k = 0
    while k < scores.size:
        val = scores[desc[k]]
        while k < scores.size and scores[desc[k]] == val:
            if labels[desc[k]]:
                tp += 1
            else:
                fp += 1
            k += 1
        curve.append((fp / n_neg, tp / n_pos))
    return RocResult(auroc=float(auc), curve=curve, n_positive=n_pos, n_negative=n_neg)


def auroc(series: dict[str, FrameScoreSeries], labels: LabelSet) -> RocResult:
    """Frame-level AUROC over every labeled frame of every scored video."""
    score_list, label_list = [], []
    for video, fs in sorted(series.items()):
        for offset, s in enumerate(fs.scores):
            key = (video, fs.start + offset)
            if key in labels:
                score_list.append(s)
                label_list.append(labels[key])
    if not score_list:
        raise EvalError("no labeled frames overlap the scored videos")
    return auroc_values(np.array(score_list), np.array(label_list))


def roc_integral(curve: list[tuple[float, float]]) -> float:
    """Trapezoidal area under an ROC polyline."""
    fpr = np.array([p[0] for p in curve])
    tpr = np.array([p[1] for p in curve])
    return float(np.trapezoid(tpr, fpr))


# ---------------------------------------------------------------------------
# Parameter accounting
# ---------------------------------------------------------------------------


def param_count(params: dict[str, Tensor]) -> tuple[int, dict[str, int]]:
    """Exact trainable-scalar count, broken down by 'module/' prefix."""
    by_module: dict[str, int] = {}
    total = 0
    for name, p in params.items():
        module = name.split("/", 1)[0]
        n = int(p.data.size)
        by_module[module] = by_module.get(module, 0) + n
        total += n
    return total, by_module


# ---------------------------------------------------------------------------
# Report files
# ---------------------------------------------------------------------------


def write_score_csv(series: dict[str, FrameScoreSeries], path) -> None:
    lines = ["video_id,frame,score"]
    for video, fs in sorted(series.items()):
        for offset, s in enumerate(fs.scores):
            lines.append(f"{video},{fs.start + offset},{float(s)!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_score_csv(path) -> dict[str, FrameScoreSeries]:
    rows: dict[str, list[tuple[int, float]]] = {}
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != "video_id,frame,score":
        raise DataError(f"{path}: bad score CSV header")
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 3:
            raise DataError(f"{path}:{lineno}: expected 3 fields")
        rows.setdefault(parts[0], []).append((int(parts[1]), float(parts[2])))
    out = {}
    for video, items in rows.items():
        items.sort()
        frames = [f for f, _ in items]
        if frames != list(range(frames[0], frames[0] + len(frames))):
            raise DataError(f"{path}: non-contiguous frames for video {video!r}")
        out[video] = FrameScoreSeries(
            video, np.array([s for _, s in items]),
            np.zeros(len(items), dtype=int), start=frames[0])
    return out


def write_roc_csv(roc: RocResult, path) -> None:
    lines = ["fpr,tpr"]
    for fpr, tpr in roc.curve:
        lines.append(f"{float(fpr)!r},{float(tpr)!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_roc_csv(path) -> list[tuple[float, float]]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != "fpr,tpr":
        raise DataError(f"{path}: bad ROC CSV header")
    curve = []
    for line in lines[1:]:
        if not line.strip():
            continue
        a, b = line.split(",")
        curve.append((float(a), float(b)))
    return curve


HIST_BINS = 50


def _svg_histogram(normal: np.ndarray, anomalous: np.ndarray) -> str:
    """Score histogram split by label, rendered as a standalone SVG string.

    Hand-rolled so the bytes are a pure function of the inputs.
    """
    width, height, margin = 640, 360, 40
    all_scores = np.concatenate([normal, anomalous]) if anomalous.size else normal
    lo, hi = float(all_scores.min()), float(all_scores.max())
    if hi <= lo:
        hi = lo + 1.0
    edges = np.linspace(lo, hi, HIST_BINS + 1)
    h_norm, _ = np.histogram(normal, bins=edges)
    h_anom, _ = np.histogram(anomalous, bins=edges) if anomalous.size else (np.zeros(HIST_BINS, dtype=int), None)
    peak = max(1, int(h_norm.max()) if h_norm.size else 1, int(h_anom.max()) if h_anom.size else 1)

    plot_w = width - 2 * margin
    plot_h = height - 2 * margin
    bar_w = plot_w / HIST_BINS

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{margin}" y="20" font-size="13">anomaly score histogram '
        f'(normal=steelblue, anomalous=indianred, bins={HIST_BINS})</text>',
    ]
    for series, color, shift in ((h_norm, "steelblue", 0.0), (h_anom, "indianred", bar_w * 0.35)):
        for b, count in enumerate(series):
            if count == 0:
                continue
            bh = plot_h * count / peak
            x = margin + b * bar_w + shift
            y = height - margin - bh
            parts.append(
                f'<rect x="{x:.3f}" y="{y:.3f}" width="{bar_w * 0.6:.3f}" '
                f'height="{bh:.3f}" fill="{color}" fill-opacity="0.7"/>')
    parts.append(
        f'<text x="{margin}" y="{height - 10}" font-size="11">score range '
        f'[{lo:.6f}, {hi:.6f}]</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def emit_report(series: dict[str, FrameScoreSeries], labels: LabelSet,
                roc: RocResult, out_dir) -> dict[str, Path]:
    """Write scores.csv, roc.csv and histogram.svg; returns the paths."""
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = {
            "scores": out_dir / "scores.csv",
            "roc": out_dir / "roc.csv",
            "histogram": out_dir / "histogram.svg",
        }
        write_score_csv(series, paths["scores"])
        write_roc_csv(roc, paths["roc"])

        normal, anomalous = [], []
        for video, fs in sorted(series.items()):
            for offset, s in enumerate(fs.scores):
                key = (video, fs.start + offset)
                if labels.get(key, False):
                    anomalous.append(s)
                else:
                    normal.append(s)
        svg = _svg_histogram(np.array(normal), np.array(anomalous))
        paths["histogram"].write_text(svg, encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot write report to {out_dir}: {exc}") from exc
    return paths
