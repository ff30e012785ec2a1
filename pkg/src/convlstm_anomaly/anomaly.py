"""Sliding-window error series, regularity scores, persistence-filtered
extrema, anomalous-region proposal, and detection metrics.

The pipeline per test clip: score every input/target window with the
model (`sliding_errors`), normalize errors into regularity scores within
the clip (`regularity`), find persistent minima/maxima (`persistence1d`
+ `filter_extrema`), propose temporal regions around retained minima
(`propose_regions`), and match proposals against ground-truth intervals
(`evaluate`). A proposal counts as a detection when at least the overlap
fraction of it is covered by a ground-truth interval, and multiple hits
on one interval count as a single true positive.

Series indices are window-start frame numbers; a clip of L frames with
window length W yields L - W + 1 scores, so the last W - 1 frames are
never window starts.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, DataError
from .network import CompositeModel, forward_composite

ERROR_SOURCES = ("reconstruction", "prediction", "combined")

SWEEP_THRESHOLDS = tuple(round(0.05 * i, 2) for i in range(1, 21))


def sliding_errors(
    model: CompositeModel, clip, error_source: str = "combined", threads: int = 1
) -> np.ndarray:
    """Window MSE for every start index (stride 1).

    `error_source` picks which loss component is recorded: the past
    reconstruction, the future prediction, or their frame-weighted
    combination.
    """
    if error_source not in ERROR_SOURCES:
        raise ConfigError(
            f"unknown error source {error_source!r}; choose from {ERROR_SOURCES}"
        )
    if error_source != "prediction" and model.past is None:
        raise ConfigError(
            f"error source {error_source!r} needs a composite model with a "
            "past decoder"
        )
    frames = clip.frames if hasattr(clip, "frames") else np.asarray(clip)
    cfg = model.config
    w = cfg.window_len
    n = frames.shape[0] - w + 1
    if n < 1:
        raise DataError(
            f"clip of {frames.shape[0]} frames is shorter than a "
            f"{w}-frame window"
        )

    def one(start: int) -> float:
        with T.no_grad():
            res = forward_composite(
                model,
                list(frames[start : start + cfg.input_len]),
                list(frames[start + cfg.input_len : start + w]),
            )
        if error_source == "reconstruction":
            return res.reconstruction_loss.item()
        if error_source == "prediction":
            return res.prediction_loss.item()
        return res.loss.item()

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            values = list(pool.map(one, range(n)))
    else:
        values = [one(i) for i in range(n)]
    return np.asarray(values)


def regularity(errors) -> np.ndarray:
    """Regularity score g = 1 - (e - min e) / max e, computed per clip.

    The minimum-error window scores exactly 1. A degenerate all-zero
    error series maps to all ones.
    """
    e = np.asarray(errors, dtype=np.float64)
    if e.size == 0:
        raise ConfigError("regularity of an empty error series")
    emax = e.max()
    if emax == 0.0:
        return np.ones_like(e)
    return 1.0 - (e - e.min()) / emax


# ---------------------------------------------------------------------------
# persistence of 1-d extrema


@dataclass(frozen=True)
class ExtremaPair:
    """A local minimum paired with the merge point that kills its
    sublevel component; the global minimum pairs with the global maximum."""

    min_index: int
    min_value: float
    max_index: int
    max_value: float

    @property
    def persistence(self) -> float:
        return self.max_value - self.min_value


def persistence1d(series) -> list[ExtremaPair]:
    """Sublevel-set persistence pairing over a 1-d sequence.

    Indices are processed in ascending (value, index) order — equal
    values break ties toward the lower index — with union-find over
    index adjacency. When two components meet, the one whose minimum is
    higher dies and pairs with the merge index. Pairs are returned
    sorted by minimum index.
    """
    v = np.asarray(series, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise ConfigError("persistence1d needs a non-empty 1-d series")
    n = v.size

    parent = list(range(n))
    comp_min = {}
    processed = [False] * n

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    def key(i: int):
        return (v[i], i)

    pairs = []
    for idx in sorted(range(n), key=key):
        processed[idx] = True
        comp_min[idx] = idx
        for nb in (idx - 1, idx + 1):
            if 0 <= nb < n and processed[nb]:
                ra, rb = find(idx), find(nb)
                if ra == rb:
                    continue
                fa, fb = comp_min[ra], comp_min[rb]
                die, live = (fa, fb) if key(fa) > key(fb) else (fb, fa)
                if die != idx:
                    # a real component dies; joining the fresh singleton
                    # {idx} into a neighbor records nothing
                    pairs.append(
                        ExtremaPair(
                            min_index=die,
                            min_value=float(v[die]),
                            max_index=idx,
                            max_value=float(v[idx]),
                        )
                    )
                parent[ra] = rb
                comp_min[rb] = live

    global_min = min(range(n), key=key)
    global_max = int(np.argmax(v))  # first occurrence on plateaus
    pairs.append(
        ExtremaPair(
            min_index=global_min,
            min_value=float(v[global_min]),
            max_index=global_max,
            max_value=float(v[global_max]),
        )
    )
    pairs.sort(key=lambda p: p.min_index)
    return pairs


def filter_extrema(pairs, threshold: float) -> tuple[list[int], list[int]]:
    """Keep pairs with persistence >= threshold; the global-minimum pair
    (the one spanning the full range) always survives. Returns sorted
    minima indices and their paired maxima indices."""
    if threshold < 0:
        raise ConfigError("persistence threshold must be >= 0")
    if not pairs:
        return [], []
    global_pair = min(pairs, key=lambda p: (p.min_value, p.min_index))
    kept = [
        p for p in pairs if p.persistence >= threshold or p is global_pair
    ]
    minima = sorted(p.min_index for p in kept)
    maxima = sorted({p.max_index for p in kept})
    return minima, maxima


# ---------------------------------------------------------------------------
# region proposal and evaluation


@dataclass(frozen=True)
class AnomalyRegion:
    start: int
    end: int
    minima: tuple[int, ...]

    def as_interval(self) -> tuple[int, int]:
        return (self.start, self.end)


def propose_regions(
    minima,
    maxima,
    series_length: int,
    window: int = 50,
    merge_distance: int = 50,
) -> list[AnomalyRegion]:
    """Turn persistent minima into disjoint anomalous regions.

    Each minimum claims `window` indices on both sides; minima within
    `merge_distance` of each other belong to one event and their claims
    merge. A retained maximum adjacent to an event trims that border to
    the midpoint between the maximum and the nearest contributing
    minimum — unless the maximum lies between two minima of the same
    event. Regions that still overlap afterwards are merged.
    """
    minima = [int(m) for m in minima]
    maxima = [int(m) for m in maxima]
    for seq, what in ((minima, "minima"), (maxima, "maxima")):
        if any(b < a for a, b in zip(seq, seq[1:])):
            raise ConfigError(f"{what} must be sorted ascending")
        if any(m < 0 or m >= series_length for m in seq):
            raise ConfigError(f"{what} must lie within the series bounds")
    if not minima:
        return []

    events: list[list[int]] = [[minima[0]]]
    for m in minima[1:]:
        if m - events[-1][-1] <= merge_distance:
            events[-1].append(m)
        else:
            events.append([m])

    # maxima between two minima of one event never trim anything
    def precluded(mx: int) -> bool:
        return any(ev[0] < mx < ev[-1] for ev in events)

    usable = [mx for mx in maxima if not precluded(mx)]

    regions = []
    for ev in events:
        first, last = ev[0], ev[-1]
        start = max(0, first - window)
        end = min(series_length - 1, last + window)
        left = [mx for mx in usable if mx < first]
        if left:
            start = max(start, (max(left) + first) // 2)
        right = [mx for mx in usable if mx > last]
        if right:
            end = min(end, (min(right) + last) // 2)
        regions.append(AnomalyRegion(start=start, end=end, minima=tuple(ev)))

    merged: list[AnomalyRegion] = []
    for r in regions:
        if merged and r.start <= merged[-1].end:
            prev = merged[-1]
            merged[-1] = AnomalyRegion(
                start=prev.start,
                end=max(prev.end, r.end),
                minima=prev.minima + r.minima,
            )
        else:
            merged.append(r)
    return merged


def detect_regions(
    scores,
    threshold: float,
    window: int = 50,
    merge_distance: int = 50,
) -> list[AnomalyRegion]:
    """Persistence-filter a regularity series and propose regions."""
    scores = np.asarray(scores, dtype=np.float64)
    pairs = persistence1d(scores)
    minima, maxima = filter_extrema(pairs, threshold)
    return propose_regions(minima, maxima, scores.size, window, merge_distance)


@dataclass
class DetectionReport:
    true_positives: int
    false_positives: int
    false_negatives: int
    precision: float
    recall: float
    matches: list[tuple[tuple[int, int], tuple[int, int]]]

    @property
    def f1(self) -> float:
        if self.precision + self.recall == 0:
            return 0.0
        return 2 * self.precision * self.recall / (self.precision + self.recall)


def _as_interval(region) -> tuple[int, int]:
    if isinstance(region, AnomalyRegion):
        return region.as_interval()
    s, e = region
    return (int(s), int(e))


def _interval_overlap(a: tuple[int, int], b: tuple[int, int]) -> int:
    lo = max(a[0], b[0])
    hi = min(a[1], b[1])
    return max(0, hi - lo + 1)


def evaluate(proposals, ground_truth, overlap: float = 0.5) -> DetectionReport:
    """Match proposed regions to ground-truth intervals.

    A proposal detects an interval when `overlap` of the proposal's own
    length is covered by it. Every detected interval is one true
    positive no matter how many proposals hit it; proposals that detect
    nothing are false positives and undetected intervals are false
    negatives.
    """
    if not 0 < overlap <= 1:
        raise ConfigError("overlap fraction must be in (0, 1]")
    props = [_as_interval(p) for p in proposals]
    gts = [_as_interval(g) for g in ground_truth]
    detected = set()
    matches = []
    fp = 0
    for p in props:
        length = p[1] - p[0] + 1
        hit = False
        for gi, g in enumerate(gts):
            if _interval_overlap(p, g) / length >= overlap:
                hit = True
                detected.add(gi)
                matches.append((p, g))
        if not hit:
            fp += 1
    tp = len(detected)
    fn = len(gts) - tp
    precision = 1.0 if tp + fp == 0 else tp / (tp + fp)
    recall = 1.0 if len(gts) == 0 else tp / len(gts)
    return DetectionReport(
        true_positives=tp,
        false_positives=fp,
        false_negatives=fn,
        precision=precision,
        recall=recall,
        matches=matches,
    )


# ---------------------------------------------------------------------------
# threshold sweep


@dataclass(frozen=True)
class SweepRow:
    threshold: float
    true_positives: int
    false_positives: int
    false_negatives: int
    precision: float
    recall: float
    f1: float


def threshold_sweep(
    score_series,
    ground_truths,
    thresholds=SWEEP_THRESHOLDS,
    overlap: float = 0.5,
    window: int = 50,
    merge_distance: int = 50,
) -> list[SweepRow]:
    """Evaluate persistence thresholds over one or more scored clips.

    `score_series` and `ground_truths` are parallel lists (one regularity
    series and one interval list per clip); counts are aggregated.
    """
    if len(score_series) != len(ground_truths):
        raise ConfigError("need one ground-truth list per score series")
    rows = []
    for th in thresholds:
        tp = fp = fn = 0
        for scores, gt in zip(score_series, ground_truths):
            report = evaluate(
                detect_regions(scores, th, window, merge_distance), gt, overlap
            )
            tp += report.true_positives
            fp += report.false_positives
            fn += report.false_negatives
        precision = 1.0 if tp + fp == 0 else tp / (tp + fp)
        recall = 1.0 if tp + fn == 0 else tp / (tp + fn)
        f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
        rows.append(
            SweepRow(
                threshold=float(th),
                true_positives=tp,
                false_positives=fp,
                false_negatives=fn,
                precision=precision,
                recall=recall,
                f1=f1,
            )
        )
    return rows


def best_f1_row(rows: list[SweepRow]) -> SweepRow:
    if not rows:
        raise ConfigError("empty sweep")
    best = rows[0]
    for row in rows[1:]:
        if row.f1 > best.f1:
            best = row
    return best


def window_anomaly_labels(
    ground_truth, n_windows: int, window_len: int
) -> np.ndarray:
    """Boolean label per window start: does [i, i + window_len) intersect
    any ground-truth frame interval?"""
    labels = np.zeros(n_windows, dtype=bool)
    for s, e in ground_truth:
        lo = max(0, int(s) - window_len + 1)
        hi = min(n_windows - 1, int(e))
        if lo <= hi:
            labels[lo : hi + 1] = True
    return labels


# ---------------------------------------------------------------------------
# file output


def write_regularity_csv(path, errors, scores) -> None:
    errors = np.asarray(errors)
    scores = np.asarray(scores)
    if errors.shape != scores.shape:
        raise ConfigError("errors and scores must have equal length")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["window_start", "error", "regularity"])
        for i, (e, g) in enumerate(zip(errors, scores)):
            writer.writerow([i, repr(float(e)), repr(float(g))])


def read_regularity_csv(path) -> tuple[np.ndarray, np.ndarray]:
    errors = []
    scores = []
    with open(path, "r", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["window_start", "error", "regularity"]:
            raise DataError(f"{path}: not a regularity csv (header {header})")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 3:
                raise DataError(f"{path}:{lineno}: expected 3 columns")
            try:
                idx, e, g = int(row[0]), float(row[1]), float(row[2])
            except ValueError:
                raise DataError(f"{path}:{lineno}: malformed row") from None
            if idx != len(errors):
                raise DataError(f"{path}:{lineno}: window indices not contiguous")
            errors.append(e)
            scores.append(g)
    if not errors:
        raise DataError(f"{path}: empty series")
    return np.asarray(errors), np.asarray(scores)


def write_report(path, report: DetectionReport, sweep_rows=None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"true_positives {report.true_positives}\n")
        fh.write(f"false_positives {report.false_positives}\n")
        fh.write(f"false_negatives {report.false_negatives}\n")
        fh.write(f"precision {report.precision:.4f}\n")
        fh.write(f"recall {report.recall:.4f}\n")
        fh.write(f"f1 {report.f1:.4f}\n")
        if sweep_rows:
            fh.write("\nthreshold tp fp fn precision recall f1\n")
            for r in sweep_rows:
                fh.write(
                    f"{r.threshold:.2f} {r.true_positives} {r.false_positives} "
                    f"{r.false_negatives} {r.precision:.4f} {r.recall:.4f} "
                    f"{r.f1:.4f}\n"
                )
