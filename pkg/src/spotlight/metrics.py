"""Reference-based image metrics (PSNR/SSIM/RMSE/MAE) and Thurstone Case V
scaling of two-alternative forced-choice study votes.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.stats import norm

from .imagecore import MaskMap, PixelMap

PSNR_CAP_DB = 100.0
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2
SSIM_SIGMA = 1.5
SSIM_RADIUS = 5  # 11x11 window


@dataclass(frozen=True)
class MetricReport:
    psnr: float
    ssim: float
    rmse: float
    mae: float
    region: str  # "full" or "masked"


def _ssim_filter(x: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    out = ndimage.correlate1d(x, kernel, axis=0, mode="reflect")
    return ndimage.correlate1d(out, kernel, axis=1, mode="reflect")


def _ssim_map(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    xs = np.arange(-SSIM_RADIUS, SSIM_RADIUS + 1, dtype=np.float64)
    kernel = np.exp(-(xs**2) / (2.0 * SSIM_SIGMA**2))
    kernel /= kernel.sum()
    mu_a = _ssim_filter(a, kernel)
    mu_b = _ssim_filter(b, kernel)
    var_a = _ssim_filter(a * a, kernel) - mu_a * mu_a
    var_b = _ssim_filter(b * b, kernel) - mu_b * mu_b
    cov = _ssim_filter(a * b, kernel) - mu_a * mu_b
    return ((2 * mu_a * mu_b + SSIM_C1) * (2 * cov + SSIM_C2)) / (
        (mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2)
    )


def pixel_metrics(a: PixelMap, b: PixelMap, mask: MaskMap | None = None) -> MetricReport:
    """MAE, RMSE, PSNR (20*log10(1/RMSE), capped at 100 dB) and Gaussian-window
    SSIM between two images clamped to [0, 1], optionally over a mask."""
    if a.data.shape != b.data.shape:
        raise ValueError("metric inputs must share dimensions")
    x = np.clip(a.data.astype(np.float64), 0.0, 1.0)
    y = np.clip(b.data.astype(np.float64), 0.0, 1.0)

    if mask is not None:
        if mask.data.shape != x.shape[:2]:
            raise ValueError("mask must match image dimensions")
        sel = mask.data >= 0.5
        if not sel.any():
            raise ValueError("empty metric mask")
    else:
        sel = np.ones(x.shape[:2], dtype=bool)

    diff = (x - y)[sel]
    mae = float(np.mean(np.abs(diff)))
    rmse = float(np.sqrt(np.mean(diff**2)))
    psnr = PSNR_CAP_DB if rmse < 1e-5 else float(20.0 * np.log10(1.0 / rmse))

    h, w = x.shape[:2]
    r = SSIM_RADIUS if min(h, w) > 2 * SSIM_RADIUS else 0  # valid-window crop
    ssim_channels = []
    for c in range(x.shape[2]):
        smap = _ssim_map(x[:, :, c], y[:, :, c])
        interior = smap[r : h - r, r : w - r] if r else smap
        region = sel[r : h - r, r : w - r] if r else sel
        if not region.any():
            raise ValueError("mask has no valid SSIM windows")
        ssim_channels.append(float(interior[region].mean()))
    ssim = float(np.mean(ssim_channels))

    return MetricReport(
        psnr=psnr, ssim=ssim, rmse=rmse, mae=mae, region="masked" if mask is not None else "full"
    )


# --- paired-comparison scaling ---------------------------------------------------


@dataclass(frozen=True)
class Vote:
    observer: str
    winner: str
    loser: str


class VotesFormatError(ValueError):
    def __init__(self, message: str, row: int):
        super().__init__(f"row {row}: {message}")
        self.row = row


@dataclass(frozen=True)
class PreferenceMatrix:
    methods: list[str]
    counts: np.ndarray  # counts[i][j] = times i was preferred over j
    observers: int

    def __post_init__(self):
        n = len(self.methods)
        if self.counts.shape != (n, n):
            raise ValueError("counts must be n_methods x n_methods")
        if np.any(self.counts < 0) or np.any(np.diag(self.counts) != 0):
            raise ValueError("counts must be non-negative with a zero diagonal")

    @property
    def n_methods(self) -> int:
        return len(self.methods)


@dataclass(frozen=True)
class ThurstoneResult:
    methods: list[str]
    z: np.ndarray
    ci_low: np.ndarray | None
    ci_high: np.ndarray | None

    def ranking(self) -> list[str]:
        order = np.argsort(-self.z, kind="stable")
        return [self.methods[i] for i in order]


def read_votes_csv(path) -> list[Vote]:
    """Parse `observer,left_method,right_method,choice` rows into votes."""
    votes: list[Vote] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != [
            "observer", "left_method", "right_method", "choice",
        ]:
            raise VotesFormatError("expected header observer,left_method,right_method,choice", 1)
        for row_num, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != 4:
                raise VotesFormatError(f"expected 4 fields, got {len(row)}", row_num)
            observer, left, right, choice = (cell.strip() for cell in row)
            if choice not in ("left", "right"):
                raise VotesFormatError(f"choice must be left or right, got {choice!r}", row_num)
            if left == right:
                raise VotesFormatError("left and right methods must differ", row_num)
            winner, loser = (left, right) if choice == "left" else (right, left)
            votes.append(Vote(observer, winner, loser))
    return votes


def preference_matrix_from_votes(votes: list[Vote]) -> PreferenceMatrix:
    methods = sorted({v.winner for v in votes} | {v.loser for v in votes})
    index = {m: i for i, m in enumerate(methods)}
    counts = np.zeros((len(methods), len(methods)), dtype=np.int64)
    for v in votes:
        counts[index[v.winner], index[v.loser]] += 1
    observers = len({v.observer for v in votes})
    return PreferenceMatrix(methods, counts, observers)


def _scale_from_counts(counts: np.ndarray) -> np.ndarray:
    """Case V scale values: row means of the probit-transformed proportion
    matrix (self-comparisons count as 0.5, contributing probit 0)."""
    n = counts.shape[0]
    z_matrix = np.zeros((n, n), dtype=np.float64)
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            total = counts[i, j] + counts[j, i]
            if total == 0:
                raise ValueError(f"no comparisons between methods {i} and {j}")
            lo = 1.0 / (2.0 * total)  # keeps unanimous pairs off the probit asymptote
            p = np.clip(counts[i, j] / total, lo, 1.0 - lo)
            z_matrix[i, j] = norm.ppf(p)
    scale = z_matrix.mean(axis=1)
    return scale - scale.mean()


def thurstone_case_v(
    pref: PreferenceMatrix,
    bootstrap: int = 1000,
    seed: int = 0,
    votes: list[Vote] | None = None,
) -> ThurstoneResult:
    """Thurstone Case V z-scores with bootstrap 95% confidence intervals.

    With per-observer vote records the bootstrap resamples observers;
    otherwise it falls back to resampling individual votes. bootstrap = 0
    skips the intervals.
    """
    z = _scale_from_counts(pref.counts)
    if bootstrap <= 0:
        return ThurstoneResult(pref.methods, z, None, None)

    rng = np.random.default_rng(seed)
    n = pref.n_methods
    index = {m: i for i, m in enumerate(pref.methods)}
    samples = np.empty((bootstrap, n), dtype=np.float64)

    if votes:
        by_observer: dict[str, list[Vote]] = {}
        for v in votes:
            by_observer.setdefault(v.observer, []).append(v)
        observers = sorted(by_observer)
        for b in range(bootstrap):
            counts = np.zeros((n, n), dtype=np.int64)
            for o in rng.choice(len(observers), size=len(observers), replace=True):
                for v in by_observer[observers[o]]:
                    counts[index[v.winner], index[v.loser]] += 1
            samples[b] = _scale_from_counts(counts)
    else:
        pairs = [(i, j) for i in range(n) for j in range(n) if i != j and pref.counts[i, j] > 0]
        weights = np.array([pref.counts[i, j] for i, j in pairs], dtype=np.float64)
        total = int(weights.sum())
        probs = weights / weights.sum()
        for b in range(bootstrap):
            counts = np.zeros((n, n), dtype=np.int64)
            draw = rng.multinomial(total, probs)
            for (i, j), c in zip(pairs, draw):
                counts[i, j] = c
            samples[b] = _scale_from_counts(counts)

    ci_low = np.percentile(samples, 2.5, axis=0)
    ci_high = np.percentile(samples, 97.5, axis=0)
    return ThurstoneResult(pref.methods, z, ci_low, ci_high)


def simulate_votes(
    scales: dict[str, float],
    observers: int,
    seed: int = 0,
    repeats: int = 1,
) -> list[Vote]:
    """Synthetic 2AFC votes from ground-truth scale values under the Case V
    probit model: P(i beats j) = Phi((S_i - S_j) / sqrt(2))."""
    rng = np.random.default_rng(seed)
    methods = sorted(scales)
    votes: list[Vote] = []
    for o in range(observers):
        name = f"obs{o:04d}"
        for ai in range(len(methods)):
            for bi in range(ai + 1, len(methods)):
                a, b = methods[ai], methods[bi]
                p = norm.cdf((scales[a] - scales[b]) / np.sqrt(2.0))
                for _ in range(repeats):
                    if rng.random() < p:
                        votes.append(Vote(name, a, b))
                    else:
                        votes.append(Vote(name, b, a))
    return votes


# --- report emitters -------------------------------------------------------------


def report_csv(headers: list[str], rows: list[list]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(headers)
    writer.writerows(rows)
    return buf.getvalue()


def report_markdown(headers: list[str], rows: list[list]) -> str:
    def fmt(cell) -> str:
        return f"{cell:.6f}" if isinstance(cell, float) else str(cell)

    lines = ["| " + " | ".join(headers) + " |", "|" + "|".join("---" for _ in headers) + "|"]
    lines += ["| " + " | ".join(fmt(c) for c in row) + " |" for row in rows]
    return "\n".join(lines) + "\n"
