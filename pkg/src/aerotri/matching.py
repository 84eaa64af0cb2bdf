"""Putative matching: mutual nearest neighbor + Lowe's ratio test,
match/mismatch statistics, and ratio sweeps.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .features import FeatureSet


class DimensionMismatch(DataError):
    pass


class TooFewDescriptors(DataError):
    pass


@dataclass(frozen=True)
class Match:
    index_a: int
    index_b: int
    distance: float


@dataclass(frozen=True)
class MatchConfig:
    ratio: float = 0.7
    cross_check: bool = True

    def __post_init__(self):
        if not 0.0 < self.ratio <= 1.0:
            raise ValueError(f"ratio {self.ratio} not in (0, 1]")


@dataclass(frozen=True)
class MatchStats:
    total_keypoints: int
    matched: int
    false_matches: int

    @property
    def match_rate(self) -> float:
        return self.matched / self.total_keypoints if self.total_keypoints else 0.0

    @property
    def mismatch_rate(self) -> float:
        return self.false_matches / self.matched if self.matched else 0.0


def _pairwise_sqdist(da: np.ndarray, db: np.ndarray) -> np.ndarray:
    d2 = (
        np.sum(da * da, axis=1)[:, None]
        + np.sum(db * db, axis=1)[None, :]
        - 2.0 * da @ db.T
    )
    np.maximum(d2, 0.0, out=d2)
    return d2


def match_features(a: FeatureSet, b: FeatureSet,
                   cfg: MatchConfig = MatchConfig()) -> list[Match]:
    """Ratio test A->B, then mutual-NN cross-check.

    Exhaustive L2 search. Equal-distance nearest-neighbor ties are
    rejected as ambiguous. Output sorted by index_a; at most one match
    per keypoint on each side.
    """
    if a.dim != b.dim:
        raise DimensionMismatch(f"descriptor dims {a.dim} vs {b.dim}")
    if len(a) < 2 or len(b) < 2:
        raise TooFewDescriptors(
            f"need >= 2 descriptors per set, got {len(a)} and {len(b)}"
        )
    da = a.descriptors.astype(np.float64)
    db = b.descriptors.astype(np.float64)
    d2 = _pairwise_sqdist(da, db)

    nn_b = np.argmin(d2, axis=1)
    srt = np.sort(d2, axis=1)
    d1 = np.sqrt(srt[:, 0])
    d2nd = np.sqrt(srt[:, 1])

    # ratio test with tie rejection (d1 == d2nd is ambiguous)
    ok = (d1 < cfg.ratio * d2nd) & (d1 < d2nd)

    nn_a = np.argmin(d2, axis=0)
    mutual = nn_a[nn_b] == np.arange(len(a))
    if cfg.cross_check:
        ok &= mutual
    else:
        # keep one match per B keypoint; when several A keypoints share
        # the same nearest B, only the reverse nearest neighbor survives
        # (ratio-independent, so the accepted set grows with the ratio)
        claimants = np.bincount(nn_b, minlength=len(b))
        ok &= (claimants[nn_b] == 1) | mutual

    return [Match(int(ia), int(nn_b[ia]), float(d1[ia]))
            for ia in np.nonzero(ok)[0]]


def match_stats(matches: list[Match], truth: dict[int, tuple[float, float]],
                fs_b: FeatureSet, tol: float, total_keypoints: int) -> MatchStats:
    """Score matches against ground truth.

    truth maps keypoint index in A to the true pixel location in B. A
    match is false iff the matched B keypoint lies > tol px from the
    true location, or A's keypoint has no true location in B at all.
    """
    if tol <= 0:
        raise ValueError("tol must be > 0")
    false_matches = 0
    for m in matches:
        t = truth.get(m.index_a)
        if t is None:
            false_matches += 1
            continue
        bx, by = fs_b.keypoints[m.index_b, 0], fs_b.keypoints[m.index_b, 1]
        if np.hypot(bx - t[0], by - t[1]) > tol:
            false_matches += 1
    return MatchStats(total_keypoints, len(matches), false_matches)


DEFAULT_RATIO_GRID = [0.50, 0.55, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85, 0.90]


def sweep_ratio(a: FeatureSet, b: FeatureSet, ratios: list[float],
                truth: dict[int, tuple[float, float]], tol: float = 3.0,
                cross_check: bool = True) -> list[tuple[float, MatchStats]]:
    """One MatchStats per ratio threshold."""
    if any(r2 <= r1 for r1, r2 in zip(ratios, ratios[1:])):
        raise ValueError("ratios must be strictly increasing")
    out = []
    for r in ratios:
        matches = match_features(a, b, MatchConfig(ratio=r, cross_check=cross_check))
        out.append((r, match_stats(matches, truth, b, tol, len(a))))
    return out


def sweep_to_csv(results: list[tuple[float, MatchStats]]) -> str:
    lines = ["ratio,total,matched,false,match_rate,mismatch_rate"]
    for r, s in results:
        lines.append(f"{r},{s.total_keypoints},{s.matched},{s.false_matches},"
                     f"{s.match_rate:.6f},{s.mismatch_rate:.6f}")
    return "\n".join(lines) + "\n"
