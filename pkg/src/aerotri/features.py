"""Feature-set model, binary FEAT file I/O, descriptor normalization,
and a Harris-corner fallback detector so the pipeline runs without an
external detector.

FEAT format (little-endian): magic b"FEAT", version u32=1, width u32,
height u32, N u32, D u32, then N * (x f32, y f32, score f32), then
N*D f32 descriptors row-major.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

FEAT_MAGIC = b"FEAT"
FEAT_VERSION = 1
_HEADER = struct.Struct("<4s5I")


class BadMagic(DataError):
    pass


class BadVersion(DataError):
    pass


class TruncatedFile(DataError):
    pass


class BoundsViolation(DataError):
    pass


class InvariantViolation(DataError):
    pass


class ZeroDescriptor(DataError):
    pass


class TooSmall(DataError):
    pass


@dataclass(frozen=True)
class Keypoint:
    x: float
    y: float
    score: float = 0.0


@dataclass
class FeatureSet:
    image_id: str
    image_width: int
    image_height: int
    keypoints: np.ndarray    # (N, 3) float32: x, y, score
    descriptors: np.ndarray  # (N, D) float32

    def __post_init__(self):
        self.keypoints = np.asarray(self.keypoints, dtype=np.float32).reshape(-1, 3)
        d = np.asarray(self.descriptors, dtype=np.float32)
        if d.ndim != 2:
            d = d.reshape(len(self.keypoints), -1)
        self.descriptors = d

    def __len__(self) -> int:
        return len(self.keypoints)

    @property
    def dim(self) -> int:
        return self.descriptors.shape[1]

    def validate(self):
        if len(self.keypoints) != len(self.descriptors):
            raise InvariantViolation(
                f"{len(self.keypoints)} keypoints vs "
                f"{len(self.descriptors)} descriptors"
            )
        if len(self.keypoints):
            x, y = self.keypoints[:, 0], self.keypoints[:, 1]
            if (x.min() < 0 or y.min() < 0
                    or x.max() >= self.image_width
                    or y.max() >= self.image_height):
                raise BoundsViolation(
                    f"keypoints out of {self.image_width}x{self.image_height}"
                )
            if np.any(self.keypoints[:, 2] < 0):
                raise InvariantViolation("negative keypoint score")

    def xy(self) -> np.ndarray:
        return self.keypoints[:, :2].astype(np.float64)


def read_feature_file(content: bytes, image_id: str = "") -> FeatureSet:
    """Decode a FEAT byte stream; lossless, order-preserving."""
    if len(content) < _HEADER.size:
        raise TruncatedFile(f"{len(content)} bytes, header needs {_HEADER.size}")
    magic, version, width, height, n, d = _HEADER.unpack_from(content, 0)
    if magic != FEAT_MAGIC:
        raise BadMagic(f"magic {magic!r}")
    if version != FEAT_VERSION:
        raise BadVersion(f"version {version}")
    expected = _HEADER.size + n * 12 + n * d * 4
    if len(content) != expected:
        raise TruncatedFile(f"{len(content)} bytes, format implies {expected}")
    kp = np.frombuffer(content, dtype="<f4", count=3 * n,
                       offset=_HEADER.size).reshape(n, 3).copy()
    desc = np.frombuffer(content, dtype="<f4", count=n * d,
                         offset=_HEADER.size + n * 12).reshape(n, d).copy()
    fs = FeatureSet(image_id, width, height, kp, desc)
    fs.validate()
    return fs


def write_feature_file(fs: FeatureSet) -> bytes:
    """Canonical FEAT encoding; equal sets produce identical bytes."""
    fs.validate()
    if len(fs):
        norms = np.linalg.norm(fs.descriptors.astype(np.float64), axis=1)
        if np.any(norms < 1e-12):
            raise InvariantViolation("zero-norm descriptor")
    header = _HEADER.pack(FEAT_MAGIC, FEAT_VERSION, fs.image_width,
                          fs.image_height, len(fs), fs.dim)
    return (header
            + fs.keypoints.astype("<f4").tobytes()
            + fs.descriptors.astype("<f4").tobytes())


def normalize_descriptors(fs: FeatureSet) -> FeatureSet:
    """Return a copy with every descriptor scaled to unit L2 norm."""
    desc = fs.descriptors.astype(np.float64)
    if len(desc):
        norms = np.linalg.norm(desc, axis=1)
        if np.any(norms < 1e-12):
            raise ZeroDescriptor(
                f"descriptor {int(np.argmin(norms))} has norm {norms.min():.3g}"
            )
        desc = desc / norms[:, None]
    return FeatureSet(fs.image_id, fs.image_width, fs.image_height,
                      fs.keypoints.copy(), desc.astype(np.float32))


# ---------------------------------------------------------------------------
# Built-in Harris detector (stand-in for an external detector)

PATCH = 16  # descriptor patch side


def _harris_response(img: np.ndarray, k: float = 0.04) -> np.ndarray:
    gray = img.astype(np.float64) / 255.0
    gy, gx = np.gradient(gray)
    ixx, iyy, ixy = gx * gx, gy * gy, gx * gy

    def box3(a):
        p = np.pad(a, 1, mode="edge")
        return (p[:-2, :-2] + p[:-2, 1:-1] + p[:-2, 2:]
                + p[1:-1, :-2] + p[1:-1, 1:-1] + p[1:-1, 2:]
                + p[2:, :-2] + p[2:, 1:-1] + p[2:, 2:]) / 9.0

    sxx, syy, sxy = box3(ixx), box3(iyy), box3(ixy)
    det = sxx * syy - sxy * sxy
    tr = sxx + syy
    return det - k * tr * tr


def detect_builtin(image: np.ndarray, max_features: int = 2000) -> FeatureSet:
    """Harris corners with 3x3 non-max suppression and patch descriptors.

    Descriptors: 16x16 intensity patch, horizontally pair-averaged to
    128 dims, mean-subtracted, L2-normalized. Deterministic for
    identical input.
    """
    img = np.asarray(image)
    h, w = img.shape
    if h < 32 or w < 32:
        raise TooSmall(f"image {w}x{h}, need >= 32x32")

    resp = _harris_response(img)
    rmax = resp.max()
    if rmax <= 0:
        return FeatureSet("", w, h, np.zeros((0, 3), np.float32),
                          np.zeros((0, 128), np.float32))
    floor = 0.01 * rmax

    # 3x3 non-maximum suppression
    p = np.pad(resp, 1, mode="constant", constant_values=-np.inf)
    neigh = np.stack([p[i:i + h, j:j + w]
                      for i in range(3) for j in range(3) if not (i == 1 and j == 1)])
    is_max = (resp > floor) & (resp >= neigh.max(axis=0))

    half = PATCH // 2
    ys, xs = np.nonzero(is_max)
    keep = ((xs >= half) & (xs < w - half) & (ys >= half) & (ys < h - half))
    ys, xs = ys[keep], xs[keep]
    scores = resp[ys, xs]
    order = np.lexsort((xs, ys, -scores))[:max_features]
    ys, xs, scores = ys[order], xs[order], scores[order]

    gray = img.astype(np.float64) / 255.0
    descs = np.empty((len(xs), 128), np.float64)
    for i, (x, y) in enumerate(zip(xs, ys)):
        patch = gray[y - half:y + half, x - half:x + half]
        d = patch.reshape(PATCH, PATCH // 2, 2).mean(axis=2).ravel()
        d = d - d.mean()
        n = np.linalg.norm(d)
        descs[i] = d / n if n > 1e-12 else 0.0

    # drop any flat (zero-norm) patches
    good = np.linalg.norm(descs, axis=1) > 0.5
    xs, ys, scores, descs = xs[good], ys[good], scores[good], descs[good]

    kp = np.stack([xs.astype(np.float32), ys.astype(np.float32),
                   scores.astype(np.float32)], axis=1)
    return FeatureSet("", w, h, kp, descs.astype(np.float32))


def read_pgm(content: bytes) -> np.ndarray:
    """Binary P5 PGM with maxval 255."""
    if not content.startswith(b"P5"):
        raise DataError("not a binary P5 PGM")
    # header tokens: P5 width height maxval, with comments allowed
    tokens = []
    i = 2
    while len(tokens) < 3:
        while i < len(content) and content[i:i + 1].isspace():
            i += 1
        if content[i:i + 1] == b"#":
            while i < len(content) and content[i] != 0x0A:
                i += 1
            continue
        j = i
        while j < len(content) and not content[j:j + 1].isspace():
            j += 1
        tokens.append(content[i:j])
        i = j
    i += 1  # single whitespace after maxval
    w, h, maxval = (int(t) for t in tokens)
    if maxval != 255:
        raise DataError(f"PGM maxval {maxval}, expected 255")
    data = content[i:i + w * h]
    if len(data) != w * h:
        raise DataError("PGM pixel data truncated")
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w)


def write_pgm(img: np.ndarray) -> bytes:
    img = np.asarray(img, dtype=np.uint8)
    h, w = img.shape
    return f"P5\n{w} {h}\n255\n".encode() + img.tobytes()
