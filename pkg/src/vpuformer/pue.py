"""Unified 1-D Gaussian encoding of clicks, boxes, and scribbles.

Every prompt becomes a vector [q_h, q_v, q_b]: horizontal and vertical
property-probability profiles over the image axes plus a one-hot intent
code. Profiles come from a hard-cutoff Gaussian of a combined
spatial-times-visual distance.
"""
from __future__ import annotations

import io
from dataclasses import dataclass, field
from enum import Enum

import numpy as np


class ValidationError(ValueError):
    pass


class BoundsError(ValidationError):
    pass


class PromptKind(str, Enum):
    CLICK = "click"
    BOX = "box"
    SCRIBBLE = "scribble"


@dataclass(frozen=True)
class ImagePlane:
    """RGB image with values in [0, 1], stored (H, W, 3) row-major."""
    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ValidationError(f"expected (H, W, 3), got {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValidationError("image must be at least 1x1")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValidationError("pixel values must lie in [0, 1]")
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    def luminance(self) -> np.ndarray:
        """Scalar pixel value per location: mean of the RGB channels."""
        return self.data.mean(axis=2)


def round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


@dataclass(frozen=True)
class Prompt:
    kind: PromptKind
    positive: bool
    click: tuple[int, int] | None = None            # (x0, y0)
    box: tuple[int, int, int, int] | None = None    # (x0, y0, w0, h0), center+extent
    scribble: tuple[tuple[int, int], ...] | None = None

    @staticmethod
    def make_click(x: int, y: int, positive: bool) -> "Prompt":
        return Prompt(PromptKind.CLICK, positive, click=(int(x), int(y)))

    @staticmethod
    def make_box(cx: int, cy: int, w: int, h: int, positive: bool) -> "Prompt":
        if w < 1 or h < 1:
            raise ValidationError("box extent must be at least 1x1")
        return Prompt(PromptKind.BOX, positive, box=(int(cx), int(cy), int(w), int(h)))

    @staticmethod
    def make_scribble(points, positive: bool) -> "Prompt":
        pts = tuple((int(x), int(y)) for x, y in points)
        if not pts:
            raise ValidationError("scribble needs at least one point")
        return Prompt(PromptKind.SCRIBBLE, positive, scribble=pts)


@dataclass(frozen=True)
class EncoderConfig:
    sigma: float = 3.0

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValidationError("sigma must be positive")


@dataclass(frozen=True)
class PromptVector:
    q_h: np.ndarray
    q_v: np.ndarray
    q_b: np.ndarray  # [1,0] positive, [0,1] negative
    sigma: float

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.q_h, self.q_v, self.q_b])

    @property
    def positive(self) -> bool:
        return bool(self.q_b[0] == 1.0)

    def to_csv(self) -> str:
        """index,value,segment rows; values at 9 significant digits."""
        buf = io.StringIO()
        buf.write("index,value,segment\n")
        idx = 0
        for seg, vec in (("h", self.q_h), ("v", self.q_v), ("b", self.q_b)):
            for v in vec:
                buf.write(f"{idx},{v:.9g},{seg}\n")
                idx += 1
        return buf.getvalue()


def _check_point(image: ImagePlane, x: int, y: int) -> None:
    if not (0 <= x < image.width and 0 <= y < image.height):
        raise BoundsError(f"point ({x}, {y}) outside {image.width}x{image.height}")


def _intent_onehot(positive: bool) -> np.ndarray:
    return np.array([1.0, 0.0]) if positive else np.array([0.0, 1.0])


def distance_product(image: ImagePlane, axis: str, anchor: tuple[int, int]) -> np.ndarray:
    """Combined distance along one axis: |i - a| * |p_i - p_a|.

    Pixels are read along the anchor's own row (horizontal) or column
    (vertical); p is the mean-RGB luminance.
    """
    x0, y0 = anchor
    _check_point(image, x0, y0)
    lum = image.luminance()
    if axis == "horizontal":
        profile = lum[y0, :]
        a = x0
    elif axis == "vertical":
        profile = lum[:, x0]
        a = y0
    else:
        raise ValidationError(f"unknown axis {axis!r}")
    idx = np.arange(profile.size)
    return np.abs(idx - a) * np.abs(profile - profile[a])


def quasi_gaussian(d: np.ndarray, sigma: float) -> np.ndarray:
    """exp(-d^2 / 2 sigma^2) inside the sigma support, hard zero outside."""
    if sigma <= 0:
        raise ValidationError("sigma must be positive")
    d = np.asarray(d, dtype=np.float64)
    out = np.exp(-(d ** 2) / (2.0 * sigma ** 2))
    out[d > sigma] = 0.0
    return out


def encode_click(image: ImagePlane, click: Prompt, cfg: EncoderConfig) -> PromptVector:
    if click.kind is not PromptKind.CLICK or click.click is None:
        raise ValidationError("encode_click needs a click prompt")
    x0, y0 = click.click
    _check_point(image, x0, y0)
    q_h = quasi_gaussian(distance_product(image, "horizontal", (x0, y0)), cfg.sigma)
    q_v = quasi_gaussian(distance_product(image, "vertical", (x0, y0)), cfg.sigma)
    q_h[x0] = 1.0
    q_v[y0] = 1.0
    return PromptVector(q_h, q_v, _intent_onehot(click.positive), cfg.sigma)


def encode_box(image: ImagePlane, box: Prompt, cfg: EncoderConfig) -> PromptVector:
    if box.kind is not PromptKind.BOX or box.box is None:
        raise ValidationError("encode_box needs a box prompt")
    x0, y0, w0, h0 = box.box
    if w0 < 1 or h0 < 1:
        raise ValidationError("box extent must be at least 1x1")
    _check_point(image, x0, y0)
    d_h = distance_product(image, "horizontal", (x0, y0))
    d_v = distance_product(image, "vertical", (x0, y0))
    xs = np.arange(image.width)
    ys = np.arange(image.height)
    d_h = np.where(np.abs(xs - x0) <= w0 / 2.0, d_h, np.inf)
    d_v = np.where(np.abs(ys - y0) <= h0 / 2.0, d_v, np.inf)
    q_h = quasi_gaussian(np.where(np.isinf(d_h), cfg.sigma + 1.0, d_h), cfg.sigma)
    q_v = quasi_gaussian(np.where(np.isinf(d_v), cfg.sigma + 1.0, d_v), cfg.sigma)
    q_h[np.isinf(d_h)] = 0.0
    q_v[np.isinf(d_v)] = 0.0
    q_h[x0] = 1.0
    q_v[y0] = 1.0
    return PromptVector(q_h, q_v, _intent_onehot(box.positive), cfg.sigma)


def encode_scribble(image: ImagePlane, scribble: Prompt, cfg: EncoderConfig,
                    rng_seed: int) -> PromptVector:
    """Discretize a scribble against the top-left row/column of its bounding box.

    Per column inside the box, one aligned scribble point is drawn (seeded)
    and its vertical offset from the box's top row becomes the distance;
    rows work symmetrically against the box's left column. At most
    w0 + h0 points are consumed.
    """
    if scribble.kind is not PromptKind.SCRIBBLE or not scribble.scribble:
        raise ValidationError("encode_scribble needs a nonempty scribble")
    pts = np.array(scribble.scribble, dtype=np.int64)
    for x, y in pts:
        _check_point(image, int(x), int(y))
    rng = np.random.default_rng(rng_seed)
    x_min, y_min = pts[:, 0].min(), pts[:, 1].min()
    x_max, y_max = pts[:, 0].max(), pts[:, 1].max()
    q_h = np.zeros(image.width)
    q_v = np.zeros(image.height)
    for x in range(x_min, x_max + 1):
        ys = pts[pts[:, 0] == x][:, 1]
        if ys.size == 0:
            continue
        y_pick = int(ys[rng.integers(ys.size)])
        q_h[x] = quasi_gaussian(np.array([abs(y_pick - y_min)], dtype=float),
                                cfg.sigma)[0]
    for y in range(y_min, y_max + 1):
        xs = pts[pts[:, 1] == y][:, 0]
        if xs.size == 0:
            continue
        x_pick = int(xs[rng.integers(xs.size)])
        q_v[y] = quasi_gaussian(np.array([abs(x_pick - x_min)], dtype=float),
                                cfg.sigma)[0]
    return PromptVector(q_h, q_v, _intent_onehot(scribble.positive), cfg.sigma)


def encode_prompt(image: ImagePlane, prompt: Prompt, cfg: EncoderConfig,
                  rng_seed: int = 0) -> PromptVector:
    if prompt.kind is PromptKind.CLICK:
        return encode_click(image, prompt, cfg)
    if prompt.kind is PromptKind.BOX:
        return encode_box(image, prompt, cfg)
    if prompt.kind is PromptKind.SCRIBBLE:
        return encode_scribble(image, prompt, cfg, rng_seed)
    raise ValidationError(f"unknown prompt kind {prompt.kind!r}")
