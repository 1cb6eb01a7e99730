"""Seeded synthetic detector standing in for a trained network.

Randomness comes from xoshiro256** (Blackman & Vigna) whose 256-bit state is
filled by four successive splitmix64 outputs of the 64-bit seed. Doubles are
``(next() >> 11) * 2**-53``; Poisson draws use Knuth's product-of-uniforms
method. Every draw is listed in :meth:`DetectorOracle.detect` so the stream
can be reproduced in any language.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from wsod_pgt.geometry import BBox
from wsod_pgt.voc_io import AnnotatedObject, Detection, ImageAnnotation

_MASK = (1 << 64) - 1

# Spurious boxes score in [0, SPURIOUS_SCORE_MAX).
SPURIOUS_SCORE_MAX = 0.5
# Spurious box sides are this fraction range of the image sides.
SPURIOUS_SIZE = (0.1, 0.5)
MIN_SIDE = 1.0


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK


def splitmix64(state: int) -> tuple[int, int]:
    """Return (new_state, output)."""
    state = (state + 0x9E3779B97F4A7C15) & _MASK
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return state, z ^ (z >> 31)


class Xoshiro256StarStar:
    def __init__(self, seed: int) -> None:
        sm = seed & _MASK
        s = []
        for _ in range(4):
            sm, out = splitmix64(sm)
            s.append(out)
        self.s = s

    def next_u64(self) -> int:
        s = self.s
        result = (_rotl((s[1] * 5) & _MASK, 7) * 9) & _MASK
        t = (s[1] << 17) & _MASK
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = _rotl(s[3], 45)
        return result

    def random(self) -> float:
        """Uniform double in [0, 1)."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def uniform(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.random()

    def below(self, n: int) -> int:
        """Integer in [0, n) by multiply-shift on the top 53 bits."""
        return min(int(self.random() * n), n - 1)

    def poisson(self, lam: float) -> int:
        if lam <= 0.0:
            return 0
        limit = math.exp(-lam)
        k, p = 0, self.random()
        while p > limit:
            k += 1
            p *= self.random()
        return k


@dataclass(frozen=True)
class OracleConfig:
    seed: int = 0
    jitter_frac: float = 0.0
    miss_rate: float = 0.0
    fp_rate: float = 0.0
    score_noise: float = 0.0
    epoch_gain: float = 0.0

    def __post_init__(self) -> None:
        if not 0 <= self.seed <= _MASK:
            raise ValueError(f"seed must fit in 64 unsigned bits, got {self.seed}")
        for name in ("jitter_frac", "fp_rate", "score_noise", "epoch_gain"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be finite and >= 0, got {v}")
        if not 0.0 <= self.miss_rate <= 1.0:
            raise ValueError(f"miss_rate must lie in [0, 1], got {self.miss_rate}")


def _clamp(v: float, lo: float, hi: float) -> float:
    return min(max(v, lo), hi)


def _span(a: float, b: float, limit: float) -> tuple[float, float]:
    """Order two coordinates and keep them at least MIN_SIDE apart inside
    [0, limit]."""
    lo, hi = (a, b) if a <= b else (b, a)
    lo, hi = _clamp(lo, 0.0, limit), _clamp(hi, 0.0, limit)
    side = min(MIN_SIDE, limit)
    if hi - lo < side:
        lo = _clamp(lo, 0.0, limit - side)
        hi = lo + side
    return lo, hi


class DetectorOracle:
    """Stateful noisy copy of the ground truth.

    The epoch counter starts at 1. Every :meth:`advance_epoch` shrinks the
    effective jitter and miss rate by ``(1 - epoch_gain)``.
    """

    def __init__(self, config: OracleConfig) -> None:
        self.config = config
        self.epoch = 1
        self.jitter_frac = config.jitter_frac
        self.miss_rate = config.miss_rate
        self._rng = Xoshiro256StarStar(config.seed)

    def advance_epoch(self) -> DetectorOracle:
        shrink = max(0.0, 1.0 - self.config.epoch_gain)
        self.epoch += 1
        self.jitter_frac = max(0.0, self.jitter_frac * shrink)
        self.miss_rate = max(0.0, self.miss_rate * shrink)
        return self

    def detect(self, gt: ImageAnnotation) -> list[Detection]:
        """Detections for one image.

        Draw order per GT object: miss uniform; if kept, four corner offsets
        (xmin, ymin, xmax, ymax) and one score-noise uniform. Then one Poisson
        count of spurious boxes, each drawing class index, width, height, x,
        y and score in that order.
        """
        rng, cfg = self._rng, self.config
        w, h = float(gt.width), float(gt.height)
        out = []
        for obj in gt.objects:
            if rng.random() < self.miss_rate:
                continue
            b = obj.bbox
            j = self.jitter_frac
            dx0, dy0, dx1, dy1 = (rng.uniform(-j, j) for _ in range(4))
            x0, x1 = _span(b.xmin + dx0 * b.width, b.xmax + dx1 * b.width, w)
            y0, y1 = _span(b.ymin + dy0 * b.height, b.ymax + dy1 * b.height, h)
            box = BBox(x0, y0, x1, y1)
            disp = (math.hypot(x0 - b.xmin, y0 - b.ymin) + math.hypot(x1 - b.xmax, y1 - b.ymax)) / 2
            base = max(0.0, 1.0 - disp / math.hypot(b.width, b.height))
            score = _clamp(base - cfg.score_noise * rng.random(), 0.0, 1.0)
            out.append(Detection(gt.image_id, obj.class_name, score, box))

        classes = sorted({o.class_name for o in gt.objects})
        n_spurious = rng.poisson(cfg.fp_rate) if classes else 0
        for _ in range(n_spurious):
            cls = classes[rng.below(len(classes))]
            bw = w * rng.uniform(*SPURIOUS_SIZE)
            bh = h * rng.uniform(*SPURIOUS_SIZE)
            x0 = rng.uniform(0.0, w - bw)
            y0 = rng.uniform(0.0, h - bh)
            x0, x1 = _span(x0, x0 + bw, w)
            y0, y1 = _span(y0, y0 + bh, h)
            score = SPURIOUS_SCORE_MAX * rng.random()
            out.append(Detection(gt.image_id, cls, score, BBox(x0, y0, x1, y1)))
        return out


def synthetic_dataset(
    n_images: int,
    seed: int = 0,
    classes: tuple[str, ...] = ("aeroplane", "bicycle", "bird", "cat", "dog", "person"),
    classes_per_image: tuple[int, int] = (1, 2),
    instances_per_class: tuple[int, int] = (1, 1),
) -> list[ImageAnnotation]:
    """Random integer-coordinate ground truth with image ids ``000001``...

    Ranges are inclusive.
    """
    rng = Xoshiro256StarStar(seed)
    out = []
    for n in range(1, n_images + 1):
        width = 200 + rng.below(301)
        height = 200 + rng.below(301)
        lo, hi = classes_per_image
        n_cls = min(lo + rng.below(hi - lo + 1), len(classes))
        pool = list(classes)
        present = []
        for _ in range(n_cls):
            present.append(pool.pop(rng.below(len(pool))))
        objects = []
        for cls in sorted(present):
            lo_i, hi_i = instances_per_class
            for _ in range(lo_i + rng.below(hi_i - lo_i + 1)):
                bw = max(2, int(width * rng.uniform(0.15, 0.5)))
                bh = max(2, int(height * rng.uniform(0.15, 0.5)))
                x0 = rng.below(width - bw + 1)
                y0 = rng.below(height - bh + 1)
                objects.append(AnnotatedObject(
                    cls, BBox(float(x0), float(y0), float(x0 + bw), float(y0 + bh))))
        out.append(ImageAnnotation(f"{n:06d}", width, height, tuple(objects)))
    return out
