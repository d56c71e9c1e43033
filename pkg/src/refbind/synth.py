"""Procedural cartoon clip generator with exact instance masks.

Scenes are flat-filled shapes (circle / rectangle / triangle) moving on
linear or sinusoidal paths over a uniform background. Rendering is
back-to-front with no anti-aliasing, so the per-pixel label masks are exact
by construction. Sketches are inner label-boundary maps: a pixel is a line
pixel iff it carries a subject label and one of its 4-neighbors carries a
different label.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np


class Shape(str, Enum):
    CIRCLE = "circle"
    RECTANGLE = "rectangle"
    TRIANGLE = "triangle"


class GenerationError(ValueError):
    """Raised when a scene cannot be rendered (e.g. subject never on canvas)."""


@dataclass(frozen=True)
class SubjectSpec:
    """One animated subject: shape, flat fill color, parametric motion.

    ``center0`` is the (y, x) position at frame 0.  Linear motion adds
    ``velocity * t``; sinusoidal motion adds ``amplitude * sin(2*pi*freq*t
    + phase)`` per axis on top of the linear term.  ``size`` is the base
    extent in pixels (circle radius / rectangle half-width / triangle
    half-base); ``size_amplitude`` lets the extent pulse sinusoidally.
    """

    shape: Shape
    fill_color: tuple[int, int, int]
    center0: tuple[float, float]
    velocity: tuple[float, float] = (0.0, 0.0)
    amplitude: tuple[float, float] = (0.0, 0.0)
    frequency: float = 0.0
    phase: float = 0.0
    size: float = 8.0
    size_amplitude: float = 0.0
    size_frequency: float = 0.0
    appear_frame: int = 0
    disappear_frame: int | None = None

    def center_at(self, t: int) -> tuple[float, float]:
        wobble = math.sin(2.0 * math.pi * self.frequency * t + self.phase)
        cy = self.center0[0] + self.velocity[0] * t + self.amplitude[0] * wobble
        cx = self.center0[1] + self.velocity[1] * t + self.amplitude[1] * wobble
        return cy, cx

    def size_at(self, t: int) -> float:
        if self.size_amplitude == 0.0:
            return self.size
        return self.size + self.size_amplitude * math.sin(
            2.0 * math.pi * self.size_frequency * t
        )

    def visible_at(self, t: int) -> bool:
        if t < self.appear_frame:
            return False
        if self.disappear_frame is not None and t >= self.disappear_frame:
            return False
        return True


@dataclass(frozen=True)
class SceneSpec:
    """A full scene: canvas, background palette, and subject list.

    Subjects are drawn in list order; later subjects overwrite earlier ones,
    so the ground-truth mask records the topmost subject per pixel.
    """

    seed: int
    num_frames: int
    canvas: tuple[int, int]
    subjects: tuple[SubjectSpec, ...]
    background_color: tuple[int, int, int] = (235, 235, 235)

    def validate(self) -> None:
        if self.num_frames < 2:
            raise ValueError(f"num_frames must be >= 2, got {self.num_frames}")
        if not 1 <= len(self.subjects) <= 6:
            raise ValueError(
                f"subject count must be in [1, 6], got {len(self.subjects)}"
            )
        for k, sub in enumerate(self.subjects):
            if sub.disappear_frame is not None and not (
                sub.appear_frame < sub.disappear_frame
            ):
                raise ValueError(
                    f"subject {k}: appear_frame {sub.appear_frame} must precede "
                    f"disappear_frame {sub.disappear_frame}"
                )
        colors = [self.background_color] + [s.fill_color for s in self.subjects]
        for a in range(len(colors)):
            for b in range(a + 1, len(colors)):
                sep = max(abs(ca - cb) for ca, cb in zip(colors[a], colors[b]))
                if sep < 64:
                    raise ValueError(
                        f"fill colors {colors[a]} and {colors[b]} differ by "
                        f"{sep} < 64 in every channel"
                    )


@dataclass
class Clip:
    """Rendered clip: RGB frames, exclusive label masks, binary sketches.

    ``gt_masks`` pixels hold 0 for background or the 1-based subject index
    of the topmost subject.  ``sketches`` pixels are exactly {0, 255}.
    """

    frames: np.ndarray  # (L, H, W, 3) uint8
    gt_masks: np.ndarray  # (L, H, W) uint8
    sketches: np.ndarray  # (L, H, W) uint8, values {0, 255}
    spec: SceneSpec | None = None
    meta: dict = field(default_factory=dict)

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def canvas(self) -> tuple[int, int]:
        return self.frames.shape[1], self.frames.shape[2]

    @property
    def num_subjects(self) -> int:
        return int(self.gt_masks.max())

    def subject_area(self, subject: int, t: int) -> int:
        return int(np.count_nonzero(self.gt_masks[t] == subject))


def rasterize(
    shape: Shape, center: tuple[float, float], size: float, canvas: tuple[int, int]
) -> np.ndarray:
    """Exact boolean rasterization of one shape on an integer pixel grid."""
    h, w = canvas
    yy, xx = np.ogrid[:h, :w]
    cy, cx = center
    if shape is Shape.CIRCLE:
        return (yy - cy) ** 2 + (xx - cx) ** 2 <= size**2
    if shape is Shape.RECTANGLE:
        # half extents: size wide, 0.7*size tall
        return (np.abs(xx - cx) <= size) & (np.abs(yy - cy) <= 0.7 * size)
    if shape is Shape.TRIANGLE:
        # upright isoceles: apex at cy - height/2, base halfwidth `size`
        height = 1.6 * size
        top = cy - height / 2.0
        frac = (yy - top) / height  # 0 at apex, 1 at base
        inside_rows = (frac >= 0.0) & (frac <= 1.0)
        halfwidth = size * np.clip(frac, 0.0, 1.0)
        return inside_rows & (np.abs(xx - cx) <= halfwidth)
    raise ValueError(f"unknown shape {shape!r}")


def generate_clip(spec: SceneSpec) -> Clip:
    """Render a scene deterministically.

    Raises :class:`GenerationError` if some subject never intersects the
    canvas in any frame where it is visible.
    """
    spec.validate()
    L = spec.num_frames
    h, w = spec.canvas
    frames = np.empty((L, h, w, 3), dtype=np.uint8)
    masks = np.zeros((L, h, w), dtype=np.uint8)
    frames[:] = np.array(spec.background_color, dtype=np.uint8)

    touched = [False] * len(spec.subjects)
    for t in range(L):
        for k, sub in enumerate(spec.subjects):
            if not sub.visible_at(t):
                continue
            m = rasterize(sub.shape, sub.center_at(t), sub.size_at(t), spec.canvas)
            if m.any():
                touched[k] = True
                masks[t][m] = k + 1
                frames[t][m] = np.array(sub.fill_color, dtype=np.uint8)
    for k, seen in enumerate(touched):
        if not seen:
            raise GenerationError(
                f"subject {k} ({spec.subjects[k].shape.value}) never intersects "
                f"the {h}x{w} canvas in any visible frame"
            )

    sketches = np.stack([render_sketch(frames[t], masks[t]) for t in range(L)])
    return Clip(frames=frames, gt_masks=masks, sketches=sketches, spec=spec)


def render_sketch(frame: np.ndarray, gt_mask: np.ndarray) -> np.ndarray:
    """Binary line image: inner boundary of every labeled region.

    A pixel is a line pixel iff its label is nonzero and at least one
    4-neighbor (within the image) carries a different label. Output values
    are exactly {0, 255}; no color information survives.
    """
    if frame.shape[:2] != gt_mask.shape:
        raise ValueError(
            f"frame {frame.shape[:2]} and mask {gt_mask.shape} dimensions differ"
        )
    lab = gt_mask.astype(np.int32)
    diff = np.zeros(lab.shape, dtype=bool)
    diff[1:, :] |= lab[1:, :] != lab[:-1, :]
    diff[:-1, :] |= lab[:-1, :] != lab[1:, :]
    diff[:, 1:] |= lab[:, 1:] != lab[:, :-1]
    diff[:, :-1] |= lab[:, :-1] != lab[:, 1:]
    edge = diff & (lab > 0)
    return np.where(edge, 255, 0).astype(np.uint8)


_SHAPE_CYCLE = (Shape.CIRCLE, Shape.RECTANGLE, Shape.TRIANGLE)


def _separated_colors(rng: np.random.Generator, count: int) -> list[tuple[int, int, int]]:
    """Draw `count` RGB triples pairwise >=64 apart in some channel (and from
    the default background)."""
    anchors = [(235, 235, 235)]
    out: list[tuple[int, int, int]] = []
    attempts = 0
    while len(out) < count:
        c = tuple(int(v) for v in rng.integers(0, 200, size=3))
        attempts += 1
        if attempts > 10_000:
            raise RuntimeError("could not find separated colors")
        ok = all(
            max(abs(a - b) for a, b in zip(c, prev)) >= 64 for prev in anchors + out
        )
        if ok:
            out.append(c)
    return out


def random_scene(
    seed: int,
    num_frames: int = 24,
    canvas: tuple[int, int] = (64, 64),
    num_subjects: int = 2,
    late_appear: bool = False,
    min_size: float = 7.0,
    max_size: float = 12.0,
) -> SceneSpec:
    """Sample a well-formed scene: separated palettes, on-canvas motion.

    With ``late_appear`` one randomly chosen subject (never the first)
    enters partway through the clip; everything else is visible throughout.
    """
    rng = np.random.default_rng(seed)
    h, w = canvas
    colors = _separated_colors(rng, num_subjects)
    late_idx = int(rng.integers(1, num_subjects)) if (late_appear and num_subjects > 1) else -1

    subjects = []
    for k in range(num_subjects):
        size = float(rng.uniform(min_size, max_size))
        margin = size * 1.7 + 2
        cy = float(rng.uniform(margin, h - margin))
        cx = float(rng.uniform(margin, w - margin))
        # velocity small enough to keep the center comfortably inside
        max_v = max(0.05, (min(h, w) / 2 - margin) / max(num_frames - 1, 1))
        vy = float(rng.uniform(-max_v, max_v))
        vx = float(rng.uniform(-max_v, max_v))
        amp = float(rng.uniform(0.0, 2.5))
        theta = float(rng.uniform(0, 2 * math.pi))
        appear = 0
        if k == late_idx:
            appear = int(rng.integers(3, max(4, num_frames // 2)))
        subjects.append(
            SubjectSpec(
                shape=_SHAPE_CYCLE[k % 3],
                fill_color=colors[k],
                center0=(cy, cx),
                velocity=(vy, vx),
                amplitude=(amp * math.sin(theta), amp * math.cos(theta)),
                frequency=float(rng.uniform(0.05, 0.2)),
                phase=float(rng.uniform(0, 2 * math.pi)),
                size=size,
                appear_frame=appear,
            )
        )
    return SceneSpec(
        seed=seed,
        num_frames=num_frames,
        canvas=canvas,
        subjects=tuple(subjects),
    )
