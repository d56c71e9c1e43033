"""Automated multi-reference dataset curation.

Subjects are discovered by a detector on keyframes sampled every ``h``
frames, novelty-gated by IoU against already-tracked instances, and
propagated from their discovery frame to the end of the clip. Reference
sampling supervises on the last ``f`` frames and draws references from a
source window whose end sits at least ``g + 1`` frames before the
supervision window, which forces a reference/target appearance gap.

Detector and tracker are pluggable interfaces; the shipped implementations
read the synthetic ground-truth masks, optionally perturbed, standing in
for the external vision models that this pipeline would drive in
production.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Protocol, Sequence

import numpy as np
from scipy import ndimage

from .synth import Clip

logger = logging.getLogger(__name__)

BACKGROUND = "background"
DEFAULT_NOVELTY_IOU = 0.5
DEFAULT_AREA_THRESHOLD = 0.01


class SamplingMode(str, Enum):
    STARTING_FRAME = "starting_frame"
    ARBITRARY_FRAME = "arbitrary_frame"
    MULTI_REFERENCE = "multi_reference"


# ---------------------------------------------------------------------------
# oracle interfaces + synthetic implementations


@dataclass(frozen=True)
class SubjectDescriptor:
    """Text-query stand-in: identifies one nameable subject of the scene."""

    subject: int  # 1-based ground-truth label
    name: str


@dataclass
class Detection:
    descriptor: SubjectDescriptor
    mask: np.ndarray  # (H, W) bool


class DetectorOracle(Protocol):
    def enumerate_subjects(self, clip: Clip) -> list[SubjectDescriptor]: ...

    def detect(
        self, clip: Clip, keyframe: int, descriptors: Sequence[SubjectDescriptor]
    ) -> list[Detection]: ...


class TrackerOracle(Protocol):
    def propagate(
        self, seeds: Sequence[Detection], clip: Clip, start: int
    ) -> list[np.ndarray]:
        """Per-seed masks over frames [start .. L-1]; frame `start` equals the seed."""
        ...


class GroundTruthDetector:
    """Detector backed by the clip's exact masks.

    ``withhold_prob`` randomly drops visible subjects from a keyframe's
    detections (simulating missed detections); ``morph_radius`` perturbs
    detection masks by dilation/erosion.
    """

    def __init__(
        self,
        withhold_prob: float = 0.0,
        morph_radius: tuple[int, int] | None = None,
        seed: int = 0,
    ):
        self.withhold_prob = withhold_prob
        self.morph_radius = morph_radius
        self._rng = np.random.default_rng(seed)

    def enumerate_subjects(self, clip: Clip) -> list[SubjectDescriptor]:
        names = []
        for k in range(clip.num_subjects):
            shape = clip.spec.subjects[k].shape.value if clip.spec else "subject"
            names.append(SubjectDescriptor(subject=k + 1, name=f"{shape}-{k + 1}"))
        return names

    def detect(
        self, clip: Clip, keyframe: int, descriptors: Sequence[SubjectDescriptor]
    ) -> list[Detection]:
        out = []
        for desc in descriptors:
            mask = clip.gt_masks[keyframe] == desc.subject
            if not mask.any():
                continue
            if self.withhold_prob > 0 and self._rng.random() < self.withhold_prob:
                continue
            if self.morph_radius is not None:
                mask = _morph_one(
                    mask,
                    int(self._rng.integers(self.morph_radius[0], self.morph_radius[1] + 1)),
                    dilate=bool(self._rng.random() < 0.5),
                )
                if not mask.any():
                    continue
            out.append(Detection(descriptor=desc, mask=mask))
        return out


class GroundTruthTracker:
    """Tracker that matches a seed to its ground-truth subject by IoU and
    returns that subject's exact masks; the seed frame returns the seed
    itself, as the interface requires."""

    def propagate(
        self, seeds: Sequence[Detection], clip: Clip, start: int
    ) -> list[np.ndarray]:
        L = clip.num_frames
        out = []
        for det in seeds:
            best, best_iou = 0, 0.0
            for s in range(1, clip.num_subjects + 1):
                gt = clip.gt_masks[start] == s
                iou = mask_iou_single(det.mask, gt)
                if iou > best_iou:
                    best, best_iou = s, iou
            track = np.zeros((L - start,) + det.mask.shape, dtype=bool)
            if best > 0:
                track = clip.gt_masks[start:] == best
            track[0] = det.mask
            out.append(track)
        return out


def mask_iou_single(a: np.ndarray, b: np.ndarray) -> float:
    union = np.count_nonzero(a | b)
    if union == 0:
        return 0.0
    return float(np.count_nonzero(a & b)) / union


# ---------------------------------------------------------------------------
# track set


@dataclass
class Track:
    instance_id: int  # 1-based, stable discovery order
    masks: np.ndarray  # (L, H, W) bool; all-zero before first_frame
    first_frame: int
    first_pass: int
    descriptor: SubjectDescriptor | None = None

    def area(self, t: int) -> int:
        return int(np.count_nonzero(self.masks[t]))


@dataclass
class TrackSet:
    num_frames: int
    canvas: tuple[int, int]
    tracks: list[Track] = field(default_factory=list)

    def instance_ids(self) -> list[int]:
        return [t.instance_id for t in self.tracks]

    def get(self, instance_id: int) -> Track:
        for t in self.tracks:
            if t.instance_id == instance_id:
                return t
        raise KeyError(f"no instance {instance_id}")

    def label_video(self) -> np.ndarray:
        """(L, H, W) uint8 with the lowest claiming instance id per pixel."""
        out = np.zeros((self.num_frames,) + self.canvas, dtype=np.uint8)
        for tr in sorted(self.tracks, key=lambda t: t.instance_id, reverse=True):
            out[tr.masks] = tr.instance_id
        return out


def iterative_refine(
    clip: Clip,
    detector: DetectorOracle,
    tracker: TrackerOracle,
    keyframe_stride: int = 5,
    novelty_iou: float = DEFAULT_NOVELTY_IOU,
) -> TrackSet:
    """Multi-pass subject discovery with novelty gating.

    Keyframes are frames ``0, h, 2h, ...``. At each pass, detections whose
    IoU against every existing instance mask at that keyframe stays below
    ``novelty_iou`` are treated as newly discovered, propagated from the
    keyframe to the clip end, and merged into the track set. Re-detections
    of known instances are discarded, never merged. A failing detector or
    tracker skips that pass with a warning instead of aborting the clip.
    """
    if keyframe_stride < 1:
        raise ValueError(f"keyframe_stride must be >= 1, got {keyframe_stride}")
    if clip.num_frames < 1:
        raise ValueError("clip is empty")

    L = clip.num_frames
    tracks = TrackSet(num_frames=L, canvas=clip.canvas)
    descriptors = detector.enumerate_subjects(clip)
    next_id = 1
    for pass_idx, keyframe in enumerate(range(0, L, keyframe_stride), start=1):
        try:
            detections = detector.detect(clip, keyframe, descriptors)
        except Exception:
            logger.warning("detector failed on keyframe %d; skipping pass", keyframe)
            continue
        fresh = []
        for det in detections:
            seen = any(
                mask_iou_single(det.mask, tr.masks[keyframe]) >= novelty_iou
                for tr in tracks.tracks
            )
            if not seen:
                fresh.append(det)
        if not fresh:
            continue
        try:
            propagated = tracker.propagate(fresh, clip, keyframe)
        except Exception:
            logger.warning("tracker failed on keyframe %d; skipping pass", keyframe)
            continue
        for det, prop in zip(fresh, propagated):
            full = np.zeros((L,) + clip.canvas, dtype=bool)
            full[keyframe:] = prop
            tracks.tracks.append(
                Track(
                    instance_id=next_id,
                    masks=full,
                    first_frame=keyframe,
                    first_pass=pass_idx,
                    descriptor=det.descriptor,
                )
            )
            next_id += 1
    return tracks


def enforce_exclusivity(tracks: TrackSet) -> TrackSet:
    """Resolve overlaps: every contested pixel goes to the lowest instance id."""
    ordered = sorted(tracks.tracks, key=lambda t: t.instance_id)
    out = []
    claimed = np.zeros((tracks.num_frames,) + tracks.canvas, dtype=bool)
    for tr in ordered:
        kept = tr.masks & ~claimed
        claimed |= kept
        out.append(replace(tr, masks=kept))
    return TrackSet(num_frames=tracks.num_frames, canvas=tracks.canvas, tracks=out)


# ---------------------------------------------------------------------------
# reference sampling


@dataclass
class ReferenceEntry:
    """One bank slot: a subject crop, a whole frame, or the background plate."""

    ref_index: int  # 1-based, contiguous
    image: np.ndarray  # (h, w, 3) uint8
    kind: str  # "subject" | "frame" | "background"
    instance_id: int | None = None
    subject: int | None = None  # ground-truth provenance when known
    source_frame: int = 0
    bbox: tuple[int, int, int, int] | None = None  # y0, x0, y1, x1 (exclusive)
    augmentations: list[str] = field(default_factory=list)


@dataclass
class ReferenceBankRecord:
    mode: SamplingMode
    entries: list[ReferenceEntry]
    background_index: int | None  # == len(entries) when background present

    @property
    def num_references(self) -> int:
        return len(self.entries)

    def binding(self) -> dict[int, int]:
        """instance_id -> ref index, for subject entries."""
        return {
            e.instance_id: e.ref_index
            for e in self.entries
            if e.kind == "subject" and e.instance_id is not None
        }


@dataclass(frozen=True)
class SupervisionWindow:
    start: int  # first supervised frame, 0-based inclusive
    end: int  # last supervised frame, inclusive

    @property
    def frames(self) -> range:
        return range(self.start, self.end + 1)

    def __len__(self) -> int:
        return self.end - self.start + 1


@dataclass(frozen=True)
class Rejection:
    """Non-error outcome: the clip yields no valid multi-reference sample."""

    reason: str


def source_window(num_frames: int, f: int, g: int) -> range:
    """0-based source window; its size is L - g - f, matching the 1-based
    interval [1, L-g-f]."""
    if num_frames < f + g + 1:
        raise ValueError(
            f"need L >= f + g + 1, got L={num_frames}, f={f}, g={g}"
        )
    return range(0, num_frames - g - f)


def sample_references(
    clip: Clip,
    tracks: TrackSet,
    f: int,
    g: int,
    mode: SamplingMode,
    area_threshold: float = DEFAULT_AREA_THRESHOLD,
    rng_seed: int = 0,
    augment_probs: "AugmentProbs | None" = None,
) -> tuple[SupervisionWindow, ReferenceBankRecord] | Rejection:
    """Pick the supervision window and build the reference bank.

    multi_reference keeps an instance only if it stays visible through the
    whole supervision window, appears in the source window, and its peak
    source-window area clears ``area_threshold`` (a fraction of the canvas).
    Surviving instances are cropped from their largest-area source frame;
    one background plate with all selected instances masked out closes the
    bank. Zero survivors is a :class:`Rejection`, not an error.
    """
    rng = np.random.default_rng(rng_seed)
    L = clip.num_frames
    src = source_window(L, f, g)
    window = SupervisionWindow(start=L - f, end=L - 1)
    bg_color = _background_color(clip)

    if mode is SamplingMode.STARTING_FRAME:
        entry = ReferenceEntry(
            ref_index=1,
            image=clip.frames[window.start].copy(),
            kind="frame",
            source_frame=window.start,
        )
        return window, ReferenceBankRecord(mode=mode, entries=[entry], background_index=None)

    if mode is SamplingMode.ARBITRARY_FRAME:
        t = int(rng.choice(np.asarray(src)))
        entry = ReferenceEntry(
            ref_index=1, image=clip.frames[t].copy(), kind="frame", source_frame=t
        )
        return window, ReferenceBankRecord(mode=mode, entries=[entry], background_index=None)

    # multi_reference
    survivors: list[tuple[Track, int]] = []  # (track, argmax-area source frame)
    min_area = area_threshold * clip.canvas[0] * clip.canvas[1]
    for tr in sorted(tracks.tracks, key=lambda t: t.instance_id):
        if not all(tr.area(t) > 0 for t in window.frames):
            continue
        src_areas = [tr.area(t) for t in src]
        if max(src_areas, default=0) == 0:
            continue
        best_frame = src[int(np.argmax(src_areas))]
        if max(src_areas) < min_area:
            continue
        survivors.append((tr, best_frame))
    if not survivors:
        return Rejection(reason="no instance survived visibility/appearance/area filtering")

    entries = []
    for r, (tr, best_frame) in enumerate(survivors, start=1):
        crop, bbox = _masked_crop(clip.frames[best_frame], tr.masks[best_frame], bg_color)
        entry = ReferenceEntry(
            ref_index=r,
            image=crop,
            kind="subject",
            instance_id=tr.instance_id,
            subject=tr.descriptor.subject if tr.descriptor else None,
            source_frame=best_frame,
            bbox=bbox,
        )
        if augment_probs is not None:
            entry.image, entry.augmentations = augment_reference(
                entry.image, rng_seed=int(rng.integers(0, 2**31)), probs=augment_probs
            )
        entries.append(entry)

    bg_frame = int(rng.choice(np.asarray(src)))
    plate = clip.frames[bg_frame].copy()
    for tr, _ in survivors:
        plate[tr.masks[bg_frame]] = bg_color
    entries.append(
        ReferenceEntry(
            ref_index=len(entries) + 1,
            image=plate,
            kind=BACKGROUND,
            source_frame=bg_frame,
        )
    )
    bank = ReferenceBankRecord(
        mode=mode, entries=entries, background_index=len(entries)
    )
    return window, bank


def _background_color(clip: Clip) -> np.ndarray:
    if clip.spec is not None:
        return np.array(clip.spec.background_color, dtype=np.uint8)
    if "background_color" in clip.meta:
        return np.array(clip.meta["background_color"], dtype=np.uint8)
    # fall back to the most common corner color of the first frame
    return clip.frames[0, 0, 0].copy()


def _masked_crop(
    frame: np.ndarray, mask: np.ndarray, bg_color: np.ndarray
) -> tuple[np.ndarray, tuple[int, int, int, int]]:
    ys, xs = np.nonzero(mask)
    y0, y1 = int(ys.min()), int(ys.max()) + 1
    x0, x1 = int(xs.min()), int(xs.max()) + 1
    crop = frame[y0:y1, x0:x1].copy()
    crop[~mask[y0:y1, x0:x1]] = bg_color
    return crop, (y0, x0, y1, x1)


# ---------------------------------------------------------------------------
# augmentation


@dataclass(frozen=True)
class AugmentProbs:
    center_crop: float = 0.0
    horizontal_flip: float = 0.0
    resize: float = 0.0
    crop_fraction: float = 0.8
    resize_range: tuple[float, float] = (0.75, 1.25)


def augment_reference(
    ref: np.ndarray, rng_seed: int, probs: AugmentProbs | None = None
) -> tuple[np.ndarray, list[str]]:
    """Apply center-crop / horizontal-flip / nearest-resize, each with its own
    probability. Nearest-neighbor resampling keeps every output pixel an
    exact input color, so hue is never altered. Returns the image and the
    log of applied transforms."""
    probs = probs or AugmentProbs()
    rng = np.random.default_rng(rng_seed)
    img = ref
    log: list[str] = []
    if rng.random() < probs.center_crop:
        h, w = img.shape[:2]
        ch = max(1, int(round(h * probs.crop_fraction)))
        cw = max(1, int(round(w * probs.crop_fraction)))
        y0 = (h - ch) // 2
        x0 = (w - cw) // 2
        img = img[y0 : y0 + ch, x0 : x0 + cw]
        log.append(f"center_crop:{probs.crop_fraction}")
    if rng.random() < probs.horizontal_flip:
        img = img[:, ::-1]
        log.append("horizontal_flip")
    if rng.random() < probs.resize:
        scale = float(rng.uniform(*probs.resize_range))
        img = resize_nearest(img, max(1, int(round(img.shape[0] * scale))),
                             max(1, int(round(img.shape[1] * scale))))
        log.append(f"resize:{scale:.3f}")
    return np.ascontiguousarray(img), log


def resize_nearest(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Nearest-neighbor resize; exact palette preservation."""
    h, w = img.shape[:2]
    ys = np.minimum((np.arange(out_h) + 0.5) * h / out_h, h - 1).astype(np.int64)
    xs = np.minimum((np.arange(out_w) + 0.5) * w / out_w, w - 1).astype(np.int64)
    return np.ascontiguousarray(img[ys][:, xs])


# ---------------------------------------------------------------------------
# mask morphing (robustness probe)


def _morph_one(mask: np.ndarray, radius: int, dilate: bool) -> np.ndarray:
    """Euclidean dilation/erosion by `radius`; off-canvas counts as background."""
    if radius <= 0:
        return mask.copy()
    if dilate:
        dist = ndimage.distance_transform_edt(~mask)
        return dist <= radius
    padded = np.pad(mask, radius + 1, mode="constant", constant_values=False)
    dist = ndimage.distance_transform_edt(padded)
    core = dist > radius
    return core[radius + 1 : -(radius + 1), radius + 1 : -(radius + 1)]


def morph_masks(
    masks: np.ndarray,
    radius_range: tuple[int, int],
    rng_seed: int = 0,
) -> tuple[np.ndarray, float]:
    """Perturb a label video by per-subject random dilation/erosion.

    Each subject draws one radius uniformly from ``radius_range`` and one
    dilate/erode coin, applied across all frames; exclusivity is re-enforced
    (lowest label wins). Returns the morphed label video and the mean IoU
    against the originals over subject/frame pairs where either mask is
    non-empty.
    """
    lo, hi = radius_range
    if lo > hi:
        raise ValueError(f"radius_range must satisfy lo <= hi, got {radius_range}")
    rng = np.random.default_rng(rng_seed)
    labels = sorted(int(v) for v in np.unique(masks) if v != 0)
    plans = {
        lab: (int(rng.integers(lo, hi + 1)), bool(rng.random() < 0.5))
        for lab in labels
    }

    L = masks.shape[0]
    out = np.zeros_like(masks)
    ious = []
    for t in range(L):
        claimed = np.zeros(masks.shape[1:], dtype=bool)
        for lab in labels:
            orig = masks[t] == lab
            if not orig.any():
                continue
            radius, dilate = plans[lab]
            morphed = _morph_one(orig, radius, dilate) & ~claimed
            claimed |= morphed
            out[t][morphed] = lab
            union = np.count_nonzero(orig | morphed)
            if union > 0:
                ious.append(np.count_nonzero(orig & morphed) / union)
    mean_iou = float(np.mean(ious)) if ious else 1.0
    return out, mean_iou
