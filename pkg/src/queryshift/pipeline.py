"""End-to-end clip processing: match, shift, decode, label.

The order of operations is the point of this module.  ``feature_shift``
blends channel values across consecutive frames BY QUERY INDEX, so it is only
meaningful if index i refers to the same object in every frame.  The pipeline
therefore first aligns the clip (cross-frame matching), re-indexes every
frame into frame 0's index space, shifts there, and maps the result back to
each frame's native order.  With matching disabled the alignment is the
identity and the result is bit-for-bit a plain shift of the raw clip,
which is the ablation the evaluation compares against.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import ClipQueryTensor, FrameQuerySet, LabelMap, PixelEmbeddingMap
from .matching import ClipAlignment, align_clip
from .shift import ShiftConfig, feature_shift
from .synth import SceneClip, class_head_for

__all__ = [
    "PipelineConfig",
    "SoftMaskSet",
    "decode_masks",
    "semantic_inference",
    "shift_with_matching",
    "run_clip",
]

_SCORE_FLOOR = np.nextafter(0.0, 1.0)
_SCORE_CEIL = np.nextafter(1.0, 0.0)

ClassHead = Callable[[np.ndarray], np.ndarray] | np.ndarray


@dataclass(frozen=True)
class PipelineConfig:
    """What to do to a clip before decoding."""

    shift: ShiftConfig
    matching: bool = True
    mask_threshold: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.mask_threshold < 1.0:
            raise ValueError(f"mask_threshold must lie in (0, 1), got {self.mask_threshold}")


@dataclass(frozen=True)
class SoftMaskSet:
    """Per-query soft masks plus class logits for one frame.

    Scores live strictly inside (0, 1); sigmoid output is clamped to the
    nearest representable neighbours of the open interval so downstream
    consumers can rely on 0 < s < 1 even for saturated logits.
    """

    scores: np.ndarray  # (N, H, W)
    class_logits: np.ndarray  # (N, C)

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=np.float64)
        logits = np.asarray(self.class_logits, dtype=np.float64)
        if scores.ndim != 3:
            raise ValueError(f"scores must be (N, H, W), got shape {scores.shape}")
        if logits.ndim != 2 or logits.shape[0] != scores.shape[0]:
            raise ValueError(
                f"class_logits must be (N, C) matching scores, got {logits.shape}"
            )
        if not np.all((scores > 0.0) & (scores < 1.0)):
            raise ValueError("mask scores must lie strictly inside (0, 1)")
        if not np.all(np.isfinite(logits)):
            raise ValueError("class logits must be finite")
        scores = scores.copy()
        scores.setflags(write=False)
        logits = logits.copy()
        logits.setflags(write=False)
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "class_logits", logits)

    @property
    def n_queries(self) -> int:
        return self.scores.shape[0]

    @property
    def num_classes(self) -> int:
        return self.class_logits.shape[1]

    def binarize(self, threshold: float = 0.5) -> np.ndarray:
        if not 0.0 < threshold < 1.0:
            raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
        return self.scores >= threshold


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    ex = np.exp(shifted)
    return ex / ex.sum(axis=1, keepdims=True)


def decode_masks(
    queries: FrameQuerySet, pixels: PixelEmbeddingMap, class_head: ClassHead
) -> SoftMaskSet:
    """Dot every query against every pixel embedding; sigmoid to (0, 1).

    ``class_head`` is either a (D, C) weight matrix or a callable mapping the
    (N, D) query block to (N, C) logits.
    """
    q = queries.data
    if pixels.dim != queries.dim:
        raise ValueError(
            f"channel mismatch: queries have {queries.dim}, pixels have {pixels.dim}"
        )
    raw = np.einsum("nd,hwd->nhw", q, pixels.data)
    scores = np.clip(_sigmoid(raw), _SCORE_FLOOR, _SCORE_CEIL)
    if callable(class_head):
        logits = np.asarray(class_head(q), dtype=np.float64)
    else:
        head = np.asarray(class_head, dtype=np.float64)
        if head.ndim != 2 or head.shape[0] != queries.dim:
            raise ValueError(
                f"class head must be (D, C) with D = {queries.dim}, got {head.shape}"
            )
        logits = np.einsum("nd,dc->nc", q, head)
    if logits.ndim != 2 or logits.shape[0] != queries.n_queries:
        raise ValueError(f"class head produced shape {logits.shape} for {queries.n_queries} queries")
    return SoftMaskSet(scores=scores, class_logits=logits)


def semantic_inference(masks: SoftMaskSet) -> LabelMap:
    """Fuse soft masks into one label map.

    Each pixel takes the class maximising sum_i softmax(logits_i)[c] *
    score_i; ties resolve to the lowest class index.
    """
    probs = _softmax_rows(masks.class_logits)
    votes = np.einsum("nc,nhw->chw", probs, masks.scores)
    labels = np.argmax(votes, axis=0)
    return LabelMap(labels, masks.num_classes)


def shift_with_matching(
    clip: ClipQueryTensor, config: PipelineConfig
) -> tuple[ClipQueryTensor, ClipAlignment]:
    """Align the clip, shift in the aligned index space, restore frame order.

    Returns the shifted clip (frames in their ORIGINAL per-frame query order)
    and the alignment used.  With ``config.matching`` false the alignment is
    the identity and the output equals ``feature_shift(clip, config.shift)``
    exactly.
    """
    if config.matching:
        alignment = align_clip(clip)
    else:
        alignment = ClipAlignment.identity(clip.t_len, clip.n_queries)

    arr = clip.to_array()
    aligned = np.empty_like(arr)
    for t, pf in enumerate(alignment.per_frame):
        idx = np.asarray(pf.mapping, dtype=np.intp)
        aligned[t, idx] = arr[t]
    shifted = feature_shift(ClipQueryTensor.from_array(aligned), config.shift)
    shifted_arr = shifted.to_array()
    out = np.empty_like(shifted_arr)
    for t, pf in enumerate(alignment.per_frame):
        idx = np.asarray(pf.mapping, dtype=np.intp)
        out[t] = shifted_arr[t, idx]
    return ClipQueryTensor.from_array(out), alignment


def run_clip(
    scene: SceneClip,
    config: PipelineConfig,
    class_head: ClassHead | None = None,
) -> tuple[tuple[LabelMap, ...], ClipAlignment]:
    """Process a scene end to end and return per-frame predicted labels.

    ``class_head`` defaults to the head derived from the scene's prototypes.
    """
    head = class_head_for(scene) if class_head is None else class_head
    shifted, alignment = shift_with_matching(scene.queries, config)
    labels = []
    for t in range(scene.spec.t_len):
        masks = decode_masks(shifted.frames[t], scene.pixels[t], head)
        labels.append(semantic_inference(masks))
    return tuple(labels), alignment
