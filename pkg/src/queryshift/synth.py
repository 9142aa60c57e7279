"""Synthetic scene generator with exactly known correspondence and labels.

A scene is a short clip in which K "objects" (tracks) move across a pixel
grid.  Track k owns a unit prototype vector p_k; the prototypes are mutually
orthonormal, so cosine similarity separates tracks perfectly at zero noise.
Each frame holds N >= K queries: every real track appears as one query (the
prototype plus optional Gaussian channel noise), and the N - K surplus
queries all carry one shared "no-object" prototype.  Which query index holds
which track is controlled by a per-frame cyclic rotation of the first K
indices, so consecutive frames generally disagree about which index means
which object -- the situation cross-frame matching is supposed to repair.
Surplus indices are never permuted; they sit at the top of the index range in
ascending order, which keeps the clip exactly recoverable even though their
query vectors are identical.

Pixels: track k paints a moving rh x rw rectangle (position wraps around the
grid, tracks painted in ascending k, later tracks on top).  A rectangle pixel
carries the owning track's prototype as its embedding and the track's class
as its label; everything else is background: zero embedding, class C-1.

Prototype layout.  Plain Gram-Schmidt over Gaussian draws would spread each
prototype's energy evenly over all D channels, which makes a small temporal
shift (one channel each way) numerically invisible downstream.  When D is
large enough the generator therefore concentrates a fixed share of each
prototype's energy in the two outermost channels -- the first channels to be
shifted -- laying the K tracks out at distinct angles on that 2-channel
plane; channels that a shift of up to fraction 1/4 can touch are otherwise
zero, and the remaining core energy lives in the middle band, built from
Gram-Schmidt-orthonormalised Gaussian draws and corrected (via a small
Cholesky factor) so the full Gram matrix is still the identity.  Swapping the
outer channels between two different tracks then moves a query's angle on the
signature plane by a macroscopic amount, while swapping them between two
queries of the same track changes nothing.

Determinism: every random draw comes from one Rng stream seeded with
``spec.seed``, consumed in this order:

1. prototype core draws: K (+1 when N > K) rows of Gaussian values, row by
   row (row length D - 2*max(1, D // 8) in signature mode, D otherwise);
2. rectangle anchors: for each real track, one row draw in [0, H) then one
   column draw in [0, W);
3. frame rotations, only when permute_per_frame is set and K >= 2: one draw
   in [0, K) for frame 0, then one draw in [0, K-1) per later frame (the
   nonzero rotation delta);
4. query noise: D Gaussians per (frame, query), frame-major, only when
   noise_sigma > 0.

The prototype arithmetic (Gram-Schmidt, Cholesky, signature assembly) runs in
plain Python floats with left-to-right accumulation, so it does not depend on
any BLAS reduction order.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import (
    ClipQueryTensor,
    LabelMap,
    PixelEmbeddingMap,
    read_labelmap,
    read_tensor,
    write_labelmap,
    write_tensor,
)
from .matching import ClipAlignment, Permutation
from .rng import MASK64, Rng

__all__ = [
    "InfeasibleSceneError",
    "SceneSpec",
    "SceneClip",
    "generate_scene",
    "recovery_rate",
    "class_head_for",
    "save_scene",
    "load_scene",
]

# movement directions cycled over tracks; multiplied by spec.motion
_DIRS = ((0, 1), (1, 0), (1, 1), (0, -1), (-1, 0), (-1, -1), (1, -1), (-1, 1))

_SIGMOID_1 = 1.0 / (1.0 + math.exp(-1.0))

# peak class logit of an on-prototype query; sharp enough that softmax leak
# between neighbouring signature angles stays ~1e-3 at K = 8
_HEAD_PEAK_LOGIT = 24.0


class InfeasibleSceneError(ValueError):
    """The scene description cannot be realised."""


@dataclass(frozen=True)
class SceneSpec:
    """Declarative description of a synthetic scene."""

    t_len: int
    n_tracks: int
    n_queries: int
    dim: int
    num_classes: int
    grid: tuple[int, int]
    noise_sigma: float = 0.0
    permute_per_frame: bool = True
    motion: int = 1
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "grid", (int(self.grid[0]), int(self.grid[1])))
        object.__setattr__(self, "seed", int(self.seed) & MASK64)
        t, k, n, d, c = (
            self.t_len,
            self.n_tracks,
            self.n_queries,
            self.dim,
            self.num_classes,
        )
        if t < 1:
            raise InfeasibleSceneError("t_len must be >= 1")
        if k < 1:
            raise InfeasibleSceneError("n_tracks must be >= 1")
        if not k <= n <= d:
            raise InfeasibleSceneError(
                "prototype separability requires n_tracks <= n_queries <= dim, "
                f"got n_tracks={k}, n_queries={n}, dim={d}"
            )
        if not 1 <= c <= k + 1:
            raise InfeasibleSceneError(
                f"num_classes must lie in [1, n_tracks + 1], got {c}"
            )
        if c > 256:
            raise InfeasibleSceneError("label maps cap num_classes at 256")
        if self.grid[0] < 1 or self.grid[1] < 1:
            raise InfeasibleSceneError(f"bad grid {self.grid}")
        if not (self.noise_sigma >= 0.0 and math.isfinite(self.noise_sigma)):
            raise InfeasibleSceneError(f"bad noise_sigma {self.noise_sigma}")
        if self.motion < 0:
            raise InfeasibleSceneError("motion must be >= 0")

    def to_dict(self) -> dict:
        return {
            "t_len": self.t_len,
            "n_tracks": self.n_tracks,
            "n_queries": self.n_queries,
            "dim": self.dim,
            "num_classes": self.num_classes,
            "grid": list(self.grid),
            "noise_sigma": self.noise_sigma,
            "permute_per_frame": self.permute_per_frame,
            "motion": self.motion,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        try:
            return cls(
                t_len=int(d["t_len"]),
                n_tracks=int(d["n_tracks"]),
                n_queries=int(d["n_queries"]),
                dim=int(d["dim"]),
                num_classes=int(d["num_classes"]),
                grid=(int(d["grid"][0]), int(d["grid"][1])),
                noise_sigma=float(d.get("noise_sigma", 0.0)),
                permute_per_frame=bool(d.get("permute_per_frame", True)),
                motion=int(d.get("motion", 1)),
                seed=int(d.get("seed", 0)),
            )
        except (KeyError, IndexError, TypeError) as exc:
            raise ValueError(f"malformed scene spec: {exc}") from exc


@dataclass(frozen=True)
class SceneClip:
    """A generated scene: data plus full ground truth."""

    spec: SceneSpec
    queries: ClipQueryTensor
    pixels: tuple[PixelEmbeddingMap, ...]
    gt_labels: tuple[LabelMap, ...]
    gt_tracks: tuple[Permutation, ...]
    prototypes: np.ndarray  # (K, D), orthonormal rows
    no_object: np.ndarray | None  # (D,) shared surplus prototype, or None
    track_classes: tuple[int, ...]
    signature_scale: float | None  # rho of the outer-channel layout, or None

    def __post_init__(self):
        protos = np.array(self.prototypes, dtype=np.float64, copy=True)
        protos.setflags(write=False)
        object.__setattr__(self, "prototypes", protos)
        if self.no_object is not None:
            no = np.array(self.no_object, dtype=np.float64, copy=True)
            no.setflags(write=False)
            object.__setattr__(self, "no_object", no)
        object.__setattr__(self, "pixels", tuple(self.pixels))
        object.__setattr__(self, "gt_labels", tuple(self.gt_labels))
        object.__setattr__(self, "gt_tracks", tuple(self.gt_tracks))
        object.__setattr__(self, "track_classes", tuple(int(c) for c in self.track_classes))


def _dot(a: Sequence[float], b: Sequence[float]) -> float:
    s = 0.0
    for x, y in zip(a, b):
        s += x * y
    return s


def _orthonormal_rows(rows: list[list[float]]) -> list[list[float]]:
    """Modified Gram-Schmidt, plain Python for a platform-fixed op order."""
    out: list[list[float]] = []
    for row in rows:
        v = list(row)
        for u in out:
            c = _dot(v, u)
            for i in range(len(v)):
                v[i] -= c * u[i]
        norm = math.sqrt(_dot(v, v))
        if norm < 1e-12:
            raise InfeasibleSceneError("degenerate Gaussian draw during orthonormalisation")
        out.append([x / norm for x in v])
    return out


def _cholesky_lower(g: list[list[float]]) -> list[list[float]]:
    n = len(g)
    low = [[0.0] * n for _ in range(n)]
    for i in range(n):
        for j in range(i + 1):
            s = g[i][j]
            for t in range(j):
                s -= low[i][t] * low[j][t]
            if i == j:
                if s <= 0.0:
                    raise InfeasibleSceneError("signature Gram correction lost rank")
                low[i][j] = math.sqrt(s)
            else:
                low[i][j] = s / low[j][j]
    return low


def _signature_angles(k: int) -> list[float]:
    return [2.0 * math.pi * i / k for i in range(k)]


def _signature_scale(k: int) -> float:
    # strictly inside the feasibility bound rho^2 <= 2/K so the Gram
    # correction stays positive definite
    return min(0.6, math.sqrt(2.0 / k * (1.0 - 1.0 / 64.0)))


def _build_prototypes(
    rng: Rng, n_tracks: int, want_no_object: bool, dim: int
) -> tuple[list[list[float]], list[float] | None, float | None]:
    """Draw and assemble prototypes; see the module docstring for layout."""
    k_total = n_tracks + (1 if want_no_object else 0)
    margin = max(1, dim // 8)
    core_width = dim - 2 * margin
    if core_width >= k_total and dim >= 3:
        rho = _signature_scale(n_tracks)
        raw = [rng.gauss_vector(core_width) for _ in range(k_total)]
        basis = _orthonormal_rows(raw)
        angles = _signature_angles(n_tracks)
        sig = [(rho * math.cos(a), rho * math.sin(a)) for a in angles]
        gram = [
            [
                (1.0 if i == j else 0.0) - (sig[i][0] * sig[j][0] + sig[i][1] * sig[j][1])
                for j in range(n_tracks)
            ]
            for i in range(n_tracks)
        ]
        low = _cholesky_lower(gram)
        protos: list[list[float]] = []
        for k in range(n_tracks):
            p = [0.0] * dim
            p[0] = sig[k][0]
            p[dim - 1] = sig[k][1]
            for j in range(k + 1):
                c = low[k][j]
                if c != 0.0:
                    row = basis[j]
                    for i in range(core_width):
                        p[margin + i] += c * row[i]
            protos.append(p)
        no_obj = None
        if want_no_object:
            no_obj = [0.0] * dim
            no_obj[margin : margin + core_width] = basis[n_tracks]
        return protos, no_obj, rho
    # low-dimensional fallback: plain orthonormalised Gaussians
    raw = [rng.gauss_vector(dim) for _ in range(k_total)]
    basis = _orthonormal_rows(raw)
    protos = basis[:n_tracks]
    no_obj = basis[n_tracks] if want_no_object else None
    return protos, no_obj, None


def _track_class(k: int, num_classes: int) -> int:
    return k % max(num_classes - 1, 1)


def generate_scene(spec: SceneSpec) -> SceneClip:
    """Materialise a scene from its spec; same spec, same bits."""
    t_len, k, n, d, c = (
        spec.t_len,
        spec.n_tracks,
        spec.n_queries,
        spec.dim,
        spec.num_classes,
    )
    h, w = spec.grid
    rng = Rng(spec.seed)
    protos_py, no_obj_py, rho = _build_prototypes(rng, k, n > k, d)
    anchors = [(rng.below(h), rng.below(w)) for _ in range(k)]
    # consecutive frames always rotate by a nonzero delta, so every
    # transition actually exercises the cross-frame disagreement the scene
    # exists to model; K = 1 has no nontrivial rotation and draws nothing
    rotations = [0] * t_len
    if spec.permute_per_frame and k >= 2:
        rotations[0] = rng.below(k)
        for t in range(1, t_len):
            rotations[t] = (rotations[t - 1] + 1 + rng.below(k - 1)) % k

    prototypes = np.array(protos_py, dtype=np.float64)
    no_object = None if no_obj_py is None else np.array(no_obj_py, dtype=np.float64)
    track_classes = tuple(_track_class(i, c) for i in range(k))

    gt_tracks = []
    for t in range(t_len):
        r = rotations[t]
        mapping = [(i + r) % k if i < k else i for i in range(n)]
        gt_tracks.append(Permutation(tuple(mapping)))

    frames = np.empty((t_len, n, d), dtype=np.float64)
    for t in range(t_len):
        for i in range(n):
            track = gt_tracks[t](i)
            base = prototypes[track] if track < k else no_object
            if spec.noise_sigma > 0.0:
                noise = rng.gauss_vector(d)
                frames[t, i] = base + spec.noise_sigma * np.asarray(noise)
            else:
                frames[t, i] = base
    queries = ClipQueryTensor.from_array(frames)

    rh = max(1, h // 5)
    rw = max(1, w // 5)
    pixel_maps = []
    label_maps = []
    background = c - 1
    for t in range(t_len):
        labels = np.full((h, w), background, dtype=np.int64)
        pix = np.zeros((h, w, d), dtype=np.float64)
        for track in range(k):
            vy, vx = _DIRS[track % len(_DIRS)]
            r0, c0 = anchors[track]
            rows = (r0 + t * vy * spec.motion + np.arange(rh)) % h
            cols = (c0 + t * vx * spec.motion + np.arange(rw)) % w
            labels[np.ix_(rows, cols)] = track_classes[track]
            pix[np.ix_(rows, cols)] = prototypes[track]
        pixel_maps.append(PixelEmbeddingMap(pix))
        label_maps.append(LabelMap(labels, c))

    return SceneClip(
        spec=spec,
        queries=queries,
        pixels=tuple(pixel_maps),
        gt_labels=tuple(label_maps),
        gt_tracks=tuple(gt_tracks),
        prototypes=prototypes,
        no_object=no_object,
        track_classes=track_classes,
        signature_scale=rho,
    )


def recovery_rate(alignment: ClipAlignment, scene: SceneClip) -> float:
    """Fraction of (frame, query) slots whose aligned track matches ground truth.

    A slot's aligned track is found by sending its index through the
    alignment into frame 0's index space and reading frame 0's true track
    there.
    """
    if alignment.t_len != len(scene.gt_tracks):
        raise ValueError("alignment and scene disagree on frame count")
    if alignment.n_queries != len(scene.gt_tracks[0]):
        raise ValueError("alignment and scene disagree on query count")
    gt0 = scene.gt_tracks[0]
    hits = 0
    total = 0
    for t, pf in enumerate(alignment.per_frame):
        gt_t = scene.gt_tracks[t]
        for i in range(len(pf)):
            hits += gt0(pf(i)) == gt_t(i)
            total += 1
    return hits / total


# ---------------------------------------------------------------------------
# classification head for the decode stage
# ---------------------------------------------------------------------------


def class_head_for(scene: SceneClip) -> np.ndarray:
    """Linear class head (D x C weights) tuned to the scene's prototypes.

    Design goals, at zero noise: a query sitting on track k's prototype
    gets softmax mass ~(1 - eta) on the track's class and ~eta on the
    background class; surplus (no-object) queries get a uniform distribution
    so their contribution to the per-pixel argmax cancels across classes.
    ``eta`` is chosen so that background pixels (where every mask score is
    exactly sigmoid(0) = 1/2) aggregate to the background class while
    rectangle pixels still aggregate to the owning track's class:

        K * eta * 0.5            > m * (1 - eta) * 0.5          (background)
        sigmoid(1) * (1 - eta)   > eta * (sigmoid(1) + 0.5 * (K - 1))   (rect)

    with m the largest number of tracks sharing one class.  Both margins are
    macroscopic for the separable configurations used in tests (distinct
    classes, K >= 2); if the window is empty the head still works, it just
    loses the exact-background guarantee.

    In signature mode the real-class columns read ONLY the two outer
    channels, pointing at the owning track's signature angle.  That makes a
    query's class a function of exactly the channels a small temporal shift
    replaces, which is what lets an unmatched shift flip labels.  The
    background column reads the prototype sum, whose outer channels cancel,
    so background logits ignore the shift entirely.

    Noisy scenes get a different trade-off.  The signature-only columns
    amplify the noise on the two outer channels by peak/rho, which drowns the
    class structure already at noise_sigma ~ 0.1, and any column that yields
    a uniform positive background logit across all K orthonormal prototypes
    is forced to have norm ~ gamma * sqrt(K), amplifying noise the same way.
    So for noise_sigma > 0 the head reads full prototype directions (noise
    gain peak * sigma instead of peak / rho * sigma) and drops the
    background column to zero.  Background pixels then lose to some
    rectangle class -- a constant penalty that cancels when comparing
    matched against unmatched runs -- while class decisions stay sharp, and
    the shift still perturbs them through the prototypes' outer-channel
    signature energy.
    """
    k = scene.spec.n_tracks
    c = scene.spec.num_classes
    d = scene.spec.dim
    weights = np.zeros((d, c), dtype=np.float64)
    if c == 1:
        return weights

    if scene.spec.noise_sigma > 0.0:
        for track, cls in enumerate(scene.track_classes):
            weights[:, cls] += _HEAD_PEAK_LOGIT * scene.prototypes[track]
        return weights

    counts: dict[int, int] = {}
    for cls in scene.track_classes:
        counts[cls] = counts.get(cls, 0) + 1
    m_star = max(counts.values())
    lower = m_star / (k + m_star)
    upper = _SIGMOID_1 / (2.0 * _SIGMOID_1 + 0.5 * (k - 1))
    eta = 0.5 * (lower + upper) if lower < upper else 0.5 * upper

    peak = _HEAD_PEAK_LOGIT
    gamma_bg = peak + math.log(eta / (1.0 - eta))

    rho = scene.signature_scale
    if rho is not None:
        angles = _signature_angles(k)
        for cls in range(c - 1):
            if cls not in counts:
                continue
            k_c = scene.track_classes.index(cls)
            weights[0, cls] = peak / rho * math.cos(angles[k_c])
            weights[d - 1, cls] = peak / rho * math.sin(angles[k_c])
    else:
        for track, cls in enumerate(scene.track_classes):
            weights[:, cls] += peak * scene.prototypes[track]

    proto_sum = scene.prototypes.sum(axis=0)
    gains = scene.prototypes @ proto_sum
    weights[:, c - 1] = (gamma_bg / float(gains.mean())) * proto_sum
    return weights


# ---------------------------------------------------------------------------
# scene directory layout (used by the command line tools)
# ---------------------------------------------------------------------------


def save_scene(scene: SceneClip, out_dir: str | Path) -> list[Path]:
    """Write a scene as queries.qtn, pixels.qtn, labels_<t>.pgm, tracks.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    qpath = out / "queries.qtn"
    write_tensor(scene.queries, qpath)
    written.append(qpath)

    h, w = scene.spec.grid
    flat = np.stack([p.data.reshape(h * w, scene.spec.dim) for p in scene.pixels])
    ppath = out / "pixels.qtn"
    write_tensor(ClipQueryTensor.from_array(flat), ppath)
    written.append(ppath)

    for t, lmap in enumerate(scene.gt_labels):
        lpath = out / f"labels_{t}.pgm"
        write_labelmap(lmap, lpath)
        written.append(lpath)

    meta = {
        "spec": scene.spec.to_dict(),
        "per_frame_tracks": [list(p.mapping) for p in scene.gt_tracks],
        "track_classes": list(scene.track_classes),
        "prototypes": [list(row) for row in scene.prototypes.tolist()],
        "no_object": None if scene.no_object is None else list(scene.no_object.tolist()),
        "signature_scale": scene.signature_scale,
    }
    tpath = out / "tracks.json"
    with open(tpath, "w") as f:
        json.dump(meta, f, sort_keys=True, indent=1)
        f.write("\n")
    written.append(tpath)
    return written


def load_scene(scene_dir: str | Path) -> SceneClip:
    """Reload a scene written by :func:`save_scene`."""
    src = Path(scene_dir)
    with open(src / "tracks.json") as f:
        meta = json.load(f)
    try:
        spec = SceneSpec.from_dict(meta["spec"])
        per_frame = [Permutation(tuple(m)) for m in meta["per_frame_tracks"]]
        track_classes = tuple(int(x) for x in meta["track_classes"])
        prototypes = np.array(meta["prototypes"], dtype=np.float64)
        no_object = (
            None if meta["no_object"] is None else np.array(meta["no_object"], dtype=np.float64)
        )
        signature_scale = meta["signature_scale"]
    except (KeyError, TypeError) as exc:
        raise ValueError(f"malformed tracks.json: {exc}") from exc

    queries = read_tensor(src / "queries.qtn")
    flat = read_tensor(src / "pixels.qtn")
    h, w = spec.grid
    if flat.n_queries != h * w or flat.t_len != spec.t_len:
        raise ValueError(
            f"pixels.qtn shape ({flat.t_len}, {flat.n_queries}, {flat.dim}) does not "
            f"match a {spec.t_len}-frame {h}x{w} grid"
        )
    pixels = tuple(
        PixelEmbeddingMap(frame.data.reshape(h, w, spec.dim)) for frame in flat.frames
    )
    labels = tuple(
        read_labelmap(src / f"labels_{t}.pgm", spec.num_classes) for t in range(spec.t_len)
    )
    return SceneClip(
        spec=spec,
        queries=queries,
        pixels=pixels,
        gt_labels=labels,
        gt_tracks=tuple(per_frame),
        prototypes=prototypes,
        no_object=no_object,
        track_classes=track_classes,
        signature_scale=signature_scale,
    )
