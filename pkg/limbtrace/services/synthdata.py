"""
Procedural 2D orchard scenes with exact centerline ground truth.

Scenes are pure functions of (kind, canvas, regime, seed): all randomness is
drawn from a single ``numpy.random.Generator`` seeded with the scene seed,
and rasterization noise from a generator seeded with ``[seed, 1]``.
"""

import logging
import math
from typing import Dict, List, Sequence, Tuple

import numpy as np

from limbtrace.core.exceptions import EmptyReference, InvalidCanvas
from limbtrace.models.scene import (
    OccluderShape,
    Occluder,
    OcclusionRegime,
    SceneBundle,
    SceneFeatures,
    TreeKind,
    TreeScene,
)
from limbtrace.services.annotation import polyline_to_target

logger = logging.getLogger(__name__)

MIN_CANVAS = 32

# Occluded fraction is accepted within this band around the drawn target.
OCCLUSION_TOLERANCE = 0.02
MAX_PLACEMENT_ATTEMPTS = 400
MAX_DECOYS = 3

BRANCH_COLOR = (104, 72, 44)
FRUIT_COLORS = ((196, 34, 38), (214, 62, 40), (172, 26, 52))
FOLIAGE_COLORS = ((58, 128, 46), (84, 150, 60), (40, 104, 40))

DEPTH_BACKGROUND = 40
DEPTH_BRANCH = 140
DEPTH_OCCLUDER = 220


def generate_scene(
    kind: TreeKind,
    canvas: Tuple[int, int],
    occlusion_regime: OcclusionRegime,
    seed: int,
) -> TreeScene:
    """
    Build the geometry of one synthetic tree and its occluders.

    Args:
        kind: Tree structure to draw.
        canvas: (width, height) in pixels, both at least 32.
        occlusion_regime: Calibrates the share of branch pixels hidden by occluders.
        seed: Scene seed; equal inputs always give an identical scene.

    Returns:
        A TreeScene whose polylines are strictly monotone along the scan axis.

    Raises:
        InvalidCanvas: If either canvas dimension is below 32 pixels.
    """
    kind = TreeKind(kind)
    regime = OcclusionRegime(occlusion_regime)
    width, height = (int(v) for v in canvas)
    if width < MIN_CANVAS or height < MIN_CANVAS:
        raise InvalidCanvas(f"canvas {width}x{height} is smaller than {MIN_CANVAS}x{MIN_CANVAS}")

    rng = np.random.default_rng(seed)
    if kind is TreeKind.Y_SHAPED:
        branches, thickness, merge_row = _build_y_tree(rng, width, height)
    elif kind is TreeKind.TRUNK_ONLY:
        branches, thickness, merge_row = _build_trunk(rng, width, height)
    else:
        branches, thickness, merge_row = _build_vine(rng, width, height)

    whole = np.zeros((height, width), dtype=bool)
    for line, radii in zip(branches, thickness):
        whole |= stroke_mask(line, radii, width, height)
    occluders = _place_occluders(rng, whole, regime, thickness)

    return TreeScene(
        kind=kind,
        branches=tuple(branches),
        thickness=tuple(thickness),
        merge_row=merge_row,
        occluders=tuple(occluders),
        canvas=(width, height),
        seed=int(seed),
        regime=regime,
    )


def rasterize(scene: TreeScene, with_depth: bool = False) -> SceneBundle:
    """
    Render a scene into an image, branch masks and its regression target.

    Targets come from the polylines, never from pixels, so occluders hide
    branch pixels without touching the labels.
    """
    width, height = scene.width, scene.height
    whole = np.zeros((height, width), dtype=bool)
    for line, radii in zip(scene.branches, scene.thickness):
        whole |= stroke_mask(line, radii, width, height)

    covered = np.zeros_like(whole)
    for occluder in scene.occluders:
        covered |= occluder_mask(occluder, width, height)
    visible = whole & ~covered

    target = polyline_to_target(
        scene.branches,
        scene.canvas,
        n_branches=scene.kind.n_branches,
        axis=scene.kind.scan_axis,
    )
    image = _paint(scene, whole, with_depth)
    return SceneBundle(
        image=image,
        whole_mask=whole,
        visible_mask=visible,
        target=target,
        occlusion_fraction=occlusion_percentage(whole, visible),
        features=scene_features(scene),
    )


def occlusion_percentage(whole_mask: np.ndarray, visible_mask: np.ndarray) -> float:
    """
    Share of branch pixels hidden by occluders: 1 - |visible| / |whole|.

    Raises:
        EmptyReference: If the whole-branch mask has no foreground pixel.
    """
    whole = np.asarray(whole_mask, dtype=bool)
    visible = np.asarray(visible_mask, dtype=bool) & whole
    total = int(np.count_nonzero(whole))
    if total == 0:
        raise EmptyReference("whole-branch mask is empty")
    return 1.0 - np.count_nonzero(visible) / total


def scene_features(scene: TreeScene) -> SceneFeatures:
    """Geometry descriptors consumed by error tagging."""
    min_radius = float(min(r.min() for r in scene.thickness))

    bends = [0.0]
    for line in scene.branches:
        for i in range(1, len(line) - 1):
            if scene.merge_row is not None and line[i, 1] == scene.merge_row:
                continue
            bends.append(_turning_angle(line[i] - line[i - 1], line[i + 1] - line[i]))

    if scene.kind is TreeKind.HORIZONTAL_VINE:
        run = scene.branches[0][-1] - scene.branches[0][0]
        lean = math.degrees(math.atan2(abs(run[1]), abs(run[0])))
        merge_fraction = None
    else:
        trunk = scene.branches[0]
        start = trunk[trunk[:, 1] >= scene.merge_row][0] if scene.merge_row is not None else trunk[0]
        run = trunk[-1] - start
        lean = math.degrees(math.atan2(abs(run[0]), abs(run[1])))
        merge_fraction = scene.merge_row / scene.height if scene.merge_row is not None else None

    return SceneFeatures(
        min_radius=min_radius,
        max_bend_deg=float(max(bends)),
        trunk_lean_deg=float(lean),
        merge_fraction=merge_fraction,
    )


def regime_schedule(
    mix: Dict[OcclusionRegime, float],
    count: int,
    rng: np.random.Generator,
) -> List[OcclusionRegime]:
    """
    Shuffled list of ``count`` regimes honoring ``mix`` up to rounding.

    Counts are floored and the remainder handed out by largest fractional part.
    """
    regimes = [r for r in OcclusionRegime if mix.get(r, 0.0) > 0]
    exact = np.array([mix[r] * count for r in regimes])
    counts = np.floor(exact).astype(int)
    for i in np.argsort(-(exact - counts), kind="stable")[: count - counts.sum()]:
        counts[i] += 1
    schedule = np.repeat(np.arange(len(regimes)), counts)
    return [regimes[i] for i in rng.permutation(schedule)]


def stroke_mask(
    polyline: np.ndarray,
    radii: np.ndarray,
    width: int,
    height: int,
) -> np.ndarray:
    """Pixels whose center lies within the interpolated radius of any polyline segment."""
    points = np.asarray(polyline, dtype=np.float64)
    radii = np.asarray(radii, dtype=np.float64)
    rows, cols = np.mgrid[0:height, 0:width].astype(np.float64)
    mask = np.zeros((height, width), dtype=bool)
    if len(points) == 1:
        return (cols - points[0, 0]) ** 2 + (rows - points[0, 1]) ** 2 <= radii[0] ** 2
    for (a, b), (ra, rb) in zip(zip(points[:-1], points[1:]), zip(radii[:-1], radii[1:])):
        d = b - a
        t = ((cols - a[0]) * d[0] + (rows - a[1]) * d[1]) / float(d @ d)
        t = np.clip(t, 0.0, 1.0)
        dist2 = (cols - a[0] - t * d[0]) ** 2 + (rows - a[1] - t * d[1]) ** 2
        mask |= dist2 <= (ra + t * (rb - ra)) ** 2
    return mask


def occluder_mask(occluder: Occluder, width: int, height: int) -> np.ndarray:
    rows, cols = np.mgrid[0:height, 0:width].astype(np.float64)
    dx = cols - occluder.center[0]
    dy = rows - occluder.center[1]
    shape = OccluderShape(occluder.shape)
    if shape is OccluderShape.DISK:
        return dx ** 2 + dy ** 2 <= occluder.size ** 2

    cos_a, sin_a = math.cos(occluder.angle), math.sin(occluder.angle)
    if shape is OccluderShape.ELLIPSE:
        u = dx * cos_a + dy * sin_a
        v = -dx * sin_a + dy * cos_a
        minor = occluder.size * occluder.aspect
        return (u / occluder.size) ** 2 + (v / minor) ** 2 <= 1.0

    # Leaf: lens formed by two disks offset along the normal of the leaf axis
    offset = 0.55 * occluder.size
    nx, ny = -sin_a, cos_a
    first = (dx - offset * nx) ** 2 + (dy - offset * ny) ** 2 <= occluder.size ** 2
    second = (dx + offset * nx) ** 2 + (dy + offset * ny) ** 2 <= occluder.size ** 2
    return first & second


def _build_y_tree(
    rng: np.random.Generator, width: int, height: int
) -> Tuple[List[np.ndarray], List[np.ndarray], int]:
    scale = width / 64.0
    merge_row = int(round(height * rng.uniform(0.45, 0.65)))
    merge_x = width / 2.0 + rng.uniform(-0.06, 0.06) * width
    base_x = width / 2.0 + rng.uniform(-0.08, 0.08) * width
    mid_x = (merge_x + base_x) / 2.0 + rng.uniform(-0.02, 0.02) * width
    trunk = np.array(
        [[mid_x, (merge_row + height - 1) / 2.0], [base_x, height - 1.0]]
    )
    trunk_radii = np.array([rng.uniform(2.3, 2.45), rng.uniform(2.45, 2.6)]) * scale

    tops = (rng.uniform(0.12, 0.32) * width, rng.uniform(0.68, 0.88) * width)
    thin_tip = rng.uniform() < 0.15
    kink = rng.uniform() < 0.15
    kink_vertex = int(rng.integers(1, 3))

    branches, thickness = [], []
    for side, top in zip((-1.0, 1.0), tops):
        bow = rng.uniform(0.6, 1.6)
        jitter = rng.uniform(-0.03, 0.03, size=3) * width
        verts = []
        for i, f in enumerate((0.0, 1.0 / 3.0, 2.0 / 3.0)):
            x = merge_x + (top - merge_x) * (1.0 - f) ** bow + jitter[i]
            if kink and i == kink_vertex:
                x += side * 0.12 * width
            x = min(x, merge_x - 1.0) if side < 0 else max(x, merge_x + 1.0)
            verts.append([x, f * merge_row])
        verts.append([merge_x, float(merge_row)])
        line = np.vstack([np.array(verts), trunk])
        line[:, 0] = np.clip(line[:, 0], 1.0, width - 2.0)

        tip = 1.0 if thin_tip else 1.3 * scale
        radii = np.concatenate([np.linspace(tip, 2.0 * scale, 4), trunk_radii])
        branches.append(line)
        thickness.append(np.maximum(radii, 1.0))

    # Shared trunk vertices must stay identical after clipping
    branches[1][3:] = branches[0][3:]
    return branches, thickness, merge_row


def _build_trunk(
    rng: np.random.Generator, width: int, height: int
) -> Tuple[List[np.ndarray], List[np.ndarray], None]:
    scale = width / 64.0
    top_x = width / 2.0 + rng.uniform(-0.1, 0.1) * width
    base_x = width / 2.0 + rng.uniform(-0.06, 0.06) * width
    rows = np.array([0.0, height / 3.0, 2.0 * height / 3.0, height - 1.0])
    xs = top_x + (base_x - top_x) * rows / (height - 1.0)
    xs[1:3] += rng.uniform(-0.04, 0.04, size=2) * width
    line = np.column_stack([np.clip(xs, 1.0, width - 2.0), rows])
    radii = np.linspace(rng.uniform(1.4, 1.8), rng.uniform(2.4, 2.8), 4) * scale
    return [line], [np.maximum(radii, 1.0)], None


def _build_vine(
    rng: np.random.Generator, width: int, height: int
) -> Tuple[List[np.ndarray], List[np.ndarray], None]:
    scale = height / 64.0
    start_y = height / 2.0 + rng.uniform(-0.1, 0.1) * height
    end_y = height / 2.0 + rng.uniform(-0.1, 0.1) * height
    cols = np.array([0.0, width / 3.0, 2.0 * width / 3.0, width - 1.0])
    ys = start_y + (end_y - start_y) * cols / (width - 1.0)
    ys[1:3] += rng.uniform(-0.06, 0.06, size=2) * height
    line = np.column_stack([cols, np.clip(ys, 1.0, height - 2.0)])
    radii = np.linspace(rng.uniform(2.2, 2.6), rng.uniform(1.6, 2.0), 4) * scale
    return [line], [np.maximum(radii, 1.0)], None


def _place_occluders(
    rng: np.random.Generator,
    whole: np.ndarray,
    regime: OcclusionRegime,
    thickness: Sequence[np.ndarray],
) -> List[Occluder]:
    """
    Add occluders until the hidden branch share lands within tolerance of a
    target drawn from the regime's (mean, std), clamped to [0, 1].

    Each candidate is sized from the remaining deficit and rejected when it
    would overshoot. Decoys that miss the branch entirely are added afterwards.
    """
    if regime is OcclusionRegime.NONE:
        return []

    height, width = whole.shape
    total = int(np.count_nonzero(whole))
    mean, std = regime.statistics
    target = float(np.clip(rng.normal(mean, std), 0.0, 1.0))
    mean_radius = float(np.mean([r.mean() for r in thickness]))
    max_size = 0.25 * min(width, height)

    occluders: List[Occluder] = []
    covered = np.zeros_like(whole)
    hidden = 0.0
    shrink = 1.0
    for _ in range(MAX_PLACEMENT_ATTEMPTS):
        if hidden >= target - OCCLUSION_TOLERANCE:
            break
        candidates = np.flatnonzero(whole & ~covered)
        if candidates.size == 0:
            break
        row, col = np.unravel_index(candidates[rng.integers(candidates.size)], whole.shape)
        deficit = (target - hidden) * total
        size = float(np.clip(deficit / (4.0 * mean_radius), 1.5, max_size))
        size = max(1.5, size * rng.uniform(0.6, 1.2) * shrink)
        occluder = _random_occluder(rng, (col + rng.uniform(-1, 1), row + rng.uniform(-1, 1)), size)

        trial = covered | occluder_mask(occluder, width, height)
        trial_hidden = np.count_nonzero(whole & trial) / total
        if trial_hidden > target + OCCLUSION_TOLERANCE:
            shrink *= 0.7
            continue
        occluders.append(occluder)
        covered = trial
        hidden = trial_hidden

    for _ in range(int(rng.integers(0, MAX_DECOYS + 1))):
        for _attempt in range(20):
            center = (rng.uniform(0, width - 1), rng.uniform(0, height - 1))
            decoy = _random_occluder(rng, center, rng.uniform(1.5, 0.12 * min(width, height)))
            if not np.any(occluder_mask(decoy, width, height) & whole):
                occluders.append(decoy)
                break

    logger.debug(
        "Placed %s occluders for %s regime (target %.3f, reached %.3f)",
        len(occluders), regime.value, target, hidden,
    )
    return occluders


def _random_occluder(rng: np.random.Generator, center: Tuple[float, float], size: float) -> Occluder:
    shape = list(OccluderShape)[int(rng.integers(len(OccluderShape)))]
    angle = float(rng.uniform(0.0, math.pi))
    if shape is OccluderShape.DISK:
        color = FRUIT_COLORS[int(rng.integers(len(FRUIT_COLORS)))]
        aspect = 1.0
    else:
        color = FOLIAGE_COLORS[int(rng.integers(len(FOLIAGE_COLORS)))]
        aspect = float(rng.uniform(0.4, 0.8))
    return Occluder(
        shape=shape,
        center=(float(center[0]), float(center[1])),
        size=float(size),
        color=color,
        aspect=aspect,
        angle=angle,
    )


def _paint(scene: TreeScene, whole: np.ndarray, with_depth: bool) -> np.ndarray:
    """RGB (or RGB + depth) rendering with a vertical background gradient and sensor noise."""
    width, height = scene.width, scene.height
    rng = np.random.default_rng([scene.seed, 1])

    fade = np.linspace(0.0, 1.0, height)[:, None, None]
    top = np.array([150.0, 176.0, 196.0])
    bottom = np.array([112.0, 132.0, 92.0])
    canvas = np.broadcast_to(top + (bottom - top) * fade, (height, width, 3)).copy()
    canvas[whole] = BRANCH_COLOR

    depth = np.full((height, width), DEPTH_BACKGROUND, dtype=np.float64)
    depth[whole] = DEPTH_BRANCH
    for occluder in scene.occluders:
        pixels = occluder_mask(occluder, width, height)
        canvas[pixels] = occluder.color
        depth[pixels] = DEPTH_OCCLUDER

    canvas += rng.normal(0.0, 6.0, size=canvas.shape)
    image = np.clip(np.rint(canvas), 0, 255).astype(np.uint8)
    if with_depth:
        image = np.dstack([image, depth.astype(np.uint8)])
    return image


def _turning_angle(u: np.ndarray, v: np.ndarray) -> float:
    cos = float(u @ v) / (float(np.linalg.norm(u)) * float(np.linalg.norm(v)))
    return math.degrees(math.acos(max(-1.0, min(1.0, cos))))
