"""Synthetic RGB-D scenes, feature selection, low-texture completion and patches."""

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import ValidationError
from scipy import ndimage

from reloc_kit.core.errors import InvalidSpec, MarginViolation, NoSeedFeatures
from reloc_kit.core.logging import get_logger
from reloc_kit.models.geometry import CameraIntrinsics, Pose
from reloc_kit.models.scene import (
    FEATURE_BUDGET,
    DepthMap,
    Keyframe,
    Patch,
    PixelCoord,
    Quad,
    SceneSpec,
    SyntheticScene,
    TextureKind,
    TrajectoryKind,
)
from reloc_kit.services.geometry import Z_MIN, compose, inverse, rotation_angle, rot_z

logger = get_logger(__name__)

MAX_STEP_TRANSLATION = 0.5
MAX_STEP_ROTATION = 0.3
MAX_RESAMPLE_ATTEMPTS = 100
_GRADIENT_EPS = 1e-9
_LIGHT = np.array([0.3, 0.5, 0.8]) / np.linalg.norm([0.3, 0.5, 0.8])
_NOISE_TABLE = 64


def parse_scene_spec(spec: Union[SceneSpec, Mapping[str, object], None]) -> SceneSpec:
    if spec is None:
        return SceneSpec()
    if isinstance(spec, SceneSpec):
        return spec
    try:
        return SceneSpec.model_validate(dict(spec))
    except ValidationError as exc:
        raise InvalidSpec(f"invalid scene spec: {exc.errors()}") from exc


def _look_rotation(forward: np.ndarray) -> np.ndarray:
    """Camera-to-world rotation: z forward, y towards the floor."""
    z_axis = forward / np.linalg.norm(forward)
    y_axis = np.array([0.0, 0.0, -1.0])
    x_axis = np.cross(y_axis, z_axis)
    x_axis /= np.linalg.norm(x_axis)
    y_axis = np.cross(z_axis, x_axis)
    return np.column_stack([x_axis, y_axis, z_axis])


def _room_quads(spec: SceneSpec, rng: np.random.Generator) -> Tuple[Quad, ...]:
    length, width, height = spec.room_length, spec.room_width, spec.room_height
    ex, ey, ez = np.eye(3)
    faces = [
        (np.zeros(3), length * ex, width * ey),  # floor
        (height * ez, width * ey, length * ex),  # ceiling
        (np.zeros(3), height * ez, length * ex),  # wall y = 0
        (width * ey, length * ex, height * ez),  # wall y = width
        (np.zeros(3), width * ey, height * ez),  # wall x = 0
        (length * ex, height * ez, width * ey),  # wall x = length
    ]
    quads = []
    for origin, edge_u, edge_v in faces:
        color = tuple(int(c) for c in rng.integers(60, 230, size=3))
        normal = np.cross(edge_u, edge_v)
        normal /= np.linalg.norm(normal)
        shade = 0.6 + 0.4 * abs(float(normal @ _LIGHT))
        quads.append(Quad(origin, edge_u, edge_v, color, shade))  # type: ignore[arg-type]
    return tuple(quads)


def _corridor_trajectory(spec: SceneSpec, rng: np.random.Generator) -> List[Pose]:
    count = spec.keyframes_per_loop
    start = spec.wall_clearance
    end = spec.room_length - spec.wall_clearance
    base_rotation = _look_rotation(np.array([0.0, 1.0, 0.0]))
    poses = []
    for loop in range(spec.loops):
        for k in range(count):
            s = k / (count - 1) if count > 1 else 0.0
            if loop % 2 == 1:
                s = 1.0 - s
            position = np.array(
                [start + s * (end - start), spec.room_width / 2, spec.camera_height]
            )
            position += rng.uniform(-1.0, 1.0, size=3) * spec.jitter_translation
            yaw = rng.uniform(-1.0, 1.0) * spec.jitter_rotation
            poses.append(Pose(rot_z(yaw) @ base_rotation, position))
    return poses


def _circle_trajectory(spec: SceneSpec, rng: np.random.Generator) -> List[Pose]:
    count = spec.keyframes_per_loop
    center = np.array([spec.room_length / 2, spec.room_width / 2, spec.camera_height])
    radius = max(min(spec.room_length, spec.room_width) / 2 - spec.wall_clearance, 0.1)
    poses = []
    for loop in range(spec.loops):
        direction = -1.0 if loop % 2 == 1 else 1.0
        for k in range(count):
            alpha = direction * 2.0 * np.pi * k / count
            outward = np.array([np.cos(alpha), np.sin(alpha), 0.0])
            position = center + radius * outward
            position += rng.uniform(-1.0, 1.0, size=3) * spec.jitter_translation
            yaw = rng.uniform(-1.0, 1.0) * spec.jitter_rotation
            poses.append(Pose(rot_z(yaw) @ _look_rotation(outward), position))
    return poses


def check_bounded_motion(trajectory: Sequence[Pose]) -> None:
    for index in range(1, len(trajectory)):
        step = compose(inverse(trajectory[index - 1]), trajectory[index])
        translation = float(np.linalg.norm(step.translation))
        angle = rotation_angle(step.rotation)
        if translation >= MAX_STEP_TRANSLATION or angle >= MAX_STEP_ROTATION:
            raise InvalidSpec(
                f"keyframes {index - 1}->{index} move {translation:.3f} m / "
                f"{angle:.3f} rad; bounds are {MAX_STEP_TRANSLATION} m / "
                f"{MAX_STEP_ROTATION} rad"
            )


def _texture_color(
    quad: Quad,
    s: np.ndarray,
    t: np.ndarray,
    spec: SceneSpec,
    noise_table: np.ndarray,
) -> np.ndarray:
    a = np.floor(s * np.linalg.norm(quad.edge_u) / spec.checker_size).astype(np.int64)
    b = np.floor(t * np.linalg.norm(quad.edge_v) / spec.checker_size).astype(np.int64)
    base = np.asarray(quad.base_color, dtype=np.float64)
    if spec.texture is TextureKind.CHECKER:
        factor = np.where((a + b) % 2 == 0, 1.0, 0.55)
        color = factor[..., None] * base
    else:
        color = 0.5 * base + 0.5 * noise_table[a % _NOISE_TABLE, b % _NOISE_TABLE]
    return color * quad.shade


def render_keyframe(
    scene_geometry: Sequence[Quad],
    pose: Pose,
    k: CameraIntrinsics,
    spec: SceneSpec,
    noise_table: np.ndarray,
    hole_rng: Optional[np.random.Generator] = None,
    keyframe_id: int = 0,
    timestamp: float = 0.0,
) -> Keyframe:
    """Ray-cast pixel centres against the quads; depth is the nearest hit z."""
    cols, rows = np.meshgrid(np.arange(k.width), np.arange(k.height))
    rays_cam = np.stack(
        [
            (cols + 0.5 - k.cx) / k.fx,
            (rows + 0.5 - k.cy) / k.fy,
            np.ones(cols.shape),
        ],
        axis=-1,
    )
    rays = rays_cam @ pose.rotation.T
    origin = pose.translation

    depth = np.full(k.shape, np.inf)
    color = np.zeros(k.shape + (3,))
    for quad in scene_geometry:
        normal = quad.normal
        denom = rays @ normal
        usable = np.abs(denom) > 1e-12
        t_hit = np.where(
            usable, ((quad.origin - origin) @ normal) / np.where(usable, denom, 1.0), -1.0
        )
        hits = origin + t_hit[..., None] * rays
        rel = hits - quad.origin
        s = rel @ quad.edge_u / (quad.edge_u @ quad.edge_u)
        t = rel @ quad.edge_v / (quad.edge_v @ quad.edge_v)
        inside = usable & (t_hit > Z_MIN) & (s >= 0) & (s <= 1) & (t >= 0) & (t <= 1)
        closer = inside & (t_hit < depth)
        if not np.any(closer):
            continue
        depth = np.where(closer, t_hit, depth)
        shaded = _texture_color(quad, s, t, spec, noise_table)
        color = np.where(closer[..., None], shaded, color)

    depth = np.where(np.isfinite(depth), depth, 0.0)
    # delivered on the 1 mm grid of the 16-bit dataset format
    depth = np.round(depth * 1000.0) / 1000.0
    if hole_rng is not None and spec.depth_hole_probability > 0:
        holes = hole_rng.random(k.shape) < spec.depth_hole_probability
        depth = np.where(holes, 0.0, depth)
    rgb = np.clip(np.round(color), 0, 255).astype(np.uint8)
    return Keyframe(
        id=keyframe_id, rgb=rgb, depth=DepthMap(depth), timestamp=timestamp
    )


def generate_scene(
    spec: Union[SceneSpec, Mapping[str, object], None],
    seed: int,
    threads: int = 1,
) -> SyntheticScene:
    """Build and render a seeded synthetic room scene."""
    spec = parse_scene_spec(spec)
    if spec.keyframe_count < 2:
        raise InvalidSpec("trajectory needs at least 2 keyframes")
    if spec.wall_clearance * 2 >= spec.room_length:
        raise InvalidSpec("wall_clearance leaves no room to move")

    rng = np.random.default_rng(seed)
    geometry = _room_quads(spec, rng)
    noise_table = rng.integers(0, 256, size=(_NOISE_TABLE, _NOISE_TABLE, 3)).astype(
        np.float64
    )
    if spec.trajectory is TrajectoryKind.CORRIDOR:
        trajectory = _corridor_trajectory(spec, rng)
    else:
        trajectory = _circle_trajectory(spec, rng)
    check_bounded_motion(trajectory)

    k = spec.intrinsics()
    hole_seeds = np.random.SeedSequence(seed).spawn(len(trajectory))

    def render(index: int) -> Keyframe:
        return render_keyframe(
            geometry,
            trajectory[index],
            k,
            spec,
            noise_table,
            hole_rng=np.random.default_rng(hole_seeds[index]),
            keyframe_id=index,
            timestamp=round(index * spec.frame_interval, 6),
        )

    with ThreadPoolExecutor(max_workers=max(threads, 1)) as pool:
        keyframes = tuple(pool.map(render, range(len(trajectory))))

    logger.info(
        "Scene generated",
        seed=seed,
        trajectory=spec.trajectory.value,
        keyframes=len(keyframes),
        resolution=f"{k.width}x{k.height}",
    )
    return SyntheticScene(
        spec=spec,
        seed=seed,
        intrinsics=k,
        geometry=geometry,
        trajectory=tuple(trajectory),
        keyframes=keyframes,
    )


def gradient_magnitude(rgb: np.ndarray) -> np.ndarray:
    gray = np.asarray(rgb, dtype=np.float64).mean(axis=2)
    return np.hypot(ndimage.sobel(gray, axis=1), ndimage.sobel(gray, axis=0))


def _margin_mask(height: int, width: int, margin: int) -> np.ndarray:
    rows, cols = np.mgrid[0:height, 0:width]
    return (
        (cols >= margin)
        & (cols <= width - margin)
        & (rows >= margin)
        & (rows <= height - margin)
    )


def select_features(
    rgb: np.ndarray,
    depth: Optional[np.ndarray] = None,
    budget: int = FEATURE_BUDGET,
    seed: int = 0,
    margin: int = 8,
) -> List[PixelCoord]:
    """Top-`budget` Sobel-magnitude pixels, random tie-break, sorted by (v, u)."""
    rgb = np.asarray(rgb)
    if rgb.size == 0:
        raise ValueError("image is empty")
    height, width = rgb.shape[:2]
    magnitude = gradient_magnitude(rgb)
    candidates = (magnitude > _GRADIENT_EPS) & _margin_mask(height, width, margin)
    if depth is not None:
        candidates &= np.asarray(depth) > 0

    rows, cols = np.nonzero(candidates)
    if rows.size == 0:
        return []
    rng = np.random.default_rng(seed)
    tie_break = rng.random(rows.size)
    order = np.lexsort((tie_break, -magnitude[rows, cols]))[:budget]
    chosen = sorted(zip(cols[order].tolist(), rows[order].tolist()), key=lambda p: (p[1], p[0]))
    return [(int(u), int(v)) for u, v in chosen]


def point_on_segment(
    start: Tuple[float, float], end: Tuple[float, float], t: float
) -> PixelCoord:
    """Integer pixel on the start→end segment, stepping along the major axis.

    Only the minor coordinate is rounded, so the pixel stays within 0.5 px of
    the line.
    """
    dx = end[0] - start[0]
    dy = end[1] - start[1]
    if dx == 0 and dy == 0:
        return (int(round(start[0])), int(round(start[1])))
    if abs(dx) >= abs(dy):
        x = int(round(start[0] + t * dx))
        y = int(round(start[1] + (x - start[0]) * dy / dx))
    else:
        y = int(round(start[1] + t * dy))
        x = int(round(start[0] + (y - start[1]) * dx / dy))
    return (x, y)


def sample_line_points(
    features: Sequence[PixelCoord],
    count: int,
    center: Tuple[float, float],
    rng: np.random.Generator,
    is_valid: Optional[Callable[[PixelCoord], bool]] = None,
) -> List[Tuple[PixelCoord, int]]:
    """Random points on feature→centre segments, tagged with their segment index."""
    taken = {(int(u), int(v)) for u, v in features}
    sampled: List[Tuple[PixelCoord, int]] = []
    for _ in range(count):
        for _attempt in range(MAX_RESAMPLE_ATTEMPTS):
            segment = int(rng.integers(len(features)))
            t = float(rng.random())
            point = point_on_segment(features[segment], center, t)
            if point in taken or (is_valid is not None and not is_valid(point)):
                continue
            taken.add(point)
            sampled.append((point, segment))
            break
    return sampled


def augment_low_texture(
    features: Sequence[PixelCoord],
    budget: int = FEATURE_BUDGET,
    center: Optional[Tuple[float, float]] = None,
    seed: int = 0,
    *,
    image_size: Optional[Tuple[int, int]] = None,
    margin: int = 8,
) -> List[PixelCoord]:
    """Fill up to `budget` with points on lines from existing features to the centre."""
    if len(features) == 0:
        raise NoSeedFeatures("low-texture completion needs at least one feature")
    features = [(int(u), int(v)) for u, v in features]
    if len(features) >= budget:
        return features
    if center is None:
        if image_size is None:
            raise ValueError("either center or image_size is required")
        center = (image_size[0] / 2, image_size[1] / 2)

    is_valid = None
    if image_size is not None:
        width, height = image_size

        def is_valid(point: PixelCoord) -> bool:
            u, v = point
            return margin <= u <= width - margin and margin <= v <= height - margin

    rng = np.random.default_rng(seed)
    added = sample_line_points(features, budget - len(features), center, rng, is_valid)
    if len(added) < budget - len(features):
        logger.debug(
            "Low-texture completion skipped points",
            requested=budget - len(features),
            added=len(added),
        )
    return features + [point for point, _ in added]


def extract_patches(kf: Keyframe, features: Sequence[PixelCoord], scale: int) -> List[Patch]:
    """Exact scale×scale crops spanning [u − scale/2, u + scale/2)."""
    if scale <= 0 or scale % 2:
        raise MarginViolation(f"patch scale must be a positive even integer, got {scale}")
    half = scale // 2
    patches = []
    for u, v in features:
        if not (half <= u <= kf.width - half and half <= v <= kf.height - half):
            raise MarginViolation(
                f"feature ({u}, {v}) is closer than {half} px to the border for scale {scale}"
            )
        data = kf.rgb[v - half : v + half, u - half : u + half].copy()
        patches.append(Patch(u=int(u), v=int(v), scale=scale, data=data))
    return patches


def extract_multiscale_patches(
    kf: Keyframe, features: Sequence[PixelCoord], scales: Sequence[int]
) -> Dict[int, List[Patch]]:
    """Patches per scale, keeping only features whose crop fits at that scale."""
    result: Dict[int, List[Patch]] = {}
    for scale in scales:
        half = scale // 2
        fitting = [
            (u, v)
            for u, v in features
            if half <= u <= kf.width - half and half <= v <= kf.height - half
        ]
        result[scale] = extract_patches(kf, fitting, scale)
    return result


def prepare_keyframe(
    kf: Keyframe, budget: int = FEATURE_BUDGET, scale: int = 16, seed: int = 0
) -> Keyframe:
    """Feature selection → low-texture completion → patch extraction."""
    margin = scale // 2
    features = select_features(kf.rgb, kf.depth.values, budget, seed + kf.id, margin)
    if 0 < len(features) < budget:
        features = augment_low_texture(
            features,
            budget,
            seed=seed + kf.id,
            image_size=(kf.width, kf.height),
            margin=margin,
        )
    patches = extract_patches(kf, features, scale)
    return kf.with_features(features).with_patches(patches)


def prepare_keyframes(
    keyframes: Sequence[Keyframe],
    budget: int = FEATURE_BUDGET,
    scale: int = 16,
    seed: int = 0,
    threads: int = 1,
) -> List[Keyframe]:
    with ThreadPoolExecutor(max_workers=max(threads, 1)) as pool:
        return list(pool.map(lambda kf: prepare_keyframe(kf, budget, scale, seed), keyframes))
