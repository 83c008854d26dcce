"""Procedural desk-scale fusion datasets.

A scene is a sloped background disparity plane plus a handful of overlapping
ellipses/rectangles, each carrying its own plane; nearer (higher-disparity)
objects occlude farther ones.  Intensity is per-region albedo plus
band-limited texture, so intensity edges coincide with disparity edges and
some regions are deliberately textureless.  Two corruption models stand in
for real disparity sources: a stereo-style one that degrades in textureless
areas and punches holes, and a monocular-style one that blurs depth edges
and drifts smoothly.
"""

import os
from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage

from . import dataio
from .errors import ConfigurationError
from .validation import check_multiple_of_32

SENSOR_KINDS = ("stereo_like", "tof_like", "mono_like")


@dataclass(frozen=True)
class SceneSpec:
    height: int = 96
    width: int = 128
    num_objects: int = 6
    disparity_range: tuple = (10.0, 60.0)
    texture_amplitude: float = 0.35
    seed: int = 0

    def __post_init__(self):
        check_multiple_of_32(self.height, "scene height")
        check_multiple_of_32(self.width, "scene width")
        if self.num_objects < 0:
            raise ConfigurationError("num_objects must be >= 0")
        d_lo, d_hi = self.disparity_range
        if not 0 <= d_lo < d_hi:
            raise ConfigurationError(
                f"disparity_range must satisfy 0 <= lo < hi, got {self.disparity_range}"
            )
        if self.texture_amplitude < 0:
            raise ConfigurationError("texture_amplitude must be >= 0")


@dataclass(frozen=True)
class SensorModel:
    kind: str
    noise_sigma: float = 0.0
    hole_fraction: float = 0.0
    blur_radius: int = 0
    texture_threshold: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.kind not in SENSOR_KINDS:
            raise ConfigurationError(f"unknown sensor kind {self.kind!r}")
        if not 0 <= self.hole_fraction < 1:
            raise ConfigurationError("hole_fraction must be in [0, 1)")
        if self.noise_sigma < 0 or self.blur_radius < 0 or self.texture_threshold < 0:
            raise ConfigurationError("sensor parameters must be nonnegative")


@dataclass
class Scene:
    """Full render: disparity, intensity, and the masks the tests scan."""

    gt_disp: np.ndarray
    intensity: np.ndarray
    region_labels: np.ndarray  # 0 = background, i = i-th painted object
    texture_scale: np.ndarray  # per-pixel texture strength multiplier

    @property
    def edge_mask(self):
        """Pixels whose right or down neighbor belongs to another region."""
        lab = self.region_labels
        edge = np.zeros(lab.shape, dtype=bool)
        edge[:, :-1] |= lab[:, :-1] != lab[:, 1:]
        edge[:-1, :] |= lab[:-1, :] != lab[1:, :]
        return edge


def _coordinate_grids(height, width):
    y = np.linspace(0.0, 1.0, height)[:, None]
    x = np.linspace(0.0, 1.0, width)[None, :]
    return y, x


def _band_limited_noise(rng, height, width, smooth_sigma=1.5):
    field = ndimage.gaussian_filter(rng.standard_normal((height, width)), smooth_sigma)
    std = field.std()
    return field / std if std > 0 else field


def render_scene(spec):
    """Render a scene with its region labels; deterministic in the seed."""
    rng = np.random.default_rng(spec.seed)
    h, w = spec.height, spec.width
    d_lo, d_hi = spec.disparity_range
    span = d_hi - d_lo
    y, x = _coordinate_grids(h, w)

    # background: gently sloped plane confined to the far quarter of the range
    b0 = d_lo + rng.uniform(0.0, 0.1) * span
    bx, by = rng.uniform(-0.15, 0.15, size=2) * span
    gt = np.clip(b0 + bx * x + by * y, d_lo, d_lo + 0.25 * span)
    labels = np.zeros((h, w), dtype=np.int32)

    # objects: nearer planes, painted far-to-near so occlusion is consistent;
    # the 0.4*span floor keeps every object >= 0.15*span above the background
    bases = sorted(rng.uniform(d_lo + 0.45 * span, d_hi, size=spec.num_objects))
    for i, base in enumerate(bases):
        cy, cx = rng.uniform(0.12, 0.88), rng.uniform(0.12, 0.88)
        ry, rx = rng.uniform(0.08, 0.28, size=2)
        angle = rng.uniform(0.0, np.pi)
        u = (y - cy) * np.cos(angle) + (x - cx) * np.sin(angle)
        v = -(y - cy) * np.sin(angle) + (x - cx) * np.cos(angle)
        if rng.random() < 0.5:
            inside = (u / ry) ** 2 + (v / rx) ** 2 <= 1.0
        else:
            inside = (np.abs(u) <= ry) & (np.abs(v) <= rx)
        gx, gy = rng.uniform(-0.08, 0.08, size=2) * span
        plane = np.clip(base + gx * x + gy * y, d_lo + 0.4 * span, d_hi)
        gt[inside] = plane[inside]
        labels[inside] = i + 1

    # intensity: per-region albedo plus band-limited texture; roughly 40% of
    # regions get no texture at all so the stereo-style sensor has somewhere
    # to fail
    albedo = rng.uniform(-0.8, 0.8, size=spec.num_objects + 1)
    tex_scale_per_region = np.where(
        rng.random(spec.num_objects + 1) < 0.4,
        0.0,
        rng.uniform(0.5, 1.0, size=spec.num_objects + 1),
    )
    intensity = albedo[labels]
    texture_scale = tex_scale_per_region[labels]
    texture = _band_limited_noise(rng, h, w)
    intensity = intensity + spec.texture_amplitude * texture_scale * texture
    intensity = np.clip(intensity, -1.0, 1.0)

    return Scene(
        gt_disp=gt.astype(np.float64),
        intensity=intensity.astype(np.float64),
        region_labels=labels,
        texture_scale=texture_scale,
    )


def generate_scene(spec):
    """Ground-truth disparity (pixels) and intensity in [-1, 1]."""
    scene = render_scene(spec)
    return scene.gt_disp, scene.intensity


def local_texture(intensity, size=5):
    """Per-pixel intensity variance in a size x size window."""
    mean = ndimage.uniform_filter(intensity, size=size, mode="nearest")
    mean_sq = ndimage.uniform_filter(intensity**2, size=size, mode="nearest")
    return np.maximum(mean_sq - mean**2, 0.0)


def corrupt(gt_disp, intensity, model):
    """Degrade a ground-truth disparity map per the sensor model.

    Holes are encoded as disparity 0; the returned boolean mask marks them.
    """
    rng = np.random.default_rng(model.seed)
    h, w = gt_disp.shape
    hole_mask = np.zeros((h, w), dtype=bool)

    if model.kind == "stereo_like":
        # noise is 4x stronger where the 5x5 intensity variance is low
        texture = local_texture(intensity)
        sigma = np.where(texture < model.texture_threshold, 4.0, 1.0) * model.noise_sigma
        raw = gt_disp + rng.standard_normal((h, w)) * sigma
        n_holes = int(round(model.hole_fraction * h * w))
        if n_holes:
            flat = rng.choice(h * w, size=n_holes, replace=False)
            hole_mask.flat[flat] = True
    elif model.kind == "tof_like":
        raw = gt_disp + rng.standard_normal((h, w)) * model.noise_sigma
        if model.hole_fraction > 0:
            # one contiguous dropout disk of the requested area
            radius = np.sqrt(model.hole_fraction * h * w / np.pi)
            cy = rng.uniform(radius, h - radius) if h > 2 * radius else h / 2
            cx = rng.uniform(radius, w - radius) if w > 2 * radius else w / 2
            yy, xx = np.mgrid[0:h, 0:w]
            hole_mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= radius**2
    elif model.kind == "mono_like":
        size = 2 * model.blur_radius + 1
        raw = ndimage.uniform_filter(gt_disp, size=size, mode="nearest")
        if model.noise_sigma > 0:
            field = ndimage.gaussian_filter(
                rng.standard_normal((h, w)), sigma=min(h, w) / 6.0
            )
            peak = np.abs(field).max()
            if peak > 0:
                raw = raw + field * (model.noise_sigma / peak)
    else:  # pragma: no cover - guarded by SensorModel
        raise ConfigurationError(f"unknown sensor kind {model.kind!r}")

    raw = raw.copy()
    raw[hole_mask] = 0.0
    return raw, hole_mask


def default_sensors(seed=0):
    """Sensor pair tuned so the stereo-style input is about twice as bad.

    Absolute levels sit near 4% / 7% of the disparity ceiling, matching the
    relative quality of typical raw inputs at this task.
    """
    stereo = SensorModel(
        kind="stereo_like",
        noise_sigma=1.9,
        hole_fraction=0.06,
        texture_threshold=1e-3,
        seed=seed,
    )
    mono = SensorModel(
        kind="mono_like",
        noise_sigma=2.0,
        blur_radius=3,
        seed=seed + 1,
    )
    return stereo, mono


def build_dataset(
    n,
    spec_template,
    sensors,
    out_dir,
    d_max,
    n_test=0,
    unlabeled_frac=0.0,
    root_seed=0,
):
    """Write n training samples plus n_test test samples and a manifest.

    Per-sample seeds derive from ``root_seed`` and the sample index, so any
    single sample can be regenerated in isolation.  The last
    ``round(unlabeled_frac * n)`` training samples are listed as unlabeled;
    their ground truth is still written (the loader withholds it).
    """
    if n < 0 or n_test < 0:
        raise ConfigurationError("sample counts must be >= 0")
    if not 0 <= unlabeled_frac <= 1:
        raise ConfigurationError("unlabeled_frac must be in [0, 1]")
    if len(sensors) != 2:
        raise ConfigurationError("exactly two sensor models are required")
    d_lo, d_hi = spec_template.disparity_range
    if d_hi > d_max:
        raise ConfigurationError(
            f"disparity_range upper bound {d_hi} exceeds d_max {d_max}"
        )

    os.makedirs(out_dir, exist_ok=True)
    for sub in ("intensity", "disp1", "disp2", "gt", "mask"):
        os.makedirs(os.path.join(out_dir, sub), exist_ok=True)

    ids = []
    total = n + n_test
    for index in range(total):
        sample_seed = int(
            np.random.SeedSequence([root_seed, index]).generate_state(1)[0]
        )
        spec = replace(spec_template, seed=sample_seed)
        scene = render_scene(spec)
        sample_id = f"s{index:05d}"
        paths = dataio.sample_paths(out_dir, sample_id)
        try:
            dataio.write_png_gray(
                paths["intensity"],
                np.clip((scene.intensity + 1.0) * 127.5, 0, 255).round(),
            )
            for k, sensor in enumerate(sensors, start=1):
                raw, _ = corrupt(
                    scene.gt_disp,
                    scene.intensity,
                    replace(sensor, seed=sample_seed + sensor.seed),
                )
                dataio.write_pfm(paths[f"disp{k}"], raw)
            dataio.write_pfm(paths["gt"], scene.gt_disp)
            dataio.write_png_gray(
                paths["mask"], np.full(scene.gt_disp.shape, 255, dtype=np.uint8)
            )
        except OSError as exc:
            raise ConfigurationError(f"failed writing {exc.filename}: {exc}") from exc
        ids.append(sample_id)

    train_ids, test_ids = ids[:n], ids[n:]
    n_unlabeled = int(round(unlabeled_frac * n))
    labeled_ids = train_ids[: n - n_unlabeled]
    unlabeled_ids = train_ids[n - n_unlabeled :]

    manifest = dataio.Manifest(
        labeled_ids=labeled_ids,
        unlabeled_ids=unlabeled_ids,
        test_ids=test_ids,
        d_max=float(d_max),
        root=out_dir,
    )
    manifest.save()
    return manifest
