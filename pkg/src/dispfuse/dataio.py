"""File formats, dataset loading, augmentation and batch assembly.

On-disk layout of a dataset::

    <root>/intensity/<id>.png   8-bit grayscale
    <root>/disp1/<id>.pfm       raw disparity input 1, pixels
    <root>/disp2/<id>.pfm       raw disparity input 2, pixels
    <root>/gt/<id>.pfm          ground-truth disparity, pixels
    <root>/mask/<id>.png        validity mask (255 = ground truth present)
    <root>/manifest.json        {"labeled": [...], "unlabeled": [...],
                                 "test": [...], "d_max": float}

PFM files are single-channel ("Pf"), stored bottom-up; a negative scale in
the header marks little-endian data.
"""

import json
import os
from dataclasses import dataclass

import numpy as np
import torch
from PIL import Image

from . import core
from .errors import ConfigurationError, DataLoadError, FormatError

MANIFEST_NAME = "manifest.json"


# ---------------------------------------------------------------------------
# PFM / PNG primitives


def read_pfm(path):
    """Read a grayscale PFM file; returns (H x W float32 array, scale)."""
    with open(path, "rb") as f:
        header = f.readline().strip()
        if header == b"PF":
            raise FormatError(f"{path}: color PFM (PF) not supported, need Pf")
        if header != b"Pf":
            raise FormatError(f"{path}: not a PFM file (header {header!r})")
        dims = f.readline().split()
        if len(dims) != 2:
            raise FormatError(f"{path}: malformed dimensions line")
        try:
            width, height = int(dims[0]), int(dims[1])
            scale = float(f.readline().strip())
        except ValueError as exc:
            raise FormatError(f"{path}: malformed header: {exc}") from None
        if scale == 0:
            raise FormatError(f"{path}: zero scale in header")
        dtype = "<f4" if scale < 0 else ">f4"
        data = np.frombuffer(f.read(height * width * 4), dtype=dtype)
        if data.size != height * width:
            raise FormatError(f"{path}: truncated pixel data")
    # rows are stored bottom-up
    return np.flipud(data.reshape(height, width)).astype(np.float32), scale


def write_pfm(path, array, scale=-1.0):
    """Write a 2-D array as grayscale little-endian PFM."""
    array = np.asarray(array, dtype=np.float32)
    if array.ndim != 2:
        raise FormatError(f"{path}: PFM payload must be 2-D, got {array.shape}")
    if scale >= 0:
        raise FormatError(f"{path}: only little-endian output (scale < 0)")
    height, width = array.shape
    with open(path, "wb") as f:
        f.write(b"Pf\n")
        f.write(f"{width} {height}\n".encode("ascii"))
        f.write(f"{scale}\n".encode("ascii"))
        f.write(np.flipud(array).astype("<f4").tobytes())


def read_png_gray(path):
    """Read an 8-bit grayscale PNG as a uint8 array."""
    with Image.open(path) as img:
        return np.asarray(img.convert("L"), dtype=np.uint8)


def write_png_gray(path, array):
    """Write a uint8 array as 8-bit grayscale PNG."""
    Image.fromarray(np.asarray(array, dtype=np.uint8), mode="L").save(path)


# ---------------------------------------------------------------------------
# Manifest


@dataclass
class Manifest:
    labeled_ids: list
    unlabeled_ids: list
    test_ids: list
    d_max: float
    root: str

    def __post_init__(self):
        sets = [set(self.labeled_ids), set(self.unlabeled_ids), set(self.test_ids)]
        total = sum(len(s) for s in sets)
        if len(set().union(*sets)) != total:
            raise ConfigurationError("manifest id sets must be disjoint")
        if self.d_max <= 0:
            raise ConfigurationError(f"manifest d_max must be > 0, got {self.d_max}")

    @property
    def all_ids(self):
        return list(self.labeled_ids) + list(self.unlabeled_ids) + list(self.test_ids)

    def save(self):
        payload = {
            "labeled": list(self.labeled_ids),
            "unlabeled": list(self.unlabeled_ids),
            "test": list(self.test_ids),
            "d_max": self.d_max,
        }
        with open(os.path.join(self.root, MANIFEST_NAME), "w", encoding="utf-8") as f:
            json.dump(payload, f, indent=2, sort_keys=True)
            f.write("\n")


def load_manifest(root):
    """Load a manifest from a dataset directory (or a manifest.json path)."""
    path = root
    if os.path.isdir(root):
        path = os.path.join(root, MANIFEST_NAME)
    else:
        root = os.path.dirname(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            payload = json.load(f)
    except FileNotFoundError:
        raise DataLoadError(f"no manifest at {path}") from None
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON: {exc}") from None
    missing = {"labeled", "unlabeled", "test", "d_max"} - set(payload)
    if missing:
        raise FormatError(f"{path}: manifest missing keys {sorted(missing)}")
    return Manifest(
        labeled_ids=payload["labeled"],
        unlabeled_ids=payload["unlabeled"],
        test_ids=payload["test"],
        d_max=float(payload["d_max"]),
        root=root,
    )


def sample_paths(root, sample_id, c1=2):
    paths = {"intensity": os.path.join(root, "intensity", f"{sample_id}.png")}
    for k in range(1, c1 + 1):
        paths[f"disp{k}"] = os.path.join(root, f"disp{k}", f"{sample_id}.pfm")
    paths["gt"] = os.path.join(root, "gt", f"{sample_id}.pfm")
    paths["mask"] = os.path.join(root, "mask", f"{sample_id}.png")
    return paths


# ---------------------------------------------------------------------------
# Resizing and sample assembly

# Decoded/resized samples are cached pre-augmentation; flips are applied on
# copies so cache entries stay pristine.
_SAMPLE_CACHE = {}


def clear_sample_cache():
    _SAMPLE_CACHE.clear()


def _resize_bilinear(arr, height, width):
    if arr.shape == (height, width):
        return np.asarray(arr, dtype=np.float32)
    t = torch.from_numpy(np.ascontiguousarray(arr, dtype=np.float32))
    out = torch.nn.functional.interpolate(
        t[None, None], size=(height, width), mode="bilinear", align_corners=False
    )
    return out[0, 0].numpy()


def _resize_nearest(arr, height, width):
    if arr.shape == (height, width):
        return arr
    rows = np.minimum(
        (np.arange(height) + 0.5) * arr.shape[0] / height, arr.shape[0] - 1
    ).astype(np.int64)
    cols = np.minimum(
        (np.arange(width) + 0.5) * arr.shape[1] / width, arr.shape[1] - 1
    ).astype(np.int64)
    return arr[np.ix_(rows, cols)]


def load_sample(manifest, sample_id, height, width, c1=2, labeled=None):
    """Load one sample: resize, normalize, compute the gradient channel.

    Intensity is resized bilinearly; disparity and mask use nearest-neighbor
    so values never blend across depth discontinuities.  Disparities scale
    with the width ratio because disparity is a horizontal measure.  Ids in
    the manifest's unlabeled list come back without ground truth.
    """
    if labeled is None:
        labeled = sample_id not in set(manifest.unlabeled_ids)
    key = (manifest.root, sample_id, height, width, c1, labeled)
    if key in _SAMPLE_CACHE:
        return _SAMPLE_CACHE[key]

    paths = sample_paths(manifest.root, sample_id, c1)
    for name, path in paths.items():
        if name in ("gt", "mask") and not labeled:
            continue
        if not os.path.exists(path):
            raise DataLoadError(f"sample {sample_id}: missing file {path}")

    intensity_raw = read_png_gray(paths["intensity"]).astype(np.float32)
    src_shape = intensity_raw.shape
    width_ratio = width / src_shape[1]

    intensity = _resize_bilinear(intensity_raw, height, width) / 127.5 - 1.0
    intensity = np.clip(intensity, -1.0, 1.0)
    gradient = core.image_gradient(intensity).astype(np.float32)

    disp_inputs = []
    for k in range(1, c1 + 1):
        raw, _ = read_pfm(paths[f"disp{k}"])
        if raw.shape != src_shape:
            raise DataLoadError(
                f"sample {sample_id}: disp{k} shape {raw.shape} != {src_shape}"
            )
        raw = _resize_nearest(raw, height, width) * width_ratio
        disp_inputs.append(
            core.normalize_disparity(raw, manifest.d_max).astype(np.float32)
        )

    gt = None
    mask = None
    if labeled:
        gt_raw, _ = read_pfm(paths["gt"])
        if gt_raw.shape != src_shape:
            raise DataLoadError(f"sample {sample_id}: gt shape mismatch")
        gt_raw = _resize_nearest(gt_raw, height, width) * width_ratio
        gt = core.normalize_disparity(gt_raw, manifest.d_max).astype(np.float32)
        mask = _resize_nearest(read_png_gray(paths["mask"]), height, width) > 127

    sample = core.FusionSample(
        sample_id=sample_id,
        left_intensity=intensity.astype(np.float32),
        gradient_map=gradient,
        disp_inputs=disp_inputs,
        d_max=manifest.d_max,
        gt_disp=gt,
        valid_mask=mask,
    )
    _SAMPLE_CACHE[key] = sample
    return sample


# ---------------------------------------------------------------------------
# Batches


@dataclass
class Batch:
    """Samples stacked channel-wise for the networks.

    ``inputs`` is (b, c1+c2, H, W) with channel order
    [disp_1, ..., disp_c1, intensity, gradient]; ``gt`` and ``mask``
    are (b, 1, H, W).
    """

    inputs: torch.Tensor
    gt: torch.Tensor
    mask: torch.Tensor
    labeled: bool
    sample_ids: list

    @property
    def c1(self):
        return self.inputs.shape[1] - 2

    @property
    def intensity(self):
        return self.inputs[:, self.c1 : self.c1 + 1]

    @property
    def gradient(self):
        return self.inputs[:, self.c1 + 1 : self.c1 + 2]

    def flipped(self):
        """Vertically flipped copy (all channels and mask together)."""
        return Batch(
            inputs=torch.flip(self.inputs, dims=[2]),
            gt=torch.flip(self.gt, dims=[2]),
            mask=torch.flip(self.mask, dims=[2]),
            labeled=self.labeled,
            sample_ids=list(self.sample_ids),
        )


def batch_from_samples(samples, labeled):
    stacks, gts, masks = [], [], []
    for s in samples:
        chans = list(s.disp_inputs) + [s.left_intensity, s.gradient_map]
        stacks.append(np.stack(chans, axis=0))
        if s.gt_disp is not None:
            gts.append(s.gt_disp[None])
        else:
            gts.append(np.full((1,) + s.shape, -1.0, dtype=np.float32))
        masks.append(s.valid_mask[None])
    return Batch(
        inputs=torch.from_numpy(np.stack(stacks).astype(np.float32)),
        gt=torch.from_numpy(np.stack(gts).astype(np.float32)),
        mask=torch.from_numpy(np.stack(masks)),
        labeled=labeled,
        sample_ids=[s.sample_id for s in samples],
    )


def load_batch(manifest, ids, net_cfg, augment=False, rng=None, labeled=None):
    """Assemble a batch in the order of ``ids``.

    With ``augment`` each sample is independently flipped vertically with
    probability 0.5 using draws from ``rng`` (one draw per sample, in id
    order).
    """
    if not ids:
        raise ConfigurationError("load_batch needs at least one id")
    if augment and rng is None:
        raise ConfigurationError("augment=True requires an rng")
    samples = [
        load_sample(manifest, i, net_cfg.height, net_cfg.width, net_cfg.c1, labeled)
        for i in ids
    ]
    if labeled is None:
        labeled = all(s.gt_disp is not None for s in samples)
    batch = batch_from_samples(samples, labeled)
    if augment:
        flips = rng.random(len(ids)) < 0.5
        if flips.any():
            flipped = batch.flipped()
            sel = torch.from_numpy(flips)
            batch.inputs[sel] = flipped.inputs[sel]
            batch.gt[sel] = flipped.gt[sel]
            batch.mask[sel] = flipped.mask[sel]
    return batch


def sample_real_pool(manifest, net_cfg, rng, k):
    """Draw k labeled samples uniformly without replacement.

    Returns their ground-truth disparities together with each sample's own
    conditioning stack, assembled as a labeled Batch.
    """
    labeled = list(manifest.labeled_ids)
    if k > len(labeled):
        raise ConfigurationError(
            f"requested {k} pool samples but only {len(labeled)} labeled ids"
        )
    idx = rng.choice(len(labeled), size=k, replace=False)
    ids = [labeled[i] for i in idx]
    return load_batch(manifest, ids, net_cfg, augment=False, labeled=True)


def adapt_external(dataset_kind, *_args, **_kwargs):
    """Adapter stub for external stereo datasets.

    Converting a native dataset means producing the layout documented at the
    top of this module (PFM disparities, PNG intensity, manifest.json); no
    native readers are bundled here.
    """
    raise NotImplementedError(
        f"no bundled loader for {dataset_kind!r}; convert the dataset to the "
        "directory layout documented in dispfuse.dataio and point the "
        "manifest at it"
    )
