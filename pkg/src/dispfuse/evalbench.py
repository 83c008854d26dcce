"""Metrics, ablation/sensitivity harnesses and error-map rendering.

The single quantitative metric is the mean absolute disparity error in
pixels over valid pixels.  The harnesses retrain one model per variant/grid
point under identical seeds and data and emit CSV tables plus PNG plots.
Published full-scale reference numbers are printed next to desk-scale
results for orientation only; the only hard claim tested elsewhere is that
the fused output beats both inputs.
"""

import csv
import json
import os
from dataclasses import dataclass, field, replace

import numpy as np

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from . import dataio
from .core import GAN_JS, GAN_WGAN_GP, MODE_SEMI, MODE_SUPERVISED, denormalize_disparity
from .errors import ConfigurationError, MetricError
from .trainer import Trainer

# Published full-scale reference (mean absolute disparity error, pixels):
# two raw inputs and the four model variants on the 421-sample synthetic
# garden test set.  Reported for orientation, never asserted.
REFERENCE_INPUT_MAE = {"input1": 11.41, "input2": 6.28}
REFERENCE_VARIANT_MAE = {
    "JS-GAN": 4.40,
    "Monoscale": 3.40,
    "Supervised": 3.10,
    "Semi": 2.84,
}
REFERENCE_SINGLE_KNOB_MAE = {
    "theta1=0": 298.2,
    "theta2=0": 3.46,
    "theta3=0": 3.25,
    "alpha=0": 3.48,
    "beta=1": 3.37,
    "Baseline": 3.10,
}
REFERENCE_FRAME_TIME_S = 0.007  # 480x640 on a desktop accelerator


def mae(pred_disp, gt_disp, valid_mask, d_max):
    """Mean absolute disparity error in pixels over valid pixels.

    Inputs are normalized disparity maps; both are denormalized before the
    difference.  An empty mask is an error: the metric is absent, not zero.
    """
    pred = np.asarray(pred_disp, dtype=np.float64)
    gt = np.asarray(gt_disp, dtype=np.float64)
    mask = np.asarray(valid_mask, dtype=bool)
    if pred.shape != gt.shape or pred.shape != mask.shape:
        raise ConfigurationError(
            f"shape mismatch: pred {pred.shape}, gt {gt.shape}, mask {mask.shape}"
        )
    if not mask.any():
        raise MetricError("validity mask is empty; MAE undefined")
    diff = np.abs(
        denormalize_disparity(pred, d_max) - denormalize_disparity(gt, d_max)
    )
    return float(diff[mask].mean())


def input_mae(manifest, net_cfg, ids=None):
    """MAE of each raw disparity input against ground truth over ``ids``."""
    ids = list(manifest.test_ids if ids is None else ids)
    per_input = [[] for _ in range(net_cfg.c1)]
    for sample_id in ids:
        sample = dataio.load_sample(
            manifest, sample_id, net_cfg.height, net_cfg.width, net_cfg.c1, labeled=True
        )
        for k, disp in enumerate(sample.disp_inputs):
            per_input[k].append(
                mae(disp, sample.gt_disp, sample.valid_mask, manifest.d_max)
            )
    return [float(np.mean(v)) for v in per_input]


# ---------------------------------------------------------------------------
# Specs


@dataclass
class AblationSpec:
    """Named loss-config overrides, one trained model per entry."""

    variants: list = field(default_factory=list)  # (name, overrides dict)

    def __post_init__(self):
        names = [name for name, _ in self.variants]
        if len(set(names)) != len(names):
            raise ConfigurationError("ablation variant names must be unique")

    @classmethod
    def table3(cls):
        return cls(
            variants=[
                ("Supervised", {"gan_kind": GAN_WGAN_GP, "num_scales": 5, "mode": MODE_SUPERVISED}),
                ("Semi", {"gan_kind": GAN_WGAN_GP, "num_scales": 5, "mode": MODE_SEMI}),
                ("Monoscale", {"gan_kind": GAN_WGAN_GP, "num_scales": 1, "mode": MODE_SUPERVISED}),
                ("JS-GAN", {"gan_kind": GAN_JS, "num_scales": 5, "mode": MODE_SUPERVISED}),
            ]
        )

    @classmethod
    def table5(cls):
        return cls(
            variants=[
                ("theta1=0", {"theta1": 0.0}),
                ("theta2=0", {"theta2": 0.0}),
                ("theta3=0", {"theta3": 0.0}),
                ("alpha=0", {"alpha": 0.0}),
                ("beta=1", {"beta": 1.0}),
                ("Baseline", {}),
            ]
        )

    @classmethod
    def full(cls):
        return cls(variants=cls.table3().variants + cls.table5().variants)


@dataclass
class SensitivitySpec:
    """One-knob-at-a-time grids, all else fixed."""

    grids: dict = field(
        default_factory=lambda: {
            "alpha": [0.5, 0.75, 1.0, 1.25, 1.5],
            "scales": [1, 2, 3, 4, 5],
            "width": [6, 9, 12, 15, 18],
            "momentum": [0.1, 0.3, 0.5, 0.7, 0.9],
        }
    )
    repeats: int = 1

    def __post_init__(self):
        if not self.grids or any(len(v) == 0 for v in self.grids.values()):
            raise ConfigurationError("sensitivity grids must be non-empty")
        if self.repeats < 1:
            raise ConfigurationError("repeats must be >= 1")


def _apply_knob(knob, value, net_cfg, loss_cfg, train_cfg):
    if knob == "alpha":
        return net_cfg, replace(loss_cfg, alpha=value), train_cfg
    if knob == "scales":
        return net_cfg, replace(loss_cfg, num_scales=int(value)), train_cfg
    if knob == "width":
        return replace(net_cfg, lg=int(value), ld=int(value)), loss_cfg, train_cfg
    if knob == "momentum":
        return net_cfg, loss_cfg, replace(train_cfg, adam_momentum=value)
    raise ConfigurationError(f"unknown sensitivity knob {knob!r}")


def _train_once(manifest, net_cfg, loss_cfg, train_cfg, run_dir):
    trainer = Trainer(manifest, net_cfg, loss_cfg, train_cfg, run_dir)
    record = trainer.fit()
    return record.final_test_mae


def _median_over_repeats(manifest, net_cfg, loss_cfg, train_cfg, run_root, repeats):
    values = []
    for rep in range(repeats):
        cfg = replace(train_cfg, seed=train_cfg.seed + rep)
        run_dir = os.path.join(run_root, f"rep{rep}")
        values.append(_train_once(manifest, net_cfg, loss_cfg, cfg, run_dir))
    return float(np.median(values)), values


# ---------------------------------------------------------------------------
# Harnesses


def run_ablation(spec, manifest, net_cfg, loss_cfg, train_cfg, out_dir, repeats=1):
    """Train every variant under identical seeds/data; emit table + bar plot.

    Returns the report rows; a variant that aborts is recorded with a null
    MAE and the report is flagged incomplete.
    """
    os.makedirs(out_dir, exist_ok=True)
    inputs = input_mae(manifest, net_cfg)
    rows = [
        {"name": f"input{k + 1}", "mae": v, "kind": "input"}
        for k, v in enumerate(inputs)
    ]
    incomplete = False
    for name, overrides in spec.variants:
        loss_v = replace(loss_cfg, **overrides)
        train_v = replace(train_cfg, mode=loss_v.mode)
        run_root = os.path.join(out_dir, name.replace("=", "_"))
        try:
            value, reps = _median_over_repeats(
                manifest, net_cfg, loss_v, train_v, run_root, repeats
            )
            rows.append({"name": name, "mae": value, "kind": "variant", "repeats": reps})
        except Exception as exc:  # noqa: BLE001 - report must survive one bad variant
            incomplete = True
            rows.append({"name": name, "mae": None, "kind": "variant", "error": str(exc)})

    csv_path = os.path.join(out_dir, "ablation.csv")
    with open(csv_path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["name", "mae_px", "kind"])
        for row in rows:
            writer.writerow([row["name"], "" if row["mae"] is None else f"{row['mae']:.6f}", row["kind"]])

    plotted = [(r["name"], r["mae"]) for r in rows if r["mae"] is not None]
    if plotted:
        fig, ax = plt.subplots(figsize=(7, 3.5))
        ax.bar([n for n, _ in plotted], [v for _, v in plotted], color="#4878d0")
        ax.set_ylabel("test MAE [px]")
        ax.tick_params(axis="x", rotation=30)
        fig.tight_layout()
        fig.savefig(os.path.join(out_dir, "ablation.png"), dpi=120)
        plt.close(fig)

    reference = {**REFERENCE_INPUT_MAE, **REFERENCE_VARIANT_MAE, **REFERENCE_SINGLE_KNOB_MAE}
    print("ablation results (desk scale)  |  published full-scale reference")
    for row in rows:
        ref = reference.get(row["name"], reference.get(f"input{row['name'][-1:]}"))
        desk = "aborted" if row["mae"] is None else f"{row['mae']:.3f} px"
        ref_s = f"{ref:.2f} px" if ref is not None else "-"
        print(f"  {row['name']:<12} {desk:>12}  |  {ref_s}")
    if incomplete:
        print("  WARNING: report incomplete; at least one variant aborted")

    with open(os.path.join(out_dir, "ablation.json"), "w", encoding="utf-8") as f:
        json.dump({"rows": rows, "incomplete": incomplete}, f, indent=2, sort_keys=True)
    return rows


def run_sensitivity(spec, manifest, net_cfg, loss_cfg, train_cfg, out_dir):
    """Vary one knob per grid, train, and emit per-point CSVs plus a curve."""
    os.makedirs(out_dir, exist_ok=True)
    curves = {}
    for knob, values in spec.grids.items():
        grid_dir = os.path.join(out_dir, knob)
        os.makedirs(grid_dir, exist_ok=True)
        curve = []
        for value in values:
            net_v, loss_v, train_v = _apply_knob(knob, value, net_cfg, loss_cfg, train_cfg)
            run_root = os.path.join(grid_dir, f"runs_{value}")
            result, reps = _median_over_repeats(
                manifest, net_v, loss_v, train_v, run_root, spec.repeats
            )
            curve.append((value, result))
            with open(
                os.path.join(grid_dir, f"{value}.csv"), "w", newline="", encoding="utf-8"
            ) as f:
                writer = csv.writer(f)
                writer.writerow([knob, "mae_px", "repeats"])
                writer.writerow([value, f"{result:.6f}", len(reps)])
        curves[knob] = curve

        with open(os.path.join(grid_dir, "curve.csv"), "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow([knob, "mae_px"])
            for value, result in curve:
                writer.writerow([value, f"{result:.6f}"])

        fig, ax = plt.subplots(figsize=(5, 3.5))
        ax.plot([v for v, _ in curve], [m for _, m in curve], marker="o")
        ax.set_xlabel(knob)
        ax.set_ylabel("test MAE [px]")
        fig.tight_layout()
        fig.savefig(os.path.join(grid_dir, "curve.png"), dpi=120)
        plt.close(fig)

        print(f"sensitivity [{knob}]: " + ", ".join(f"{v}={m:.3f}px" for v, m in curve))
    return curves


def emit_error_map(pred_px, gt_px, mask, path, ceiling=8.0):
    """Grayscale error image: brightness proportional to |pred-gt| in pixels,
    clipped at ``ceiling``; invalid pixels are black."""
    pred = np.asarray(pred_px, dtype=np.float64)
    gt = np.asarray(gt_px, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if pred.shape != gt.shape or pred.shape != mask.shape:
        raise ConfigurationError("emit_error_map: shape mismatch")
    if ceiling <= 0:
        raise ConfigurationError("ceiling must be > 0")
    err = np.clip(np.abs(pred - gt) / ceiling, 0.0, 1.0) * 255.0
    err[~mask] = 0.0
    dataio.write_png_gray(path, np.round(err))
    return path
