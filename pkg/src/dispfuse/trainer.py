"""Alternating adversarial optimization with checkpointing.

Each iteration takes one optimizer step on the discriminator, then one on
the refiner, with the other network's parameters untouched.  All stochastic
draws (shuffles, flips, pool picks, interpolation epsilons) come from
streams derived from (seed, purpose, step/epoch), so a run can be resumed
from any checkpoint and reproduce the uninterrupted run exactly; torch's
RNG state (dropout) is carried inside the checkpoint.

Setting the environment variable ``DISPFUSE_DETERMINISTIC=1`` forces
deterministic kernels and drops wall-clock timings from the on-disk record
so reruns are byte-identical.
"""

import json
import math
import os
import time
import zlib
from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from . import dataio, losses
from .core import GAN_WGAN_GP, MODE_SEMI, MODE_SUPERVISED, MODES
from .discriminator import build_discriminator
from .errors import (
    CheckpointMismatch,
    ConfigurationError,
    TrainingDiverged,
)
from .refiner import build_refiner

RECORD_NAME = "record.jsonl"
CONFIG_ECHO_NAME = "config.json"
CKPT_DIR = "ckpt"


def deterministic_mode():
    return os.environ.get("DISPFUSE_DETERMINISTIC", "") == "1"


def _tag_id(tag):
    return zlib.crc32(tag.encode("ascii"))


def derived_rng(seed, tag, *indices):
    """Stateless per-purpose RNG stream; resume-safe by construction."""
    return np.random.default_rng(
        np.random.SeedSequence([seed & 0xFFFFFFFF, _tag_id(tag), *indices])
    )


def derived_seed(seed, tag, *indices):
    return int(derived_rng(seed, tag, *indices).integers(0, 2**63 - 1))


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    lr_start: float = 0.005
    lr_end: float = 0.0001
    adam_momentum: float = 0.5
    adam_beta2: float = 0.999
    seed: int = 0
    mode: str = MODE_SUPERVISED
    checkpoint_every: int = 0  # steps; 0 = final checkpoint only
    augment: bool = True
    early_stop_mae: float = None  # stop once test MAE (px) reaches this

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigurationError(f"epochs must be >= 0, got {self.epochs}")
        if not self.lr_start >= self.lr_end > 0:
            raise ConfigurationError(
                f"need lr_start >= lr_end > 0, got {self.lr_start}, {self.lr_end}"
            )
        if not 0 < self.adam_momentum < 1:
            raise ConfigurationError(
                f"adam_momentum must be in (0,1), got {self.adam_momentum}"
            )
        if self.mode not in MODES:
            raise ConfigurationError(f"unknown mode {self.mode!r}")
        if self.checkpoint_every < 0:
            raise ConfigurationError("checkpoint_every must be >= 0")


def lr_at(step, total_steps, cfg):
    """Linear interpolation from lr_start to lr_end over the whole run."""
    if not 0 <= step <= max(total_steps, 0):
        raise ConfigurationError(f"step {step} outside [0, {total_steps}]")
    if total_steps == 0:
        return cfg.lr_start
    frac = step / total_steps
    return cfg.lr_start + (cfg.lr_end - cfg.lr_start) * frac


@dataclass
class RunRecord:
    """Append-only run log, serializable as JSONL."""

    entries: list = field(default_factory=list)

    def add_step(self, step, breakdown, lr, wall=None):
        entry = {"kind": "step", "step": step, "lr": lr, "losses": breakdown.as_dict()}
        if wall is not None:
            entry["wall"] = wall
        self.entries.append(entry)

    def add_epoch(self, epoch, test_mae):
        self.entries.append({"kind": "epoch", "epoch": epoch, "test_mae": test_mae})

    def add_checkpoint(self, path):
        self.entries.append({"kind": "checkpoint", "path": path})

    @property
    def step_entries(self):
        return [e for e in self.entries if e["kind"] == "step"]

    @property
    def epoch_entries(self):
        return [e for e in self.entries if e["kind"] == "epoch"]

    @property
    def checkpoint_paths(self):
        return [e["path"] for e in self.entries if e["kind"] == "checkpoint"]

    @property
    def final_test_mae(self):
        epochs = self.epoch_entries
        return epochs[-1]["test_mae"] if epochs else None

    def write_jsonl(self, path):
        with open(path, "w", encoding="utf-8") as f:
            for entry in self.entries:
                f.write(json.dumps(entry, sort_keys=True))
                f.write("\n")


# ---------------------------------------------------------------------------
# Single optimization steps


def _set_lr(optimizer, lr):
    for group in optimizer.param_groups:
        group["lr"] = lr


def _adversarial_d_terms(disc, cond_fake, fake, cond_real, real, loss_cfg, rng):
    """Discriminator-side GAN losses for one (real, fake) pairing."""
    if loss_cfg.gan_kind == GAN_WGAN_GP:
        d_losses, _, penalties = losses.wgan_gp_terms(
            disc,
            cond_fake,
            real,
            fake,
            loss_cfg.lambda_gp,
            rng,
            real_condition=None if cond_real is cond_fake else cond_real,
        )
        return d_losses, sum(float(p.detach()) for p in penalties)
    real_scores = disc(cond_real, real)
    fake_scores = disc(cond_fake, fake)
    d_losses, _ = losses.js_gan_terms(real_scores, fake_scores)
    return d_losses, 0.0


def _refiner_gan(disc, cond, fake, loss_cfg):
    return losses.refiner_gan_terms(disc(cond, fake), loss_cfg.gan_kind)


def _floats(values):
    return [float(v.detach()) if torch.is_tensor(v) else float(v) for v in values]


def _check_finite(breakdown):
    payload = breakdown.as_dict()
    flat = []
    for v in payload.values():
        flat.extend(v if isinstance(v, list) else [v])
    if not all(math.isfinite(x) for x in flat):
        raise TrainingDiverged(
            f"non-finite loss encountered: {json.dumps(payload)}", breakdown=payload
        )
    return breakdown


def train_step_supervised(refiner, disc, opt_r, opt_d, batch, loss_cfg, lr, rng):
    """One D step then one R step on a labeled batch; returns the breakdown."""
    if not batch.labeled:
        raise ConfigurationError("supervised step requires a labeled batch")
    _set_lr(opt_r, lr)
    _set_lr(opt_d, lr)
    refiner.train(True)
    disc.train(True)
    stack, gt, mask = batch.inputs, batch.gt, batch.mask

    use_gan = loss_cfg.theta3 > 0
    d_floats, gp_float = [], 0.0
    if use_gan:
        fake = refiner(stack).detach()
        d_losses, gp_float = _adversarial_d_terms(
            disc, stack, fake, stack, gt, loss_cfg, rng
        )
        d_total = losses.discriminator_objective_supervised(d_losses, loss_cfg)
        opt_d.zero_grad(set_to_none=True)
        d_total.backward()
        opt_d.step()
        d_floats = _floats(d_losses)

    fake = refiner(stack)
    l1 = losses.weighted_l1(fake, gt, batch.gradient, loss_cfg.alpha, mask)
    smooth = losses.smoothness(fake, batch.intensity, loss_cfg.beta)
    r_gan = _refiner_gan(disc, stack, fake, loss_cfg) if use_gan else []
    r_total = losses.refiner_objective_supervised(l1, smooth, r_gan, loss_cfg)
    opt_r.zero_grad(set_to_none=True)
    r_total.backward()
    opt_r.step()
    disc.zero_grad(set_to_none=True)  # discard grads that leaked during R backward

    breakdown = losses.total_supervised(
        float(l1.detach()), float(smooth.detach()), _floats(r_gan), d_floats, loss_cfg, gp_float
    )
    return _check_finite(breakdown)


def train_step_semi(
    refiner, disc, opt_r, opt_d, labeled_batch, unlabeled_batch, pool_batch, loss_cfg, lr, rng
):
    """Semi-supervised step: labeled pairs as supervised, plus refined
    unlabeled disparities scored against pool ground truth."""
    if not labeled_batch.labeled:
        raise ConfigurationError("semi step requires a labeled batch")
    if unlabeled_batch is None or pool_batch is None:
        raise ConfigurationError("semi step requires an unlabeled batch and pool draw")
    _set_lr(opt_r, lr)
    _set_lr(opt_d, lr)
    refiner.train(True)
    disc.train(True)
    stack_l, gt_l, mask_l = labeled_batch.inputs, labeled_batch.gt, labeled_batch.mask
    stack_u = unlabeled_batch.inputs

    use_gan = loss_cfg.theta3 > 0
    d_l_floats, d_u_floats, gp_float = [], [], 0.0
    if use_gan:
        rng_l = np.random.default_rng(rng.integers(0, 2**32))
        rng_u = np.random.default_rng(rng.integers(0, 2**32))
        fake_l = refiner(stack_l).detach()
        fake_u = refiner(stack_u).detach()
        d_l, gp_l = _adversarial_d_terms(
            disc, stack_l, fake_l, stack_l, gt_l, loss_cfg, rng_l
        )
        d_u, gp_u = _adversarial_d_terms(
            disc, stack_u, fake_u, pool_batch.inputs, pool_batch.gt, loss_cfg, rng_u
        )
        gp_float = gp_l + gp_u
        d_total = losses.discriminator_objective_semi(d_l, d_u, loss_cfg)
        opt_d.zero_grad(set_to_none=True)
        d_total.backward()
        opt_d.step()
        d_l_floats, d_u_floats = _floats(d_l), _floats(d_u)

    fake_l = refiner(stack_l)
    l1 = losses.weighted_l1(fake_l, gt_l, labeled_batch.gradient, loss_cfg.alpha, mask_l)
    smooth = losses.smoothness(fake_l, labeled_batch.intensity, loss_cfg.beta)
    if use_gan:
        fake_u = refiner(stack_u)
        r_l = _refiner_gan(disc, stack_l, fake_l, loss_cfg)
        r_u = _refiner_gan(disc, stack_u, fake_u, loss_cfg)
    else:
        r_l, r_u = [], []
    r_total = losses.refiner_objective_semi(l1, smooth, r_l, r_u, loss_cfg)
    opt_r.zero_grad(set_to_none=True)
    r_total.backward()
    opt_r.step()
    disc.zero_grad(set_to_none=True)

    breakdown = losses.total_semi(
        float(l1.detach()),
        float(smooth.detach()),
        _floats(r_l),
        d_l_floats,
        _floats(r_u),
        d_u_floats,
        loss_cfg,
        gp_float,
    )
    return _check_finite(breakdown)


# ---------------------------------------------------------------------------
# Checkpoints


def save_checkpoint(path, refiner, disc, opt_r, opt_d, step, epoch, configs):
    payload = {
        "fingerprint_refiner": refiner.fingerprint(),
        "fingerprint_discriminator": disc.fingerprint(),
        "refiner_state": refiner.state_dict(),
        "discriminator_state": disc.state_dict(),
        "opt_r_state": opt_r.state_dict(),
        "opt_d_state": opt_d.state_dict(),
        "step": step,
        "epoch": epoch,
        "torch_rng_state": torch.get_rng_state(),
        "configs": configs,
    }
    torch.save(payload, path)


def load_checkpoint(path, refiner, disc, opt_r=None, opt_d=None, restore_rng=False):
    """Restore states after verifying topology fingerprints."""
    payload = torch.load(path, map_location="cpu", weights_only=False)
    for net, key in ((refiner, "fingerprint_refiner"), (disc, "fingerprint_discriminator")):
        if net is None:
            continue
        if payload[key] != net.fingerprint():
            raise CheckpointMismatch(
                f"{path}: checkpoint fingerprint {payload[key]} != "
                f"network fingerprint {net.fingerprint()}"
            )
    if refiner is not None:
        refiner.load_state_dict(payload["refiner_state"])
    if disc is not None:
        disc.load_state_dict(payload["discriminator_state"])
    if opt_r is not None:
        opt_r.load_state_dict(payload["opt_r_state"])
    if opt_d is not None:
        opt_d.load_state_dict(payload["opt_d_state"])
    if restore_rng:
        torch.set_rng_state(payload["torch_rng_state"])
    return payload


# ---------------------------------------------------------------------------
# The training loop


def _unlabeled_ids_for_step(unlabeled_ids, batch, step, seed, perm_cache):
    """Cycle the unlabeled set independently, reshuffling per pass."""
    n = len(unlabeled_ids)
    ids = []
    for j in range(batch):
        g = step * batch + j
        k, idx = divmod(g, n)
        if k not in perm_cache:
            perm_cache[k] = derived_rng(seed, "unlabeled_order", k).permutation(n)
        ids.append(unlabeled_ids[int(perm_cache[k][idx])])
    return ids


class Trainer:
    """Owns the networks, optimizers and run directory for one training run."""

    def __init__(self, manifest, net_cfg, loss_cfg, train_cfg, run_dir):
        if loss_cfg.mode != train_cfg.mode:
            raise ConfigurationError(
                f"loss mode {loss_cfg.mode!r} != train mode {train_cfg.mode!r}"
            )
        self.manifest = manifest
        self.net_cfg = net_cfg
        self.loss_cfg = loss_cfg
        self.train_cfg = train_cfg
        self.run_dir = run_dir
        self.record = RunRecord()
        self.refiner = None
        self.discriminator = None
        self.opt_r = None
        self.opt_d = None

        labeled = list(manifest.labeled_ids)
        if train_cfg.epochs > 0 and len(labeled) < net_cfg.batch:
            raise ConfigurationError(
                f"{len(labeled)} labeled samples < batch size {net_cfg.batch}"
            )
        if train_cfg.mode == MODE_SEMI and not manifest.unlabeled_ids:
            raise ConfigurationError("semi mode requires unlabeled samples")

    # -- setup ------------------------------------------------------------

    def _build(self):
        seed = self.train_cfg.seed
        torch.manual_seed(derived_seed(seed, "torch_global"))
        self.refiner = build_refiner(self.net_cfg, derived_seed(seed, "init_refiner"))
        self.discriminator = build_discriminator(
            self.net_cfg,
            self.loss_cfg.gan_kind,
            derived_seed(seed, "init_disc"),
            num_scales=self.loss_cfg.num_scales,
        )
        betas = (self.train_cfg.adam_momentum, self.train_cfg.adam_beta2)
        self.opt_r = torch.optim.Adam(
            self.refiner.parameters(), lr=self.train_cfg.lr_start, betas=betas
        )
        self.opt_d = torch.optim.Adam(
            self.discriminator.parameters(), lr=self.train_cfg.lr_start, betas=betas
        )

    def _echo_config(self):
        payload = {
            "net": asdict(self.net_cfg),
            "loss": asdict(self.loss_cfg),
            "train": asdict(self.train_cfg),
            "manifest_root": self.manifest.root,
        }
        with open(os.path.join(self.run_dir, CONFIG_ECHO_NAME), "w", encoding="utf-8") as f:
            json.dump(payload, f, indent=2, sort_keys=True)
            f.write("\n")

    def _checkpoint(self, step, steps_per_epoch):
        # "epoch" in a checkpoint counts fully completed epochs at that step
        epoch = step // steps_per_epoch if steps_per_epoch else 0
        path = os.path.join(self.run_dir, CKPT_DIR, f"step_{step}")
        save_checkpoint(
            path,
            self.refiner,
            self.discriminator,
            self.opt_r,
            self.opt_d,
            step,
            epoch,
            {
                "net": asdict(self.net_cfg),
                "loss": asdict(self.loss_cfg),
                "train": asdict(self.train_cfg),
            },
        )
        self.record.add_checkpoint(path)
        return path

    # -- evaluation --------------------------------------------------------

    def evaluate(self, ids=None):
        """Mean test MAE in pixels (None when there is nothing to evaluate)."""
        from .evalbench import mae  # deferred: evalbench imports this module

        ids = list(self.manifest.test_ids if ids is None else ids)
        if not ids:
            return None
        self.refiner.train(False)
        values = []
        b = self.net_cfg.batch
        with torch.no_grad():
            for lo in range(0, len(ids), b):
                chunk = ids[lo : lo + b]
                batch = dataio.load_batch(
                    self.manifest, chunk, self.net_cfg, augment=False, labeled=True
                )
                pred = self.refiner(batch.inputs)
                for i in range(len(chunk)):
                    values.append(
                        mae(
                            pred[i, 0].numpy(),
                            batch.gt[i, 0].numpy(),
                            batch.mask[i, 0].numpy(),
                            self.manifest.d_max,
                        )
                    )
        return float(np.mean(values))

    # -- main loop ----------------------------------------------------------

    def fit(self, resume=None):
        cfg = self.train_cfg
        if deterministic_mode():
            torch.use_deterministic_algorithms(True)
        os.makedirs(os.path.join(self.run_dir, CKPT_DIR), exist_ok=True)
        self._echo_config()
        self._build()

        labeled = list(self.manifest.labeled_ids)
        unlabeled = list(self.manifest.unlabeled_ids)
        steps_per_epoch = len(labeled) // self.net_cfg.batch if labeled else 0
        total_steps = cfg.epochs * steps_per_epoch

        start_step, start_epoch = 0, 0
        if resume is not None:
            payload = load_checkpoint(
                resume, self.refiner, self.discriminator, self.opt_r, self.opt_d,
                restore_rng=True,
            )
            start_step, start_epoch = payload["step"], payload["epoch"]

        if resume is None:
            self.record.add_epoch(0, self.evaluate())

        step = start_step
        last_ckpt_step = None
        perm_cache = {}
        timing = not deterministic_mode()
        for epoch in range(start_epoch + 1, cfg.epochs + 1):
            if steps_per_epoch == 0:
                break
            order = derived_rng(cfg.seed, "shuffle", epoch).permutation(len(labeled))
            first_index = step - (epoch - 1) * steps_per_epoch  # mid-epoch resume
            for bi in range(first_index, steps_per_epoch):
                ids = [labeled[int(j)] for j in order[bi * self.net_cfg.batch : (bi + 1) * self.net_cfg.batch]]
                lr = lr_at(step, total_steps, cfg)
                t0 = time.perf_counter()
                batch = dataio.load_batch(
                    self.manifest,
                    ids,
                    self.net_cfg,
                    augment=cfg.augment,
                    rng=derived_rng(cfg.seed, "flip", step),
                    labeled=True,
                )
                gp_rng = derived_rng(cfg.seed, "gp", step)
                if cfg.mode == MODE_SEMI:
                    u_ids = _unlabeled_ids_for_step(
                        unlabeled, self.net_cfg.batch, step, cfg.seed, perm_cache
                    )
                    u_batch = dataio.load_batch(
                        self.manifest,
                        u_ids,
                        self.net_cfg,
                        augment=cfg.augment,
                        rng=derived_rng(cfg.seed, "flip_unlabeled", step),
                        labeled=False,
                    )
                    pool = dataio.sample_real_pool(
                        self.manifest,
                        self.net_cfg,
                        derived_rng(cfg.seed, "pool", step),
                        self.net_cfg.batch,
                    )
                    breakdown = train_step_semi(
                        self.refiner,
                        self.discriminator,
                        self.opt_r,
                        self.opt_d,
                        batch,
                        u_batch,
                        pool,
                        self.loss_cfg,
                        lr,
                        gp_rng,
                    )
                else:
                    breakdown = train_step_supervised(
                        self.refiner,
                        self.discriminator,
                        self.opt_r,
                        self.opt_d,
                        batch,
                        self.loss_cfg,
                        lr,
                        gp_rng,
                    )
                step += 1
                self.record.add_step(
                    step,
                    breakdown,
                    lr,
                    wall=(time.perf_counter() - t0) if timing else None,
                )
                if cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
                    self._checkpoint(step, steps_per_epoch)
                    last_ckpt_step = step
            test_mae = self.evaluate()
            self.record.add_epoch(epoch, test_mae)
            if (
                cfg.early_stop_mae is not None
                and test_mae is not None
                and test_mae <= cfg.early_stop_mae
            ):
                break

        if step != last_ckpt_step:
            self._checkpoint(step, steps_per_epoch)
        self.record.write_jsonl(os.path.join(self.run_dir, RECORD_NAME))
        return self.record


def fit(manifest, net_cfg, loss_cfg, train_cfg, run_dir, resume=None):
    """Convenience wrapper around :class:`Trainer`; returns the RunRecord."""
    return Trainer(manifest, net_cfg, loss_cfg, train_cfg, run_dir).fit(resume=resume)
