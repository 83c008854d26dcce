"""Experiment configuration: one JSON file drives every command.

Every field defaults to the reference ablation settings (batch 4, 480x640,
two disparity inputs plus intensity and gradient, 12-channel first convs,
theta = (395, 5, 1), alpha 1, beta 650).  Unknown keys are rejected so a
typo cannot silently fall back to a default.
"""

import dataclasses
import json
import shutil

from .core import LossConfig, NetConfig
from .errors import ConfigurationError
from .trainer import TrainConfig


@dataclasses.dataclass
class ExperimentConfig:
    run_name: str
    data_dir: str
    net: NetConfig
    loss: LossConfig
    train: TrainConfig
    source_path: str = None  # config file this was parsed from, for echoing

    def with_mode(self, mode):
        return dataclasses.replace(
            self,
            loss=dataclasses.replace(self.loss, mode=mode),
            train=dataclasses.replace(self.train, mode=mode),
        )


def _build_section(cls, payload, section):
    valid = {f.name for f in dataclasses.fields(cls)}
    unknown = set(payload) - valid
    if unknown:
        raise ConfigurationError(
            f"unknown key(s) in '{section}' section: {sorted(unknown)}"
        )
    try:
        return cls(**payload)
    except TypeError as exc:
        raise ConfigurationError(f"bad '{section}' section: {exc}") from None


def parse_config(path):
    try:
        with open(path, "r", encoding="utf-8") as f:
            payload = json.load(f)
    except FileNotFoundError:
        raise ConfigurationError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: invalid JSON: {exc}") from None

    known_top = {"run_name", "data_dir", "net", "loss", "train"}
    unknown = set(payload) - known_top
    if unknown:
        raise ConfigurationError(f"unknown top-level key(s): {sorted(unknown)}")
    for key in ("run_name", "data_dir"):
        if key not in payload:
            raise ConfigurationError(f"config missing required key '{key}'")

    net = _build_section(NetConfig, payload.get("net", {}), "net")
    loss = _build_section(LossConfig, payload.get("loss", {}), "loss")
    train = _build_section(TrainConfig, payload.get("train", {}), "train")
    if loss.mode != train.mode:
        raise ConfigurationError(
            f"loss.mode {loss.mode!r} != train.mode {train.mode!r}; "
            "set both or pass --mode"
        )
    return ExperimentConfig(
        run_name=payload["run_name"],
        data_dir=payload["data_dir"],
        net=net,
        loss=loss,
        train=train,
        source_path=path,
    )


def echo_config(cfg, run_dir):
    """Copy the source config file byte-for-byte into the run directory."""
    if cfg.source_path:
        shutil.copyfile(cfg.source_path, f"{run_dir}/config_source.json")


def default_config_dict(run_name="experiment", data_dir="data"):
    """A complete config file payload with every default spelled out."""
    return {
        "run_name": run_name,
        "data_dir": data_dir,
        "net": dataclasses.asdict(NetConfig()),
        "loss": dataclasses.asdict(LossConfig()),
        "train": dataclasses.asdict(TrainConfig()),
    }
