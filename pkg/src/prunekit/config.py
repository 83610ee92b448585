"""Experiment configuration: schema, parsing, validation, serialization.

Configs are JSON documents. Every key is validated against the schema below;
unknown keys are rejected with the path to the offending key, and
parse -> serialize -> parse is an identity.

Top-level keys (defaults in parentheses):
  model             {"input_shape": [...], "layers": [layer specs]}
  data              {"source": {...}, "normalization" ("none"),
                     "train_fraction" (0.8), "split_seed" (0)}
  pipeline          "dense" | "one_shot_imp" | "iterative_imp" | "bimp" | "gmp"
  seed              int (0)
  batch_size        int (32)
  epochs            total budget in epochs (10)
  schedule          {"kind" ("linear"), "initial_lr" (0.1), "warmup_frac" (0.0),
                     "milestones" ([]), "decay_factors" ([])}
  retrain           {"scheme" ("llr"), "epochs" (1), "cycles" (1)}
  criterion         selection criterion; defaults to "global", except "gmp"
                    runs default to "uniform_plus"
  sparsity          {"target" (0.9)}
  optimizer         {"momentum" (0.9), "weight_decay" (0.0), "mask_mode" ("hard")}
  eval_every_epochs int (1)
  t0_epochs         initial training budget, bimp only
  gmp               {"start_epoch" (0), "end_epoch" (epochs), "pruning_steps" (20),
                     "initial_sparsity" (0.0), "cyclic_lr" (false)}

Layer specs: {"kind": "dense", "units": n, "bias": true, "init_scale": 1.0},
{"kind": "conv2d", "channels": n, "kernel": k or [kh, kw], "stride": 1,
 "padding": 0, "bias": true, "init_scale": 1.0}, {"kind": "relu"},
{"kind": "flatten"}. Input sizes (dense n_in, conv c_in) are inferred by
shape propagation; init_scale multiplies the layer's initial weights.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

from .data import CsvSource, DatasetSpec, IdxSource, SplitSpec, SyntheticSource
from .nn import SgdConfig
from .pruning import CRITERIA
from .schedules import BASE_KINDS, SCHEMES

PIPELINES = ("dense", "one_shot_imp", "iterative_imp", "bimp", "gmp")


class ConfigError(ValueError):
    """Invalid configuration; message names the offending key path."""


@dataclass
class ModelConfig:
    input_shape: tuple[int, ...]
    layers: tuple[dict, ...]


@dataclass
class ScheduleConfig:
    kind: str = "linear"
    initial_lr: float = 0.1
    warmup_frac: float = 0.0
    milestones: tuple[float, ...] = ()
    decay_factors: tuple[float, ...] = ()


@dataclass
class RetrainConfig:
    scheme: str = "llr"
    epochs: int = 1
    cycles: int = 1


@dataclass
class GmpConfig:
    start_epoch: int = 0
    end_epoch: int | None = None
    pruning_steps: int = 20
    initial_sparsity: float = 0.0
    cyclic_lr: bool = False


@dataclass
class ExperimentConfig:
    model: ModelConfig
    data: DatasetSpec
    pipeline: str
    seed: int = 0
    batch_size: int = 32
    epochs: int = 10
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    retrain: RetrainConfig = field(default_factory=RetrainConfig)
    criterion: str = "global"
    sparsity_target: float = 0.9
    optimizer: SgdConfig = field(default_factory=SgdConfig)
    eval_every_epochs: int = 1
    t0_epochs: int | None = None
    gmp: GmpConfig = field(default_factory=GmpConfig)


class _Section:
    """Dict wrapper that tracks its key path and rejects unknown keys."""

    _MISSING = object()

    def __init__(self, raw, path):
        if not isinstance(raw, dict):
            raise ConfigError(f"{path or '<root>'}: expected an object, got {type(raw).__name__}")
        self.raw = dict(raw)
        self.path = path

    def _abs(self, key):
        return f"{self.path}.{key}" if self.path else key

    def take(self, key, default=_MISSING, kind=None):
        if key not in self.raw:
            if default is self._MISSING:
                raise ConfigError(f"{self._abs(key)}: required key missing")
            return default
        value = self.raw.pop(key)
        if kind is not None:
            value = self._coerce(key, value, kind)
        return value

    def _coerce(self, key, value, kind):
        if kind is float:
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"{self._abs(key)}: expected a number, got {value!r}")
            return float(value)
        if kind is int:
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(f"{self._abs(key)}: expected an integer, got {value!r}")
            return value
        if kind is bool:
            if not isinstance(value, bool):
                raise ConfigError(f"{self._abs(key)}: expected a boolean, got {value!r}")
            return value
        if kind is str:
            if not isinstance(value, str):
                raise ConfigError(f"{self._abs(key)}: expected a string, got {value!r}")
            return value
        if kind is list:
            if not isinstance(value, list):
                raise ConfigError(f"{self._abs(key)}: expected a list, got {value!r}")
            return value
        raise AssertionError(kind)

    def section(self, key, default=_MISSING):
        value = self.take(key, default)
        if value is default and default is not self._MISSING:
            return None
        return _Section(value, self._abs(key))

    def finish(self):
        if self.raw:
            extra = sorted(self.raw)
            raise ConfigError(f"{self._abs(extra[0])}: unknown key")


def _choice(section, key, choices, default=_Section._MISSING):
    value = section.take(key, default, str)
    if value not in choices:
        raise ConfigError(f"{section._abs(key)}: must be one of {choices}, got {value!r}")
    return value


def _parse_layer(raw, path):
    sec = _Section(raw, path)
    kind = _choice(sec, "kind", ("dense", "conv2d", "relu", "flatten"))
    spec = {"kind": kind}
    if kind == "dense":
        spec["units"] = sec.take("units", kind=int)
        spec["bias"] = sec.take("bias", True, bool)
        spec["init_scale"] = sec.take("init_scale", 1.0, float)
    elif kind == "conv2d":
        spec["channels"] = sec.take("channels", kind=int)
        kernel = sec.take("kernel")
        if isinstance(kernel, int):
            kernel = [kernel, kernel]
        if (not isinstance(kernel, list) or len(kernel) != 2
                or not all(isinstance(k, int) and k >= 1 for k in kernel)):
            raise ConfigError(f"{path}.kernel: expected int or [kh, kw], got {kernel!r}")
        spec["kernel"] = kernel
        spec["stride"] = sec.take("stride", 1, int)
        spec["padding"] = sec.take("padding", 0, int)
        spec["bias"] = sec.take("bias", True, bool)
        spec["init_scale"] = sec.take("init_scale", 1.0, float)
    sec.finish()
    return spec


def _parse_model(sec):
    shape = sec.take("input_shape", kind=list)
    if not shape or not all(isinstance(d, int) and d >= 1 for d in shape):
        raise ConfigError(f"{sec.path}.input_shape: expected a list of positive integers")
    layers_raw = sec.take("layers", kind=list)
    if not layers_raw:
        raise ConfigError(f"{sec.path}.layers: at least one layer required")
    layers = tuple(_parse_layer(l, f"{sec.path}.layers[{i}]") for i, l in enumerate(layers_raw))
    sec.finish()
    return ModelConfig(input_shape=tuple(shape), layers=layers)


def _parse_source(sec):
    kind = _choice(sec, "kind", ("blobs", "two_spirals", "idx", "csv"))
    if kind in ("blobs", "two_spirals"):
        src = SyntheticSource(
            kind=kind,
            n_samples=sec.take("n_samples", 1000, int),
            n_classes=sec.take("n_classes", 2, int),
            noise=sec.take("noise", 0.2, float),
            seed=sec.take("seed", 0, int),
        )
    elif kind == "idx":
        src = IdxSource(images_path=sec.take("images", kind=str),
                        labels_path=sec.take("labels", kind=str))
    else:
        src = CsvSource(path=sec.take("path", kind=str),
                        label_column=sec.take("label_column", kind=str))
    sec.finish()
    return src


def _parse_data(sec):
    source = _parse_source(sec.section("source"))
    normalization = _choice(sec, "normalization", ("none", "per_feature_standardize"), "none")
    split = SplitSpec(train_fraction=sec.take("train_fraction", 0.8, float),
                      seed=sec.take("split_seed", 0, int))
    sec.finish()
    try:
        return DatasetSpec(source=source, normalization=normalization, split=split)
    except ValueError as exc:
        raise ConfigError(f"{sec.path}: {exc}") from None


def _parse_schedule(sec):
    if sec is None:
        return ScheduleConfig()
    cfg = ScheduleConfig(
        kind=_choice(sec, "kind", BASE_KINDS, "linear"),
        initial_lr=sec.take("initial_lr", 0.1, float),
        warmup_frac=sec.take("warmup_frac", 0.0, float),
        milestones=tuple(sec.take("milestones", [], list)),
        decay_factors=tuple(sec.take("decay_factors", [], list)),
    )
    sec.finish()
    return cfg


def _parse_retrain(sec):
    if sec is None:
        return RetrainConfig()
    cfg = RetrainConfig(
        scheme=_choice(sec, "scheme", SCHEMES, "llr"),
        epochs=sec.take("epochs", 1, int),
        cycles=sec.take("cycles", 1, int),
    )
    sec.finish()
    if cfg.epochs < 1:
        raise ConfigError(f"{sec.path}.epochs: must be >= 1, got {cfg.epochs}")
    if cfg.cycles < 1:
        raise ConfigError(f"{sec.path}.cycles: must be >= 1, got {cfg.cycles}")
    return cfg


def _parse_optimizer(sec):
    if sec is None:
        return SgdConfig()
    momentum = sec.take("momentum", 0.9, float)
    weight_decay = sec.take("weight_decay", 0.0, float)
    mask_mode = _choice(sec, "mask_mode", ("hard", "soft"), "hard")
    sec.finish()
    try:
        return SgdConfig(momentum=momentum, weight_decay=weight_decay, mask_mode=mask_mode)
    except ValueError as exc:
        raise ConfigError(f"{sec.path}: {exc}") from None


def _parse_gmp(sec):
    if sec is None:
        return GmpConfig()
    end_epoch = sec.take("end_epoch", None)
    if end_epoch is not None and (isinstance(end_epoch, bool) or not isinstance(end_epoch, int)):
        raise ConfigError(f"{sec.path}.end_epoch: expected an integer or null, got {end_epoch!r}")
    cfg = GmpConfig(
        start_epoch=sec.take("start_epoch", 0, int),
        end_epoch=end_epoch,
        pruning_steps=sec.take("pruning_steps", 20, int),
        initial_sparsity=sec.take("initial_sparsity", 0.0, float),
        cyclic_lr=sec.take("cyclic_lr", False, bool),
    )
    sec.finish()
    return cfg


def config_from_dict(raw: dict) -> ExperimentConfig:
    root = _Section(raw, "")
    model = _parse_model(root.section("model"))
    data = _parse_data(root.section("data"))
    pipeline = _choice(root, "pipeline", PIPELINES)
    cfg = ExperimentConfig(
        model=model,
        data=data,
        pipeline=pipeline,
        seed=root.take("seed", 0, int),
        batch_size=root.take("batch_size", 32, int),
        epochs=root.take("epochs", 10, int),
        schedule=_parse_schedule(root.section("schedule", None)),
        retrain=_parse_retrain(root.section("retrain", None)),
        criterion=_choice(root, "criterion", CRITERIA,
                          "uniform_plus" if pipeline == "gmp" else "global"),
        sparsity_target=_parse_sparsity(root.section("sparsity", None)),
        optimizer=_parse_optimizer(root.section("optimizer", None)),
        eval_every_epochs=root.take("eval_every_epochs", 1, int),
        t0_epochs=root.take("t0_epochs", None),
        gmp=_parse_gmp(root.section("gmp", None)),
    )
    root.finish()
    _validate(cfg)
    return cfg


def _parse_sparsity(sec):
    if sec is None:
        return 0.9
    target = sec.take("target", 0.9, float)
    sec.finish()
    return target


def _validate(cfg: ExperimentConfig) -> None:
    if cfg.batch_size < 1:
        raise ConfigError(f"batch_size: must be >= 1, got {cfg.batch_size}")
    if cfg.epochs < 0:
        raise ConfigError(f"epochs: must be >= 0, got {cfg.epochs}")
    if cfg.eval_every_epochs < 1:
        raise ConfigError(f"eval_every_epochs: must be >= 1, got {cfg.eval_every_epochs}")
    prunes = cfg.pipeline in ("one_shot_imp", "iterative_imp", "bimp", "gmp")
    if prunes and not 0.0 <= cfg.sparsity_target < 1.0:
        raise ConfigError(f"sparsity.target: must lie in [0, 1), got {cfg.sparsity_target}")
    if cfg.t0_epochs is not None and (isinstance(cfg.t0_epochs, bool)
                                      or not isinstance(cfg.t0_epochs, int)):
        raise ConfigError(f"t0_epochs: expected an integer, got {cfg.t0_epochs!r}")
    if cfg.pipeline == "one_shot_imp" and cfg.retrain.cycles != 1:
        raise ConfigError(f"retrain.cycles: one_shot_imp uses exactly 1 cycle, got {cfg.retrain.cycles}")
    if cfg.pipeline == "bimp":
        if cfg.t0_epochs is None:
            raise ConfigError("t0_epochs: required for the bimp pipeline")
        if cfg.schedule.kind != "linear":
            raise ConfigError(f"schedule.kind: bimp requires 'linear', got {cfg.schedule.kind!r}")
        if cfg.retrain.scheme not in ("llr", "allr"):
            raise ConfigError(
                f"retrain.scheme: bimp cycles use 'llr' or 'allr', got {cfg.retrain.scheme!r}"
            )
        if not 0 < cfg.t0_epochs < cfg.epochs:
            raise ConfigError(f"t0_epochs: must lie in (0, epochs), got {cfg.t0_epochs}")
        budget = cfg.t0_epochs + cfg.retrain.cycles * cfg.retrain.epochs
        if budget != cfg.epochs:
            raise ConfigError(
                f"epochs: bimp budget mismatch, t0_epochs + cycles * retrain.epochs = "
                f"{budget} but epochs = {cfg.epochs}"
            )
    if cfg.pipeline == "gmp":
        g = cfg.gmp
        end = g.end_epoch if g.end_epoch is not None else cfg.epochs
        if not isinstance(end, int):
            raise ConfigError(f"gmp.end_epoch: expected an integer, got {end!r}")
        if not 0 <= g.start_epoch < end <= cfg.epochs:
            raise ConfigError(
                f"gmp: need 0 <= start_epoch < end_epoch <= epochs, got "
                f"[{g.start_epoch}, {end}] with epochs={cfg.epochs}"
            )
        if g.pruning_steps < 1:
            raise ConfigError(f"gmp.pruning_steps: must be >= 1, got {g.pruning_steps}")
        if not 0.0 <= g.initial_sparsity <= cfg.sparsity_target:
            raise ConfigError(
                f"gmp.initial_sparsity: must lie in [0, target], got {g.initial_sparsity}"
            )
        if cfg.schedule.kind not in ("stepped", "linear"):
            raise ConfigError(
                f"schedule.kind: gmp supports 'stepped' or 'linear', got {cfg.schedule.kind!r}"
            )
        if g.cyclic_lr and cfg.schedule.kind != "linear":
            raise ConfigError("gmp.cyclic_lr: the cyclic schedule is linear-only")


def parse_config(text: str) -> ExperimentConfig:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"not valid JSON: {exc}") from None
    return config_from_dict(raw)


def config_to_dict(cfg: ExperimentConfig) -> dict:
    src = cfg.data.source
    if isinstance(src, SyntheticSource):
        source = {"kind": src.kind, "n_samples": src.n_samples, "n_classes": src.n_classes,
                  "noise": src.noise, "seed": src.seed}
    elif isinstance(src, IdxSource):
        source = {"kind": "idx", "images": src.images_path, "labels": src.labels_path}
    else:
        source = {"kind": "csv", "path": src.path, "label_column": src.label_column}
    return {
        "model": {"input_shape": list(cfg.model.input_shape),
                  "layers": [dict(l) for l in cfg.model.layers]},
        "data": {"source": source, "normalization": cfg.data.normalization,
                 "train_fraction": cfg.data.split.train_fraction,
                 "split_seed": cfg.data.split.seed},
        "pipeline": cfg.pipeline,
        "seed": cfg.seed,
        "batch_size": cfg.batch_size,
        "epochs": cfg.epochs,
        "schedule": {"kind": cfg.schedule.kind, "initial_lr": cfg.schedule.initial_lr,
                     "warmup_frac": cfg.schedule.warmup_frac,
                     "milestones": list(cfg.schedule.milestones),
                     "decay_factors": list(cfg.schedule.decay_factors)},
        "retrain": {"scheme": cfg.retrain.scheme, "epochs": cfg.retrain.epochs,
                    "cycles": cfg.retrain.cycles},
        "criterion": cfg.criterion,
        "sparsity": {"target": cfg.sparsity_target},
        "optimizer": {"momentum": cfg.optimizer.momentum,
                      "weight_decay": cfg.optimizer.weight_decay,
                      "mask_mode": cfg.optimizer.mask_mode},
        "eval_every_epochs": cfg.eval_every_epochs,
        "t0_epochs": cfg.t0_epochs,
        "gmp": {"start_epoch": cfg.gmp.start_epoch, "end_epoch": cfg.gmp.end_epoch,
                "pruning_steps": cfg.gmp.pruning_steps,
                "initial_sparsity": cfg.gmp.initial_sparsity,
                "cyclic_lr": cfg.gmp.cyclic_lr},
    }


def serialize_config(cfg: ExperimentConfig) -> str:
    return json.dumps(config_to_dict(cfg), indent=2, sort_keys=True)


def config_hash(cfg: ExperimentConfig) -> str:
    canonical = json.dumps(config_to_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]
