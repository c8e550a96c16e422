"""Single config file -> validated run configuration.

The file is a YAML tree with five optional sections (stft, model, paths,
datasim, train); every omitted key falls back to the library default, every
unknown key is rejected with its dotted path, and all values are checked
before any command does work.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import yaml

from .audio import StftConfig
from .datasim import CorpusConfig
from .errors import ConfigError
from .losses import LossWeights
from .model import N_STAGES, PRESETS, ModelConfig
from .trainer import TrainConfig


@dataclass(frozen=True)
class RunPaths:
    corpus_dir: str = "data/corpus"
    checkpoint_dir: str = "runs/checkpoints"
    report_dir: str = "runs/reports"


@dataclass(frozen=True)
class RunConfig:
    stft: StftConfig
    model: ModelConfig
    preset: str | None
    paths: RunPaths
    datasim: dict
    train: dict

    def corpus_config(self, out_dir: str | None = None, **overrides) -> CorpusConfig:
        kwargs = dict(self.datasim)
        kwargs.update({k: v for k, v in overrides.items() if v is not None})
        kwargs["out_dir"] = out_dir if out_dir is not None else self.paths.corpus_dir
        kwargs.setdefault("sample_rate", self.stft.sample_rate)
        return CorpusConfig(**kwargs)

    def train_config(self, phase: str) -> TrainConfig:
        kwargs = dict(self.train)
        weights = kwargs.pop("weights", None)
        if weights is not None:
            kwargs["weights"] = LossWeights(**weights)
        return TrainConfig(phase=phase, **kwargs)


def _type_name(value) -> str:
    return type(value).__name__


def _want_map(value, path: str) -> dict:
    if value is None:
        return {}
    if not isinstance(value, dict):
        raise ConfigError(f"{path}: expected a mapping, got {_type_name(value)}")
    return value


def _want_int(value, path: str) -> int:
    # bool passes isinstance(int) checks; reject it explicitly
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{path}: expected an integer, got {value!r}")
    return value


def _want_float(value, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{path}: expected a number, got {value!r}")
    return float(value)


def _want_bool(value, path: str) -> bool:
    if not isinstance(value, bool):
        raise ConfigError(f"{path}: expected true/false, got {value!r}")
    return value


def _want_str(value, path: str) -> str:
    if not isinstance(value, str):
        raise ConfigError(f"{path}: expected a string, got {value!r}")
    return value


def _want_float_list(value, path: str) -> tuple[float, ...]:
    if not isinstance(value, (list, tuple)) or not value:
        raise ConfigError(f"{path}: expected a non-empty list of numbers, got {value!r}")
    return tuple(_want_float(v, f"{path}[{i}]") for i, v in enumerate(value))


def _reject_unknown(section: dict, allowed, path: str):
    for key in section:
        if key not in allowed:
            raise ConfigError(
                f"{path}.{key}: unknown key (allowed: {', '.join(sorted(allowed))})"
            )


_STFT_KEYS = {
    "sample_rate": _want_int,
    "window_len": _want_int,
    "hop": _want_int,
    "fft_len": _want_int,
    "window_kind": _want_str,
}

_PATH_KEYS = ("corpus_dir", "checkpoint_dir", "report_dir")

_DATASIM_KEYS = {
    "seed": _want_int,
    "n_train": _want_int,
    "n_test": _want_int,
    "duration_s": _want_float,
    "sample_rate": _want_int,
    "ir_taps": _want_int,
    "train_snr_db": _want_float_list,
    "test_snr_db": _want_float_list,
}

_TRAIN_KEYS = {
    "seed": _want_int,
    "learning_rate": _want_float,
    "batch_size": _want_int,
    "epochs": _want_int,
    "mag_loss": _want_str,
    "kd_form": _want_str,
    "init_from_bad_student": _want_bool,
}

_WEIGHT_KEYS = {
    "alpha": _want_float,
    "beta": _want_float,
    "kd_eps": _want_float,
}


def _parse_stft(section: dict) -> StftConfig:
    _reject_unknown(section, _STFT_KEYS, "stft")
    kwargs = {k: fn(section[k], f"stft.{k}") for k, fn in _STFT_KEYS.items() if k in section}
    try:
        return StftConfig(**kwargs)
    except Exception as exc:
        raise ConfigError(f"stft: {exc}") from exc


def _parse_model(section: dict, n_freq: int) -> tuple[ModelConfig, str | None]:
    _reject_unknown(section, ("preset", "channels"), "model")
    if "preset" in section and "channels" in section:
        raise ConfigError("model: give either preset or channels, not both")
    if "channels" in section:
        raw = section["channels"]
        if not isinstance(raw, (list, tuple)) or len(raw) != N_STAGES:
            raise ConfigError(
                f"model.channels: expected a list of {N_STAGES} widths, got {raw!r}"
            )
        channels = tuple(_want_int(c, f"model.channels[{i}]") for i, c in enumerate(raw))
        try:
            return ModelConfig(channels=channels, n_freq=n_freq), None
        except Exception as exc:
            raise ConfigError(f"model: {exc}") from exc
    preset = _want_str(section.get("preset", "default"), "model.preset")
    if preset not in PRESETS:
        raise ConfigError(
            f"model.preset: unknown preset {preset!r} (available: {', '.join(sorted(PRESETS))})"
        )
    return ModelConfig.from_preset(preset, n_freq=n_freq), preset


def _parse_paths(section: dict) -> RunPaths:
    _reject_unknown(section, _PATH_KEYS, "paths")
    return RunPaths(**{k: _want_str(section[k], f"paths.{k}") for k in _PATH_KEYS if k in section})


def _parse_datasim(section: dict) -> dict:
    _reject_unknown(section, _DATASIM_KEYS, "datasim")
    return {k: fn(section[k], f"datasim.{k}") for k, fn in _DATASIM_KEYS.items() if k in section}


def _parse_train(section: dict) -> dict:
    allowed = set(_TRAIN_KEYS) | {"weights"}
    _reject_unknown(section, allowed, "train")
    out = {k: fn(section[k], f"train.{k}") for k, fn in _TRAIN_KEYS.items() if k in section}
    if "weights" in section:
        wsec = _want_map(section["weights"], "train.weights")
        _reject_unknown(wsec, _WEIGHT_KEYS, "train.weights")
        out["weights"] = {
            k: fn(wsec[k], f"train.weights.{k}") for k, fn in _WEIGHT_KEYS.items() if k in wsec
        }
    return out


def parse_config(tree: dict) -> RunConfig:
    """Validate an already-parsed config tree and resolve every section."""
    tree = _want_map(tree, "config")
    _reject_unknown(tree, ("stft", "model", "paths", "datasim", "train"), "config")
    stft_cfg = _parse_stft(_want_map(tree.get("stft"), "stft"))
    model_cfg, preset = _parse_model(_want_map(tree.get("model"), "model"), stft_cfg.n_freq)
    paths = _parse_paths(_want_map(tree.get("paths"), "paths"))
    datasim = _parse_datasim(_want_map(tree.get("datasim"), "datasim"))
    train = _parse_train(_want_map(tree.get("train"), "train"))
    cfg = RunConfig(stft=stft_cfg, model=model_cfg, preset=preset,
                    paths=paths, datasim=datasim, train=train)
    # construct both derived configs now so bad values fail at load time
    try:
        cfg.train_config("teacher")
    except ConfigError:
        raise
    except Exception as exc:
        raise ConfigError(f"train: {exc}") from exc
    try:
        cfg.corpus_config(out_dir=".")
    except Exception as exc:
        raise ConfigError(f"datasim: {exc}") from exc
    return cfg


def load_config(path) -> RunConfig:
    """Read and validate a config file; errors carry the file and, for syntax
    problems, the line."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    try:
        tree = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{path}:{mark.line + 1}" if mark is not None else str(path)
        problem = getattr(exc, "problem", None) or str(exc)
        raise ConfigError(f"{where}: config syntax error: {problem}") from exc
    if tree is None:
        tree = {}
    try:
        return parse_config(tree)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
