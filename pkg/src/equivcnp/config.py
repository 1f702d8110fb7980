"""Experiment configuration: strict JSON with named presets.

A config file is one JSON object with the blocks ``model``, ``data``,
``train`` and ``eval``. It may name a ``preset`` whose values fill every key
the file leaves out. Unknown keys and ill-typed values raise
:class:`ConfigError` carrying the line of the offending key.
"""
from __future__ import annotations

import copy
import json
import re

from .data import KERNEL_KINDS, KernelSpec, TaskConfig1D
from .groups import GroupTag
from .model import ImageConfig, RegressionConfig


class ConfigError(ValueError):
    def __init__(self, message, line=None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


REGRESS1D = {
    "model": {"architecture": "regress1d", "group": "T1", "channels": [16, 32, 16, 8],
              "fraction": 5 / 32, "n_mc": 25, "alpha": 1.0, "gamma": 16.0,
              "grid_margin": 0.25, "init_bandwidth": 0.125, "sigma_floor": 1e-4,
              "smooth_output": False, "k_lift": 1},
    "data": {"kind": "gp", "kernel": "rbf", "jitter": 1e-5, "x_range": [-2.0, 2.0],
             "n_context": [3, 50], "n_target": [3, 50]},
    "train": {"epochs": 200, "batches_per_epoch": 256, "batch_size": 16, "lr": 1e-3, "seed": 0},
    "eval": {"n_tasks": 1000, "extrapolation": False, "extrapolation_range": [-4.0, 4.0]},
}

IMAGE2D = {
    "model": {"architecture": "image2d", "group": "RxSO2", "enc_channels": 128,
              "enc_fraction": 1 / 10, "enc_n_mc": 121, "channels": 128, "n_blocks": 4,
              "block_fraction": 1 / 15, "block_n_mc": 81, "alpha": 1.0, "sigma_floor": 1e-4,
              "k_lift": 1},
    "data": {"kind": "digits", "labels": list(range(10)), "fraction_range": [0.01, 0.5],
             "test_scale": [0.15, 0.5], "test_angle_deg": [-90.0, 90.0]},
    "train": {"epochs": 100, "batches_per_epoch": 0, "batch_size": 4, "lr": 5e-4, "seed": 0},
    "eval": {"n_tasks": 1000, "transform": True, "mask_fractions": [0.25, 0.75]},
}


def _merge(base, **blocks):
    out = copy.deepcopy(base)
    for name, upd in blocks.items():
        out[name].update(upd)
    return out


PRESETS = {
    "regress1d": REGRESS1D,
    "regress1d-desk": _merge(REGRESS1D, train={"epochs": 30, "batches_per_epoch": 64}),
    "image2d": IMAGE2D,
    "image2d-desk": _merge(
        IMAGE2D,
        # Small log-polar neighborhoods: with the full-size fractions an RxSO2
        # ball reaches ~2x its center's radius, so full-frame training digits
        # mostly see neighborhoods clipped by the image border.
        model={"enc_channels": 16, "enc_fraction": 1 / 40, "enc_n_mc": 25, "channels": 16,
               "n_blocks": 2, "block_fraction": 1 / 40, "block_n_mc": 16},
        data={"labels": [0, 2, 3, 4, 5, 6, 7, 9]},
        train={"epochs": 20, "batches_per_epoch": 25},
        eval={"n_tasks": 200}),
}

ARCHITECTURES = ("regress1d", "image2d")
GROUP_NAMES = tuple(t.value.lower() for t in GroupTag)

_NUM = (int, float)
# key -> (accepted types, validator or None)
_SCHEMA = {
    "model": {
        "architecture": (str, lambda v: v in ARCHITECTURES),
        "group": (str, lambda v: v.lower() in GROUP_NAMES),
        "channels": ((list, int), None),
        "fraction": (_NUM, lambda v: 0 < v <= 1),
        "n_mc": (int, lambda v: v >= 1),
        "alpha": (_NUM, lambda v: v >= 0),
        "gamma": (_NUM, lambda v: v > 0),
        "grid_margin": (_NUM, lambda v: v >= 0),
        "init_bandwidth": (_NUM, lambda v: v > 0),
        "sigma_floor": (_NUM, lambda v: v > 0),
        "smooth_output": (bool, None),
        "k_lift": (int, lambda v: v >= 1),
        "enc_channels": (int, lambda v: v >= 1),
        "enc_fraction": (_NUM, lambda v: 0 < v <= 1),
        "enc_n_mc": (int, lambda v: v >= 1),
        "n_blocks": (int, lambda v: v >= 0),
        "block_fraction": (_NUM, lambda v: 0 < v <= 1),
        "block_n_mc": (int, lambda v: v >= 1),
    },
    "data": {
        "kind": (str, lambda v: v in ("gp", "digits")),
        "kernel": (str, lambda v: v in KERNEL_KINDS),
        "jitter": (_NUM, lambda v: v > 0),
        "x_range": (list, lambda v: _pair(v) and v[0] < v[1]),
        "n_context": (list, lambda v: _int_pair(v) and 1 <= v[0] <= v[1]),
        "n_target": (list, lambda v: _int_pair(v) and 1 <= v[0] <= v[1]),
        "labels": (list, lambda v: len(v) > 0 and all(type(k) is int and 0 <= k <= 9 for k in v)),
        "fraction_range": (list, lambda v: _pair(v) and 0 <= v[0] <= v[1] <= 1),
        "test_scale": (list, lambda v: _pair(v) and 0 < v[0] <= v[1]),
        "test_angle_deg": (list, lambda v: _pair(v) and v[0] <= v[1]),
    },
    "train": {
        "epochs": (int, lambda v: v >= 0),
        "batches_per_epoch": (int, lambda v: v >= 0),
        "batch_size": (int, lambda v: v >= 1),
        "lr": (_NUM, lambda v: v > 0),
        "seed": (int, lambda v: v >= 0),
    },
    "eval": {
        "n_tasks": (int, lambda v: v >= 1),
        "extrapolation": (bool, None),
        "extrapolation_range": (list, lambda v: _pair(v) and v[0] < v[1]),
        "transform": (bool, None),
        "mask_fractions": (list, lambda v: all(type(f) in _NUM and 0 < f <= 1 for f in v)),
    },
}

_ARCH_ONLY = {
    "regress1d": {"fraction", "n_mc", "gamma", "grid_margin", "init_bandwidth", "smooth_output"},
    "image2d": {"enc_channels", "enc_fraction", "enc_n_mc", "n_blocks", "block_fraction",
                "block_n_mc"},
}


def _pair(v):
    return len(v) == 2 and all(type(x) in _NUM for x in v)


def _int_pair(v):
    return len(v) == 2 and all(type(x) is int for x in v)


def _line_of(text, key, after=0):
    """1-based line of the first ``"key":`` at or after offset ``after``."""
    if text is None:
        return None, after
    m = re.compile(r'"' + re.escape(key) + r'"\s*:').search(text, after)
    if m is None:
        return None, after
    return text.count("\n", 0, m.start()) + 1, m.end()


def _check_type(value, types):
    if isinstance(types, tuple):
        return any(_check_type(value, t) for t in types)
    if types is bool:
        return type(value) is bool
    if types is int:
        return type(value) is int
    if types is float:
        return type(value) in (int, float)
    return isinstance(value, types)


def validate(raw: dict, text: str | None = None) -> dict:
    """Expand the preset, check every key and value, return the full config."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object", 1)
    unknown = set(raw) - {"preset", *_SCHEMA}
    if unknown:
        key = sorted(unknown)[0]
        raise ConfigError(f"unknown top-level key {key!r}", _line_of(text, key)[0])
    preset = raw.get("preset")
    if preset is not None and preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}",
                          _line_of(text, "preset")[0])
    arch = (raw.get("model") or {}).get("architecture")
    if preset is None and arch is None:
        raise ConfigError("config needs a preset or model.architecture", 1)
    base = PRESETS[preset] if preset else PRESETS[arch]
    cfg = copy.deepcopy(base)
    for block, schema in _SCHEMA.items():
        given = raw.get(block, {})
        line, pos = _line_of(text, block)
        if not isinstance(given, dict):
            raise ConfigError(f"block {block!r} must be an object", line)
        for key, value in given.items():
            kline, _ = _line_of(text, key, pos)
            if key not in schema:
                raise ConfigError(f"unknown key {block}.{key}", kline)
            types, ok = schema[key]
            if not _check_type(value, types) or (ok is not None and not ok(value)):
                raise ConfigError(f"invalid value for {block}.{key}: {value!r}", kline)
            cfg[block][key] = value
    if preset is not None:
        cfg["preset"] = preset
    arch = cfg["model"]["architecture"]
    if arch != base["model"]["architecture"]:
        raise ConfigError(f"architecture {arch!r} does not match preset {preset!r}",
                          _line_of(text, "architecture")[0])
    other = next(a for a in ARCHITECTURES if a != arch)
    stray = (_ARCH_ONLY[other] & set(cfg["model"])) - _ARCH_ONLY[arch]
    if stray:
        key = sorted(stray)[0]
        raise ConfigError(f"model.{key} does not apply to architecture {arch!r}",
                          _line_of(text, key)[0])
    _check_channels(cfg, text)
    cfg["model"]["group"] = GroupTag.parse(cfg["model"]["group"]).value
    return cfg


def _check_channels(cfg, text):
    ch = cfg["model"]["channels"]
    line = _line_of(text, "channels")[0]
    if cfg["model"]["architecture"] == "regress1d":
        if not (isinstance(ch, list) and ch and all(type(c) is int and c >= 1 for c in ch)):
            raise ConfigError("regress1d channels must be a nonempty list of positive ints", line)
        if cfg["data"]["kind"] != "gp":
            raise ConfigError("regress1d needs data.kind 'gp'", _line_of(text, "kind")[0])
    else:
        if not (type(ch) is int and ch >= 1):
            raise ConfigError("image2d channels must be a positive int", line)
        if cfg["data"]["kind"] != "digits":
            raise ConfigError("image2d needs data.kind 'digits'", _line_of(text, "kind")[0])


def loads(text: str) -> dict:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc.msg}", exc.lineno) from None
    return validate(raw, text)


def load(path) -> dict:
    with open(path) as fh:
        return loads(fh.read())


def dumps(cfg: dict) -> str:
    return json.dumps(cfg, indent=2, sort_keys=True) + "\n"


def preset(name: str) -> dict:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}")
    return validate({"preset": name})


def with_group(cfg: dict, group: str) -> dict:
    out = copy.deepcopy(cfg)
    out["model"]["group"] = GroupTag.parse(group).value
    return out


# -- conversions ------------------------------------------------------------------
def model_config(cfg: dict):
    m, seed = cfg["model"], cfg["train"]["seed"]
    tag = GroupTag.parse(m["group"]).value
    if m["architecture"] == "regress1d":
        return RegressionConfig(
            tag=tag, channels=tuple(m["channels"]), fraction=float(m["fraction"]),
            n_mc=m["n_mc"], alpha=float(m["alpha"]), gamma=float(m["gamma"]),
            grid_margin=float(m["grid_margin"]), init_bandwidth=float(m["init_bandwidth"]),
            sigma_floor=float(m["sigma_floor"]), smooth_output=m["smooth_output"],
            k_lift=m["k_lift"], seed=seed)
    return ImageConfig(
        tag=tag, enc_channels=m["enc_channels"], enc_fraction=float(m["enc_fraction"]),
        enc_n_mc=m["enc_n_mc"], channels=m["channels"], n_blocks=m["n_blocks"],
        block_fraction=float(m["block_fraction"]), block_n_mc=m["block_n_mc"],
        alpha=float(m["alpha"]), sigma_floor=float(m["sigma_floor"]), k_lift=m["k_lift"],
        seed=seed)


def task_config(cfg: dict) -> TaskConfig1D:
    d = cfg["data"]
    return TaskConfig1D(KernelSpec(d["kernel"], float(d["jitter"])), tuple(d["x_range"]),
                        tuple(d["n_context"]), tuple(d["n_target"]))
