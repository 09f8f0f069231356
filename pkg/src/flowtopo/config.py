"""Experiment configuration: a closed JSON schema with defaults, plus the
builders that turn a validated config into a task, a model, and train options.

Every recognised field has a default, unknown fields are rejected with their
full dotted path, and the canonical hash of a config identifies the exact
experiment in model provenance.
"""

import copy
import hashlib
import json

from .bases import ClassPrior, make_base
from .datasets import OOD_KINDS, TASK_NAMES, SyntheticTask
from .errors import ConfigError
from .flows import make_flow
from .model import FlowModel
from .rng import STREAM_INIT, RngStream
from .training import OBJECTIVES, TrainConfig

FLOW_KINDS = ("realnvp", "nsf")
BASE_KINDS = ("gaussian", "mog", "rsb", "crsb")
RESAMPLED_BASE_KINDS = ("rsb", "crsb")

# Resampled bases get one fewer coupling layer than plain bases so the extra
# acceptance network does not tilt the parameter/compute budget.
LAYERS_RESAMPLED = 4
LAYERS_PLAIN = 5

DEFAULTS = {
    "seed": 0,
    "dataset": {
        "name": "two_moons",
        "n_train": 10000,
        "n_val": 2000,
        "noise": None,          # null: task-specific default
        "radii": [1.0, 2.0],    # two_rings only
        "n_components": 8,      # circle_of_gaussians only
        "radius": 2.0,          # circle_of_gaussians only
    },
    "flow": {
        "kind": "realnvp",
        "layers": None,         # null: 4 for rsb/crsb bases, 5 otherwise
        "hidden": [64, 64],
        "bins": 8,              # nsf only
        "bound": 4.0,           # nsf only
    },
    "base": {
        "kind": "crsb",
        "truncation": 100,
        "hidden": [128, 128],   # acceptance net, rsb/crsb only
        "accept_floor": 1e-3,
    },
    "train": {
        "objective": "ib",
        "beta": 1.0,
        "sigma": 0.05,
        "lr": 1e-3,
        "batch": 128,
        "steps": 1000,
        "z_mc": 1024,
        "ema_decay": 0.99,
        "z_freeze": 100000,
    },
    "eval": {
        "kld_samples": 10000,
        "ood": {"kind": "uniform_box", "n": 2000},
    },
}


def _merge(defaults, user, prefix=""):
    """Recursively overlay `user` onto `defaults`, rejecting unknown keys."""
    if not isinstance(user, dict):
        raise ConfigError(prefix or "$", f"expected an object, got {type(user).__name__}")
    out = copy.deepcopy(defaults)
    for key, value in user.items():
        path = f"{prefix}.{key}" if prefix else str(key)
        if key not in defaults:
            raise ConfigError(path, "unknown field")
        if isinstance(defaults[key], dict):
            out[key] = _merge(defaults[key], value, path)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _as_int(cfg, path, lo=None, hi=None, allow_none=False):
    value = _lookup(cfg, path)
    if value is None and allow_none:
        return None
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(path, f"expected an integer, got {value!r}")
    if lo is not None and value < lo:
        raise ConfigError(path, f"must be >= {lo}, got {value}")
    if hi is not None and value > hi:
        raise ConfigError(path, f"must be <= {hi}, got {value}")
    return value


def _as_float(cfg, path, lo=None, lo_open=False, hi=None, hi_open=False,
              allow_none=False):
    value = _lookup(cfg, path)
    if value is None and allow_none:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(path, f"expected a number, got {value!r}")
    value = float(value)
    if lo is not None and (value < lo or (lo_open and value == lo)):
        op = ">" if lo_open else ">="
        raise ConfigError(path, f"must be {op} {lo}, got {value}")
    if hi is not None and (value > hi or (hi_open and value == hi)):
        op = "<" if hi_open else "<="
        raise ConfigError(path, f"must be {op} {hi}, got {value}")
    return value


def _as_choice(cfg, path, choices):
    value = _lookup(cfg, path)
    if value not in choices:
        raise ConfigError(path, f"must be one of {list(choices)}, got {value!r}")
    return value


def _as_int_list(cfg, path, lo, min_len=0):
    value = _lookup(cfg, path)
    if not isinstance(value, list):
        raise ConfigError(path, f"expected a list of integers, got {value!r}")
    if len(value) < min_len:
        raise ConfigError(path, f"needs at least {min_len} entries")
    for i, v in enumerate(value):
        if isinstance(v, bool) or not isinstance(v, int):
            raise ConfigError(f"{path}[{i}]", f"expected an integer, got {v!r}")
        if v < lo:
            raise ConfigError(f"{path}[{i}]", f"must be >= {lo}, got {v}")
    return [int(v) for v in value]


def _lookup(cfg, path):
    node = cfg
    for part in path.split("."):
        node = node[part]
    return node


def validate_config(cfg):
    """Range/type checks on a merged config; raises ConfigError with the
    dotted path of the offending field."""
    _as_int(cfg, "seed", lo=0)

    _as_choice(cfg, "dataset.name", TASK_NAMES)
    _as_int(cfg, "dataset.n_train", lo=1)
    _as_int(cfg, "dataset.n_val", lo=0)
    _as_float(cfg, "dataset.noise", lo=0.0, lo_open=True, allow_none=True)
    radii = _lookup(cfg, "dataset.radii")
    if not isinstance(radii, list) or len(radii) != 2:
        raise ConfigError("dataset.radii", f"expected two radii, got {radii!r}")
    for i in range(2):
        v = radii[i]
        if isinstance(v, bool) or not isinstance(v, (int, float)) or v <= 0:
            raise ConfigError(f"dataset.radii[{i}]", f"must be a positive number, got {v!r}")
    _as_int(cfg, "dataset.n_components", lo=2)
    _as_float(cfg, "dataset.radius", lo=0.0, lo_open=True)

    _as_choice(cfg, "flow.kind", FLOW_KINDS)
    _as_int(cfg, "flow.layers", lo=1, allow_none=True)
    _as_int_list(cfg, "flow.hidden", lo=1)
    _as_int(cfg, "flow.bins", lo=2, hi=32)
    _as_float(cfg, "flow.bound", lo=0.0, lo_open=True)

    _as_choice(cfg, "base.kind", BASE_KINDS)
    _as_int(cfg, "base.truncation", lo=1)
    _as_int_list(cfg, "base.hidden", lo=1)
    _as_float(cfg, "base.accept_floor", lo=0.0, lo_open=True, hi=1.0, hi_open=True)

    _as_choice(cfg, "train.objective", OBJECTIVES)
    _as_float(cfg, "train.beta", lo=0.0)
    _as_float(cfg, "train.sigma", lo=0.0, lo_open=True)
    _as_float(cfg, "train.lr", lo=0.0, lo_open=True)
    _as_int(cfg, "train.batch", lo=1)
    _as_int(cfg, "train.steps", lo=0)
    _as_int(cfg, "train.z_mc", lo=1)
    _as_float(cfg, "train.ema_decay", lo=0.0, hi=1.0, hi_open=True)
    _as_int(cfg, "train.z_freeze", lo=1)

    _as_int(cfg, "eval.kld_samples", lo=1000)
    _as_choice(cfg, "eval.ood.kind", OOD_KINDS)
    _as_int(cfg, "eval.ood.n", lo=1)
    return cfg


def make_config(overrides=None):
    """Full config dict: DEFAULTS overlaid with `overrides`, then validated."""
    return validate_config(_merge(DEFAULTS, overrides or {}))


def load_config(path):
    """Read a JSON config file and validate it against the schema."""
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    try:
        overrides = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("$", f"invalid JSON (byte offset {exc.pos}): {exc.msg}")
    return make_config(overrides)


def config_hash(cfg):
    """Stable 16-hex-digit digest of the canonical JSON form of a config."""
    canon = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]


def resolved_layers(cfg):
    layers = cfg["flow"]["layers"]
    if layers is not None:
        return int(layers)
    if cfg["base"]["kind"] in RESAMPLED_BASE_KINDS:
        return LAYERS_RESAMPLED
    return LAYERS_PLAIN


def build_task(cfg):
    """Synthetic task described by the dataset section."""
    ds = cfg["dataset"]
    kwargs = {}
    if ds["noise"] is not None:
        kwargs["noise"] = float(ds["noise"])
    if ds["name"] == "two_rings":
        kwargs["radii"] = tuple(float(r) for r in ds["radii"])
    elif ds["name"] == "circle_of_gaussians":
        kwargs["n_components"] = int(ds["n_components"])
        kwargs["radius"] = float(ds["radius"])
    return SyntheticTask(ds["name"], **kwargs)


def build_model(cfg, seed=None):
    """Fresh untrained model for this config.

    Flow and base are initialized from independent children of the init
    stream, so the same (config, seed) pair always yields the same weights.
    The build recipe is kept on model.meta for serialization.
    """
    if seed is None:
        seed = cfg["seed"]
    seed = int(seed)
    task = build_task(cfg)
    d, n_classes = task.d, task.n_classes

    init = RngStream(seed, STREAM_INIT)
    layers = resolved_layers(cfg)
    fc, bc = cfg["flow"], cfg["base"]
    flow_spec = {
        "kind": fc["kind"],
        "layers": layers,
        "hidden": [int(h) for h in fc["hidden"]],
        "bins": int(fc["bins"]),
        "bound": float(fc["bound"]),
    }
    base_spec = {
        "kind": bc["kind"],
        "truncation": int(bc["truncation"]),
        "hidden": [int(h) for h in bc["hidden"]],
        "accept_floor": float(bc["accept_floor"]),
        "ema_decay": float(cfg["train"]["ema_decay"]),
    }
    flow = make_flow(
        flow_spec["kind"], d, flow_spec["layers"], tuple(flow_spec["hidden"]),
        init.child(0), n_bins=flow_spec["bins"], bound=flow_spec["bound"],
    )
    base = make_base(
        base_spec["kind"], d, n_classes, rng=init.child(1),
        hidden=tuple(base_spec["hidden"]), truncation=base_spec["truncation"],
        ema_decay=base_spec["ema_decay"], accept_floor=base_spec["accept_floor"],
    )
    meta = {
        "flow": flow_spec,
        "base": base_spec,
        "dataset": cfg["dataset"]["name"],
        "objective": cfg["train"]["objective"],
        "seed": seed,
        "config_hash": config_hash(cfg),
    }
    return FlowModel(flow, base, ClassPrior.uniform(n_classes), meta=meta)


def train_options(cfg, seed=None):
    """TrainConfig view of the train section."""
    if seed is None:
        seed = cfg["seed"]
    tr = cfg["train"]
    return TrainConfig(
        objective=tr["objective"],
        beta=float(tr["beta"]),
        sigma=float(tr["sigma"]),
        lr=float(tr["lr"]),
        batch_size=int(tr["batch"]),
        steps=int(tr["steps"]),
        seed=int(seed),
        z_mc=int(tr["z_mc"]),
        z_freeze=int(tr["z_freeze"]),
        ema_decay=float(tr["ema_decay"]),
    )
