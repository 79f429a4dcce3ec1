"""Python front end for the MH-pFLID simulator."""

import json
import os

from . import _core
from ._core import DimensionError, ProtocolError, accuracy, derive_seed, macro_f1, mean_dice

__all__ = [
    "DimensionError",
    "ProtocolError",
    "accuracy",
    "aggregate",
    "compare",
    "derive_seed",
    "load_config",
    "macro_f1",
    "mean_dice",
    "normalize_config",
    "param_counts",
    "run",
    "snapshot_entries",
    "validate",
]


def _text(config):
    return config if isinstance(config, str) else json.dumps(config)


def load_config(path):
    """Reads a config file and returns it with every default filled in."""
    with open(path) as f:
        return normalize_config(json.load(f))


def normalize_config(config):
    return json.loads(_core.normalize_config(_text(config)))


def validate(config):
    """Returns (ok, diagnostic lines)."""
    return _core.validate(_text(config))


def param_counts(config):
    """Returns (messenger count, [client counts])."""
    return _core.param_counts(_text(config))


def run(config, out_dir=""):
    """Runs one experiment. Writes the usual artifacts when out_dir is given."""
    return _core.run(_text(config), os.fspath(out_dir))


def compare(run_dirs):
    return _core.compare([os.fspath(d) for d in run_dirs])


def snapshot_entries(wire):
    """Decodes messenger bytes into (round, sample_count, [(name, shape, values)])."""
    return _core.snapshot_entries(wire)


def aggregate(snapshots, mode="data_weighted"):
    return _core.aggregate(list(snapshots), mode)
