"""Checkpoint directories: ``manifest.json`` plus one CSWT file per parameter."""

import json
import os

from .backbone import ModelConfig, check_params
from .errors import FormatError
from .numerics import cswt

MANIFEST = "manifest.json"
FORMAT = "cswin-checkpoint"


def save_checkpoint(directory, params, cfg=None, dtype="float64"):
    os.makedirs(directory, exist_ok=True)
    tensors = {}
    for path in params:
        fname = f"{path}.cswt"
        cswt.save(os.path.join(directory, fname), params[path], dtype)
        tensors[path] = fname
    manifest = {"format": FORMAT, "version": 1, "dtype": dtype, "tensors": tensors}
    if cfg is not None:
        manifest["config"] = cfg.to_dict()
    with open(os.path.join(directory, MANIFEST), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_checkpoint(directory, cfg=None):
    """Returns ``(params, config)``; ``config`` is None if the manifest has none.

    When ``cfg`` is given the parameter set is checked against it.
    """
    try:
        with open(os.path.join(directory, MANIFEST)) as fh:
            manifest = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{MANIFEST} is not valid JSON: {exc}") from None
    if not isinstance(manifest, dict) or manifest.get("format") != FORMAT or manifest.get("version") != 1:
        raise FormatError(f"{directory} is not a version-1 {FORMAT}")
    tensors = manifest.get("tensors")
    if not isinstance(tensors, dict):
        raise FormatError("manifest has no tensor table")
    params = {}
    for path, fname in tensors.items():
        if os.path.basename(fname) != fname:
            raise FormatError(f"tensor file {fname!r} escapes the checkpoint directory")
        params[path] = cswt.load(os.path.join(directory, fname))
    stored = ModelConfig.from_dict(manifest["config"]) if "config" in manifest else None
    if cfg is not None:
        check_params(cfg, params)
    return params, stored
