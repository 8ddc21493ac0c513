"""Calibrated constants ``cbar``, ``ctilde`` and ``c`` shipped as package data."""
from __future__ import annotations

import json
from importlib import resources

__all__ = ["load_constants", "DEFAULT_CONSTANTS"]

# used only when the data file is missing (e.g. before the first calibration)
DEFAULT_CONSTANTS = {"cbar": 2.0, "ctilde": 2.0, "c": 324.0, "corpus_hash": None,
                     "source": "fallback"}


def load_constants() -> dict:
    try:
        text = resources.files("sdfree").joinpath("data/constants.json").read_text()
    except (FileNotFoundError, ModuleNotFoundError):
        return dict(DEFAULT_CONSTANTS)
    out = dict(DEFAULT_CONSTANTS)
    out.update(json.loads(text))
    return out
