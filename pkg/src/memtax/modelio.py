"""Model files: JSON with textual float64 weights, bit-identical round trips.

Weights serialize as nested lists of JSON numbers.  Python prints floats with
the shortest representation that parses back to the same bits, so save ->
load -> save is byte-identical with no binary encoding.  Writes go to a .tmp
path first and rename into place, so a crash never leaves a partial file.
"""

from __future__ import annotations

import json
import os

import numpy as np

from . import cells as cl

FORMAT_VERSION = 1


def write_text_atomic(path, text):
    tmp = str(path) + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


def model_document(cell, init=None, training=None, result=None):
    """The JSON-ready dict for a cell plus optional provenance metadata."""
    doc = {
        "format_version": FORMAT_VERSION,
        "arch": cell.arch,
        "config": cl.config_to_dict(cell.config),
        "params": {k: v.tolist() for k, v in sorted(cell.params.items())},
    }
    if init is not None:
        doc["init"] = init
    if training is not None:
        doc["training"] = training
    if result is not None:
        doc["result"] = result
    return doc


def save_model(path, cell, init=None, training=None, result=None):
    doc = model_document(cell, init=init, training=training, result=result)
    write_text_atomic(path, json.dumps(doc, indent=1, sort_keys=True) + "\n")


def load_model(path):
    """Read a model file back into a cell; returns (cell, document)."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise ValueError("unsupported model format version %r" % (version,))
    arch = doc.get("arch")
    if arch not in cl.CELL_TYPES:
        raise ValueError("unknown architecture tag %r" % (arch,))
    config = cl.config_from_dict(arch, doc["config"])
    params = {k: np.asarray(v, dtype=np.float64) for k, v in doc["params"].items()}
    cell = cl.make_cell(arch, config, params)
    return cell, doc
