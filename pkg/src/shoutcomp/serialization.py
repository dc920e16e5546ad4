"""Versioned, self-describing JSON files for trained models.

Floats are written with ``repr`` precision, so a save/load round trip
reproduces every parameter bit for bit.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .compensation import (CompensationModel, MemlinBiasTable, RatzBiasTable,
                           SpliceBiasTable, Technique)
from .data import Gender
from .detector import LogisticModel
from .errors import ModelFormatError
from .gmm import DiagonalGmm

FORMAT_VERSION = 1

_KINDS = {
    DiagonalGmm: "gmm",
    LogisticModel: "logistic_detector",
    RatzBiasTable: "ratz_table",
    SpliceBiasTable: "splice_table",
    MemlinBiasTable: "memlin_table",
    CompensationModel: "compensation",
}


def kind_of(model) -> str:
    try:
        return _KINDS[type(model)]
    except KeyError:
        raise ModelFormatError(f"cannot serialize objects of type {type(model).__name__}") from None


def _arr(a) -> list:
    return np.asarray(a, dtype=np.float64).tolist()


def to_dict(model) -> dict:
    kind = kind_of(model)
    doc = {"format_version": FORMAT_VERSION, "kind": kind}
    if isinstance(model, DiagonalGmm):
        doc.update(dim=model.dim, n_components=model.n_components,
                   weights=_arr(model.weights), means=_arr(model.means),
                   variances=_arr(model.variances))
    elif isinstance(model, LogisticModel):
        doc.update(dim=model.dim, intercept=float(model.intercept), weights=_arr(model.weights))
    elif isinstance(model, (RatzBiasTable, SpliceBiasTable)):
        doc.update(dim=model.biases.shape[1], biases=_arr(model.biases))
    elif isinstance(model, MemlinBiasTable):
        doc.update(dim=model.biases.shape[2], biases=_arr(model.biases),
                   cross_probs=_arr(model.cross_probs))
    else:
        doc.update(dim=model.dim, technique=model.technique.value, table=to_dict(model.table),
                   normal_gmm=to_dict(model.normal_gmm) if model.normal_gmm else None,
                   shouted_gmm=to_dict(model.shouted_gmm) if model.shouted_gmm else None,
                   gender_partition=None if not model.gender_partition else
                   {g.value: to_dict(m) for g, m in model.gender_partition.items()},
                   memlin_cross=model.memlin_cross.value)
    return doc


def from_dict(doc: dict, expected_kind: str | None = None):
    if not isinstance(doc, dict):
        raise ModelFormatError("model document must be a JSON object")
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported model format version {version!r} "
                               f"(this build reads version {FORMAT_VERSION})")
    kind = doc.get("kind")
    if expected_kind is not None and kind != expected_kind:
        raise ModelFormatError(f"expected a {expected_kind!r} model, file holds {kind!r}")
    try:
        if kind == "gmm":
            model = DiagonalGmm(doc["means"], doc["variances"], doc["weights"])
        elif kind == "logistic_detector":
            model = LogisticModel(doc["intercept"], doc["weights"])
        elif kind == "ratz_table":
            model = RatzBiasTable(np.array(doc["biases"], dtype=np.float64).reshape(-1, doc["dim"]))
        elif kind == "splice_table":
            model = SpliceBiasTable(np.array(doc["biases"], dtype=np.float64).reshape(-1, doc["dim"]))
        elif kind == "memlin_table":
            model = MemlinBiasTable(doc["biases"], doc["cross_probs"])
        elif kind == "compensation":
            part = doc.get("gender_partition")
            model = CompensationModel(
                Technique(doc["technique"]), from_dict(doc["table"]),
                from_dict(doc["normal_gmm"], "gmm") if doc.get("normal_gmm") else None,
                from_dict(doc["shouted_gmm"], "gmm") if doc.get("shouted_gmm") else None,
                {Gender(g): from_dict(m, "compensation") for g, m in part.items()} if part else None,
                doc.get("memlin_cross", "prior"))
        else:
            raise ModelFormatError(f"unknown model kind {kind!r}")
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ModelFormatError):
            raise
        raise ModelFormatError(f"malformed {kind} model: {exc}") from exc
    if "dim" in doc and getattr(model, "dim", None) not in (None, doc["dim"]):
        raise ModelFormatError(f"{kind} model declares dim {doc['dim']} but holds {model.dim}")
    return model


def dumps(model) -> str:
    return json.dumps(to_dict(model), indent=1) + "\n"


def loads(text: str, expected_kind: str | None = None):
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"model file is not valid JSON: {exc}") from exc
    return from_dict(doc, expected_kind)


def save_model(model, path) -> None:
    Path(path).write_text(dumps(model))


def load_model(path, expected_kind: str | None = None):
    return loads(Path(path).read_text(), expected_kind)
