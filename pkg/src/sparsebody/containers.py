"""Versioned JSON containers for models, registration sets and shape data.

Every container is a single JSON object with a ``format_version`` and a
``kind`` discriminator.  Numeric arrays travel as base64-encoded
little-endian raw bytes (float64 for parameters, int64 for indices), so
serialization is byte-exact and deterministic: the same data always
produces the same file.  Loaders reject unknown versions and kinds.
"""

from __future__ import annotations

import base64
import json

import numpy as np

from .body import BodyModel, CorrectiveTable
from .errors import ValidationError
from .mesh import JointNeighborhoods, KinematicTree

FORMAT_VERSION = 1

KIND_MODEL = "body_model"
KIND_REGISTRATIONS = "registration_set"
KIND_SHAPE_DATASET = "shape_dataset"


def _encode(array: np.ndarray, dtype: str) -> dict:
    array = np.ascontiguousarray(np.asarray(array), dtype=np.dtype(dtype))
    return {
        "dtype": dtype,
        "shape": list(array.shape),
        "data": base64.b64encode(array.tobytes()).decode("ascii"),
    }


def _decode(payload: dict) -> np.ndarray:
    try:
        dtype = np.dtype(payload["dtype"])
        raw = base64.b64decode(payload["data"])
        array = np.frombuffer(raw, dtype=dtype).copy()
        return array.reshape(payload["shape"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"malformed array payload: {exc}")


def _dumps(document: dict) -> str:
    return json.dumps(document, sort_keys=True, separators=(",", ":")) + "\n"


def _check_header(document: dict, expected_kind: str):
    version = document.get("format_version")
    if version != FORMAT_VERSION:
        raise ValidationError(f"unsupported format_version {version!r}, expected {FORMAT_VERSION}")
    kind = document.get("kind")
    if kind != expected_kind:
        raise ValidationError(f"expected a {expected_kind!r} container, got {kind!r}")


# ----------------------------------------------------------------- body model


def model_to_json(model: BodyModel) -> str:
    document = {
        "format_version": FORMAT_VERSION,
        "kind": KIND_MODEL,
        "num_vertices": model.num_vertices,
        "num_joints": model.num_joints,
        "num_shape_coeffs": model.num_shape_coeffs,
        "beta2_index": model.beta2_index,
        "pruned": model.pruned,
        "joint_names": list(model.tree.names),
        "parents": model.tree.parents.tolist(),
        "neighborhoods": [list(model.neighborhoods.of(j)) for j in range(1, model.num_joints)],
        "rest_quaternions": _encode(model.tree.rest_quaternions, "<f8"),
        "faces": _encode(model.faces, "<i8"),
        "template": _encode(model.template, "<f8"),
        "shape_dirs": _encode(model.shape_dirs, "<f8"),
        "joint_regressor": _encode(model.joint_regressor, "<f8"),
        "skinning_weights": _encode(model.skinning_weights, "<f8"),
        "activations": _encode(model.activations, "<f8"),
        "correctives": [
            {
                "joint": j,
                "vertex_ids": _encode(model.correctives[j - 1].vertex_ids, "<i8"),
                "table": _encode(model.correctives[j - 1].table, "<f8"),
            }
            for j in range(1, model.num_joints)
        ],
    }
    return _dumps(document)


def model_from_json(text: str) -> BodyModel:
    try:
        document = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"container is not valid JSON: {exc}")
    _check_header(document, KIND_MODEL)
    tree = KinematicTree(
        np.asarray(document["parents"], dtype=np.int64),
        tuple(document["joint_names"]),
        _decode(document["rest_quaternions"]),
    )
    stored = [tuple(ne) for ne in document["neighborhoods"]]
    nbhd = JointNeighborhoods.from_tree(tree)
    derived = [nbhd.of(j) for j in range(1, tree.num_joints)]
    if stored != derived:
        raise ValidationError("stored neighbor lists disagree with the kinematic tree")
    correctives = []
    for entry in sorted(document["correctives"], key=lambda e: e["joint"]):
        correctives.append(CorrectiveTable(_decode(entry["vertex_ids"]), _decode(entry["table"])))
    return BodyModel(
        template=_decode(document["template"]),
        shape_dirs=_decode(document["shape_dirs"]),
        joint_regressor=_decode(document["joint_regressor"]),
        skinning_weights=_decode(document["skinning_weights"]),
        correctives=tuple(correctives),
        activations=_decode(document["activations"]),
        tree=tree,
        neighborhoods=nbhd,
        faces=_decode(document["faces"]),
        beta2_index=int(document["beta2_index"]),
        pruned=bool(document["pruned"]),
    )


def save_model(model: BodyModel, path):
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(model_to_json(model))


def load_model(path) -> BodyModel:
    with open(path, "r", encoding="utf-8") as handle:
        return model_from_json(handle.read())


# -------------------------------------------------------------- registrations


def registrations_to_json(registrations) -> str:
    items = []
    for reg in registrations:
        items.append(
            {
                "vertices": _encode(reg.vertices, "<f8"),
                "pose": _encode(reg.pose, "<f8"),
                "shape": _encode(reg.shape, "<f8"),
            }
        )
    document = {
        "format_version": FORMAT_VERSION,
        "kind": KIND_REGISTRATIONS,
        "count": len(items),
        "items": items,
    }
    return _dumps(document)


def registrations_from_json(text: str):
    from .training import Registration

    try:
        document = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"container is not valid JSON: {exc}")
    _check_header(document, KIND_REGISTRATIONS)
    items = document["items"]
    if len(items) != document.get("count"):
        raise ValidationError("registration count disagrees with item list")
    return [
        Registration(
            vertices=_decode(item["vertices"]),
            pose=_decode(item["pose"]),
            shape=_decode(item["shape"]),
        )
        for item in items
    ]


def save_registrations(registrations, path):
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(registrations_to_json(registrations))


def load_registrations(path):
    with open(path, "r", encoding="utf-8") as handle:
        return registrations_from_json(handle.read())


# -------------------------------------------------------------- subject rows


def shape_dataset_to_json(data: np.ndarray) -> str:
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2:
        raise ValidationError("shape dataset must be a 2-D subjects-by-coordinates matrix")
    document = {
        "format_version": FORMAT_VERSION,
        "kind": KIND_SHAPE_DATASET,
        "num_subjects": data.shape[0],
        "row_length": data.shape[1],
        "data": _encode(data, "<f8"),
    }
    return _dumps(document)


def shape_dataset_from_json(text: str) -> np.ndarray:
    try:
        document = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"container is not valid JSON: {exc}")
    _check_header(document, KIND_SHAPE_DATASET)
    data = _decode(document["data"])
    if data.shape != (document["num_subjects"], document["row_length"]):
        raise ValidationError("shape dataset header disagrees with payload shape")
    return data


def save_shape_dataset(data: np.ndarray, path):
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(shape_dataset_to_json(data))


def load_shape_dataset(path) -> np.ndarray:
    with open(path, "r", encoding="utf-8") as handle:
        return shape_dataset_from_json(handle.read())
