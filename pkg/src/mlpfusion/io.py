"""Binary tensor files and JSON model manifests.

Tensor file layout (all integers unsigned 32-bit little-endian)::

    b"NTKF" | version=1 | ndim | dims[ndim] | payload (float64 LE, row-major)

A model directory holds one ``manifest.json`` plus tensor files referenced by
relative path.  The manifest always lists effective ``w1``/``b1``/``w2``/``b2``
tensors; compressed variants add the extra tensors they need (``p_diag`` for
fused models, SVD factors, pruning masks).
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .compress import DenseCompressedMlp, FactoredMlp, FusedMlp, MaskedMlp
from .errors import InvalidArgument, TensorIOError
from .linalg import SvdFactors
from .mlp import ACTIVATIONS, MlpWeights, ScalarHead

MAGIC = b"NTKF"
VERSION = 1
MANIFEST = "manifest.json"


def save_tensor(path, array) -> None:
    a = np.array(array, dtype="<f8", order="C")
    header = MAGIC + struct.pack("<II", VERSION, a.ndim) + struct.pack(f"<{a.ndim}I", *a.shape)
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(a.tobytes(order="C"))
    except OSError as exc:
        raise TensorIOError(f"cannot write tensor: {exc}", path=str(path)) from exc


def load_tensor(path) -> np.ndarray:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise TensorIOError(f"cannot read tensor: {exc}", path=str(path)) from exc
    if len(raw) < 12 or raw[:4] != MAGIC:
        raise TensorIOError("not an NTKF tensor file", path=str(path))
    version, ndim = struct.unpack_from("<II", raw, 4)
    if version != VERSION:
        raise TensorIOError(f"unsupported tensor version {version}", path=str(path))
    offset = 12 + 4 * ndim
    if len(raw) < offset:
        raise TensorIOError("truncated tensor header", path=str(path))
    dims = struct.unpack_from(f"<{ndim}I", raw, 12)
    count = int(np.prod(dims, dtype=np.int64)) if ndim else 1
    if len(raw) - offset != 8 * count:
        raise TensorIOError(
            f"payload has {len(raw) - offset} bytes, expected {8 * count}", path=str(path)
        )
    return np.frombuffer(raw, dtype="<f8", offset=offset, count=count).reshape(dims).astype(np.float64)


# ---------------------------------------------------------------------------
# models


def _tensors_for(model) -> tuple[dict, dict]:
    """Tensor map (manifest key -> array) and variant parameters for a model."""
    if isinstance(model, MlpWeights):
        return {"w1": model.W1, "b1": model.b1, "w2": model.W2, "b2": model.b2}, {}
    if isinstance(model, FusedMlp):
        tensors = {"w1": model.W1, "b1": model.b1, "w2": model.W2, "b2": model.b2, "p_diag": model.sizes}
        return tensors, {"strategy": model.strategy}
    if isinstance(model, DenseCompressedMlp):
        return ({"w1": model.W1, "b1": model.b1, "w2": model.W2, "b2": model.b2},
                {"out_scale": model.out_scale})
    if isinstance(model, FactoredMlp):
        d = model.dense()
        tensors = {"w1": d.W1, "b1": model.b1, "w2": d.W2, "b2": model.b2}
        for i, f in ((1, model.f1), (2, model.f2)):
            tensors.update({f"u{i}": f.U, f"s{i}": f.S, f"v{i}": f.V})
        return tensors, {"rank": model.rank}
    if isinstance(model, MaskedMlp):
        tensors = {"w1": model.W1, "b1": model.b1, "w2": model.W2, "b2": model.b2,
                   "m1": model.M1, "m2": model.M2}
        return tensors, {}
    raise InvalidArgument(f"cannot serialise {type(model).__name__}")


def save_model(model, out_dir, head: ScalarHead | None = None, compression: dict | None = None) -> Path:
    """Write tensors plus ``manifest.json`` into ``out_dir``; returns the manifest path."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise TensorIOError(f"cannot create directory: {exc}", path=str(out)) from exc
    if model.act.kind not in ACTIVATIONS:
        raise InvalidArgument(f"activation {model.act.kind!r} cannot be saved")
    tensors, variant_params = _tensors_for(model)
    files = {}
    for key, array in tensors.items():
        name = f"{key}.ntkf"
        save_tensor(out / name, array)
        files[key] = name
    manifest = {
        "p": int(tensors["w1"].shape[0]),
        "p_I": int(tensors["w1"].shape[1]),
        "activation": model.act.kind,
        "variant": model.variant,
        "variant_params": variant_params,
        "files": files,
    }
    if head is not None:
        save_tensor(out / "head.ntkf", head.r)
        manifest["head"] = "head.ntkf"
    if compression:
        manifest["compression"] = compression
    path = out / MANIFEST
    try:
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise TensorIOError(f"cannot write manifest: {exc}", path=str(path)) from exc
    return path


def _manifest_path(path) -> Path:
    path = Path(path)
    return path / MANIFEST if path.is_dir() else path


def read_manifest(path) -> dict:
    path = _manifest_path(path)
    try:
        manifest = json.loads(path.read_text())
    except OSError as exc:
        raise TensorIOError(f"cannot read manifest: {exc}", path=str(path)) from exc
    except json.JSONDecodeError as exc:
        raise InvalidArgument(f"manifest {path} is not valid JSON: {exc}") from exc
    for key in ("p", "p_I", "activation", "files"):
        if key not in manifest:
            raise InvalidArgument(f"manifest {path} lacks {key!r}")
    if manifest["activation"] not in ACTIVATIONS:
        raise InvalidArgument(f"manifest activation {manifest['activation']!r} not in {ACTIVATIONS}")
    for key in ("w1", "b1", "w2", "b2"):
        if key not in manifest["files"]:
            raise InvalidArgument(f"manifest {path} lacks file entry {key!r}")
    return manifest


def load_model(path):
    """Return ``(model, head_or_None, manifest_dict)`` for a manifest or model directory."""
    mpath = _manifest_path(path)
    manifest = read_manifest(mpath)
    base = mpath.parent
    t = {key: load_tensor(base / name) for key, name in manifest["files"].items()}
    p, width = manifest["p"], manifest["p_I"]
    expected = {"w1": (p, width), "b1": (width,), "w2": (width, p), "b2": (p,)}
    for key, shape in expected.items():
        if t[key].shape != shape:
            raise InvalidArgument(f"tensor {key} has shape {t[key].shape}, manifest declares {shape}")
    act = manifest["activation"]
    variant = manifest.get("variant", "dense")
    params = manifest.get("variant_params", {})
    if variant == "dense":
        model = MlpWeights(t["w1"], t["b1"], t["w2"], t["b2"], act)
    elif variant == "fused":
        model = FusedMlp(t["w1"], t["b1"], t["w2"], t["b2"], t["p_diag"], act, params.get("strategy", "standalone_p"))
    elif variant in DenseCompressedMlp.KINDS:
        model = DenseCompressedMlp(t["w1"], t["b1"], t["w2"], t["b2"], act, variant, params.get("out_scale", 1.0))
    elif variant == "factored":
        f1 = SvdFactors(t["u1"], t["s1"], t["v1"])
        f2 = SvdFactors(t["u2"], t["s2"], t["v2"])
        model = FactoredMlp(f1, t["b1"], f2, t["b2"], act)
    elif variant == "masked":
        base_w = MlpWeights(t["w1"], t["b1"], t["w2"], t["b2"], act)
        model = MaskedMlp(base_w, t["m1"], t["m2"])
    else:
        raise InvalidArgument(f"unknown model variant {variant!r}")
    head = None
    if manifest.get("head"):
        head = ScalarHead(load_tensor(base / manifest["head"]))
    return model, head, manifest


# ---------------------------------------------------------------------------
# input sets


def save_inputs(inputs, out_dir) -> list:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise TensorIOError(f"cannot create directory: {exc}", path=str(out)) from exc
    paths = []
    for i, X in enumerate(inputs):
        path = out / f"x_{i:04d}.ntkf"
        save_tensor(path, X)
        paths.append(path)
    return paths


def load_inputs(in_dir) -> list:
    d = Path(in_dir)
    paths = sorted(d.glob("x_*.ntkf"))
    if not paths:
        raise TensorIOError("no x_*.ntkf input files found", path=str(d))
    inputs = [load_tensor(p) for p in paths]
    for p, X in zip(paths, inputs):
        if X.ndim != 2:
            raise InvalidArgument(f"input {p} is not a matrix")
    return inputs
