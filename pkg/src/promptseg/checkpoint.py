"""Checkpoint serialization.

Interchange format (``.dpck``): magic b"DPCK1", u32 tensor count, then per
tensor u16 name length, UTF-8 name, u8 ndim, u32 dims, raw little-endian
float32 data. Names carry a ``frozen/`` or ``train/`` prefix reflecting
the partition at save time; a reserved ``train/_meta`` tensor encodes the
model geometry so ``eval``/``enhance`` can rebuild the model from the
file alone.

Float32 interchange cannot reproduce training trajectories to 1e-9, so
the trainer additionally writes a float64 resume file (npz with params,
optimizer moments, and progress counters) used by ``--resume``.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import ContractError
from .model import ARCHS, ModelSpec, SegModel

MAGIC = b"DPCK1"
META_NAME = "train/_meta"


def _meta_vector(spec: ModelSpec) -> np.ndarray:
    return np.array([
        spec.stages, spec.layers_per_stage, spec.d_model, spec.heads,
        spec.patch, spec.input_size, ARCHS.index(spec.arch), spec.embed_dim,
    ], dtype=np.float64)


def _spec_from_meta(v: np.ndarray) -> ModelSpec:
    return ModelSpec(
        stages=int(v[0]), layers_per_stage=int(v[1]), d_model=int(v[2]),
        heads=int(v[3]), patch=int(v[4]), input_size=int(v[5]),
        arch=ARCHS[int(v[6])], embed_dim=int(v[7]),
    )


def write_dpck(path, tensors: dict[str, np.ndarray]):
    """Write name -> float array pairs in the interchange layout."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors.items():
            enc = name.encode("utf-8")
            a = np.asarray(arr, dtype=np.float64)
            fh.write(struct.pack("<H", len(enc)))
            fh.write(enc)
            fh.write(struct.pack("<B", a.ndim))
            for d in a.shape:
                fh.write(struct.pack("<I", d))
            fh.write(a.astype("<f4").tobytes())


def read_dpck(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        if fh.read(5) != MAGIC:
            raise ContractError(f"{path}: not a DPCK1 checkpoint")
        (count,) = struct.unpack("<I", fh.read(4))
        out = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<H", fh.read(2))
            name = fh.read(nlen).decode("utf-8")
            (ndim,) = struct.unpack("<B", fh.read(1))
            shape = tuple(struct.unpack("<I", fh.read(4))[0] for _ in range(ndim))
            n = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(fh.read(4 * n), dtype="<f4").astype(np.float64).reshape(shape)
            out[name] = data
        return out


def save_model(path, model: SegModel):
    """Model weights with partition prefixes plus the geometry meta tensor."""
    tensors = {META_NAME: _meta_vector(model.spec)}
    for name, t in model.named_params():
        prefix = "train/" if t.requires_grad else "frozen/"
        tensors[prefix + name] = t.data
    write_dpck(path, tensors)


def load_model(path) -> SegModel:
    """Rebuild a model from a checkpoint written by save_model."""
    tensors = read_dpck(path)
    if META_NAME not in tensors:
        raise ContractError(f"{path}: missing model meta tensor")
    spec = _spec_from_meta(tensors.pop(META_NAME))
    model = SegModel(spec, seed=0)
    by_name = dict(model.named_params())
    for full, arr in tensors.items():
        frozen = full.startswith("frozen/")
        name = full.split("/", 1)[1]
        t = by_name.get(name)
        if t is None:
            raise ContractError(f"{path}: unknown tensor {full!r}")
        if t.data.shape != arr.shape:
            raise ContractError(f"{path}: shape mismatch for {name}: {t.data.shape} vs {arr.shape}")
        t.data[...] = arr
        t.requires_grad = not frozen
        t.grad = None
    return model


def save_resume(path, model: SegModel, optimizer, progress: dict):
    """Exact float64 training state: params + moments + counters."""
    arrays = {f"param.{n}": t.data for n, t in model.named_params()}
    arrays.update({f"opt.{k}": v for k, v in optimizer.state_arrays().items()})
    arrays["progress"] = np.array([progress["phase"], progress["epoch"]], dtype=np.float64)
    np.savez(path, **arrays)


def load_resume(path, model: SegModel, optimizer) -> dict:
    with np.load(path) as z:
        arrays = {k: z[k] for k in z.files}
    by_name = dict(model.named_params())
    for key, arr in arrays.items():
        if key.startswith("param."):
            by_name[key[6:]].data[...] = arr
    optimizer.load_state_arrays({k[4:]: v for k, v in arrays.items() if k.startswith("opt.")})
    phase, epoch = arrays["progress"]
    return {"phase": int(phase), "epoch": int(epoch)}
