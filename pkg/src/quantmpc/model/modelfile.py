"""Model file: a versioned key=value text header followed by little-endian tensor blobs.

Binary weights are packed one bit per entry (1 = +1, 0 = -1, little bit
order); LayerNorm gamma/beta are float64.  Scales are written as Python float
reprs, which parse back to the identical double.  Header lines::

    quantmpc-model
    version=1
    hidden=64
    ...
    layer.0.q=<s_x>,<s_w>,<s_y>,<gain>
    layer.0.ln1=<s_x>,<s_var>,<s_out>,<eps>
    tensor=0.wq bits 64x64
    tensor=0.ln1.gamma f64 64
    end

Blobs follow ``end`` in the order of the ``tensor`` lines.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ModelFormatError
from ..layers.linear import ScaleSet
from .config import LayerConfig, LayerNormConfig, Model, ModelConfig
from .secure import PublicShape

MAGIC = "quantmpc-model"
SHAPE_MAGIC = "quantmpc-shape"
VERSION = "1"
SCALESETS = ("q", "k", "v", "scores", "context", "out", "ff1", "ff2")
DIMS = ("hidden", "heads", "ffn", "max_seq", "classes", "kappa", "softmax_cap", "layers")


def _floats(values) -> str:
    return ",".join(repr(float(v)) for v in values)


def _tensor_bytes(kind: str, dims: tuple[int, ...]) -> int:
    n = int(np.prod(dims)) if dims else 1
    return (n + 7) // 8 if kind == "bits" else 8 * n


def dumps(model: Model) -> bytes:
    cfg = model.config
    lines = [MAGIC, f"version={VERSION}"]
    lines += [f"{k}={v}" for k, v in (("hidden", cfg.hidden), ("heads", cfg.heads), ("ffn", cfg.ffn),
                                      ("max_seq", cfg.max_seq), ("classes", cfg.classes), ("kappa", cfg.kappa),
                                      ("softmax_cap", cfg.softmax_cap), ("layers", cfg.n_layers))]
    lines.append(f"input_scale={cfg.input_scale!r}")
    blobs = []
    for i, layer in enumerate(cfg.layers):
        for name in SCALESETS:
            s = getattr(layer, name)
            lines.append(f"layer.{i}.{name}={_floats((s.s_x, s.s_w, s.s_y, s.gain))}")
        lines.append(f"layer.{i}.res1={layer.res1!r}")
        lines.append(f"layer.{i}.res2={layer.res2!r}")
        for name in ("ln1", "ln2"):
            ln = getattr(layer, name)
            lines.append(f"layer.{i}.{name}={_floats((ln.s_x, ln.s_var, ln.s_out, ln.eps))}")
    c = cfg.classifier
    lines.append(f"classifier={_floats((c.s_x, c.s_w, c.s_y, c.gain))}")
    for name, w in model.weights.items():
        lines.append(f"tensor={name} bits {'x'.join(map(str, w.shape))}")
        blobs.append(np.packbits((w > 0).ravel(), bitorder="little").tobytes())
    for i, layer in enumerate(cfg.layers):
        for ln_name in ("ln1", "ln2"):
            ln = getattr(layer, ln_name)
            for p in ("gamma", "beta"):
                arr = getattr(ln, p)
                lines.append(f"tensor={i}.{ln_name}.{p} f64 {len(arr)}")
                blobs.append(arr.astype("<f8").tobytes())
    lines.append("end")
    return ("\n".join(lines) + "\n").encode() + b"".join(blobs)


def save_model(model: Model, path: str) -> None:
    with open(path, "wb") as f:
        f.write(dumps(model))


def _parse_header(data: bytes):
    """Returns (ordered key/value pairs with their byte offsets, blob start offset)."""
    pos, entries = 0, []
    first = True
    while True:
        nl = data.find(b"\n", pos)
        if nl < 0:
            raise ModelFormatError("header ends without an 'end' line", pos)
        try:
            line = data[pos:nl].decode("ascii")
        except UnicodeDecodeError:
            raise ModelFormatError("non-ASCII header line", pos) from None
        if first:
            if line not in (MAGIC, SHAPE_MAGIC):
                raise ModelFormatError(f"bad magic {line[:32]!r}", pos)
            entries.append(("magic", line, pos))
            first = False
        elif line == "end":
            return entries, nl + 1
        else:
            key, sep, value = line.partition("=")
            if not sep or not key:
                raise ModelFormatError(f"malformed header line {line[:40]!r}", pos)
            entries.append((key, value, pos))
        pos = nl + 1


def _float_list(value: str, n: int, offset: int) -> list[float]:
    try:
        vals = [float(v) for v in value.split(",")]
    except ValueError:
        raise ModelFormatError(f"bad number list {value!r}", offset) from None
    if len(vals) != n:
        raise ModelFormatError(f"expected {n} numbers, got {len(vals)}", offset)
    return vals


def _header_dict(entries) -> tuple[dict, list]:
    meta, tensors = {}, []
    for key, value, off in entries:
        if key == "tensor":
            parts = value.split(" ")
            if len(parts) != 3 or parts[1] not in ("bits", "f64"):
                raise ModelFormatError(f"bad tensor line {value!r}", off)
            try:
                dims = tuple(int(d) for d in parts[2].split("x"))
            except ValueError:
                raise ModelFormatError(f"bad tensor dims {parts[2]!r}", off) from None
            tensors.append((parts[0], parts[1], dims, off))
        else:
            meta[key] = (value, off)
    if meta.get("version", (None,))[0] != VERSION:
        raise ModelFormatError("unsupported or missing version", meta.get("version", ("", 0))[1])
    return meta, tensors


def _int(meta, key):
    if key not in meta:
        raise ModelFormatError(f"missing header key {key!r}", 0)
    value, off = meta[key]
    try:
        return int(value)
    except ValueError:
        raise ModelFormatError(f"{key} is not an integer", off) from None


def loads(data: bytes) -> Model:
    entries, pos = _parse_header(data)
    if entries[0][1] != MAGIC:
        raise ModelFormatError("file holds only a public shape, not a model", 0)
    meta, tensors = _header_dict(entries)
    dims = {k: _int(meta, k) for k in DIMS}

    def scaleset(key):
        if key not in meta:
            raise ModelFormatError(f"missing header key {key!r}", 0)
        value, off = meta[key]
        s_x, s_w, s_y, gain = _float_list(value, 4, off)
        return ScaleSet(s_x, s_w, s_y, gain)

    arrays = {}
    for name, kind, shape, off in tensors:
        n = _tensor_bytes(kind, shape)
        blob = data[pos:pos + n]
        if len(blob) != n:
            raise ModelFormatError(f"tensor {name} is truncated", pos)
        count = int(np.prod(shape))
        if kind == "bits":
            bits = np.unpackbits(np.frombuffer(blob, dtype=np.uint8), count=count, bitorder="little")
            arrays[name] = np.where(bits.reshape(shape) == 1, 1, -1).astype(np.int8)
        else:
            arrays[name] = np.frombuffer(blob, dtype="<f8").reshape(shape).astype(np.float64)
        pos += n
    if pos != len(data):
        raise ModelFormatError("trailing bytes after the last tensor", pos)

    layers = []
    for i in range(dims["layers"]):
        lns = {}
        for ln in ("ln1", "ln2"):
            value, off = meta.get(f"layer.{i}.{ln}", (None, 0))
            if value is None:
                raise ModelFormatError(f"missing layer.{i}.{ln}", 0)
            s_x, s_var, s_out, eps = _float_list(value, 4, off)
            try:
                lns[ln] = LayerNormConfig(arrays.pop(f"{i}.{ln}.gamma"), arrays.pop(f"{i}.{ln}.beta"),
                                          s_x, s_var, s_out, eps)
            except KeyError as exc:
                raise ModelFormatError(f"missing tensor {exc.args[0]}", 0) from None
        res = {}
        for r in ("res1", "res2"):
            value, off = meta.get(f"layer.{i}.{r}", (None, 0))
            res[r] = _float_list(value or "", 1, off)[0]
        layers.append(LayerConfig(**{n: scaleset(f"layer.{i}.{n}") for n in SCALESETS}, **res, **lns))
    cfg = ModelConfig(hidden=dims["hidden"], heads=dims["heads"], ffn=dims["ffn"], max_seq=dims["max_seq"],
                      classes=dims["classes"], input_scale=_float_list(meta["input_scale"][0], 1, 0)[0],
                      layers=layers, classifier=scaleset("classifier"), kappa=dims["kappa"],
                      softmax_cap=dims["softmax_cap"])
    return Model(cfg, arrays)


def load_model(path: str) -> Model:
    with open(path, "rb") as f:
        return loads(f.read())


@dataclass(frozen=True)
class PublicInfo:
    """What P1 and P2 may know about a model: dimensions, length cap and the input scale."""

    shape: PublicShape
    max_seq: int
    input_scale: float


def public_shape_text(model: Model) -> str:
    cfg = model.config
    lines = [SHAPE_MAGIC, f"version={VERSION}", f"max_seq={cfg.max_seq}", f"input_scale={cfg.input_scale!r}"]
    lines += [f"{k}={v}" for k, v in PublicShape.of(cfg).fields().items()]
    return "\n".join(lines + ["end"]) + "\n"


def load_public(path: str, denominator: str = "exact") -> PublicInfo:
    """Public information from a model file or a shape file.

    Only the header is read, so P1 and P2 can be given a shape file instead of
    the model itself.
    """
    with open(path, "rb") as f:
        data = f.read()
    entries, _ = _parse_header(data)
    meta, _ = _header_dict(entries)
    shape = PublicShape(hidden=_int(meta, "hidden"), heads=_int(meta, "heads"), ffn=_int(meta, "ffn"),
                        layers=_int(meta, "layers"), classes=_int(meta, "classes"), kappa=_int(meta, "kappa"),
                        softmax_cap=_int(meta, "softmax_cap"),
                        denominator=meta.get("denominator", (denominator,))[0])
    if "input_scale" not in meta:
        raise ModelFormatError("missing header key 'input_scale'", 0)
    value, off = meta["input_scale"]
    return PublicInfo(shape, _int(meta, "max_seq"), _float_list(value, 1, off)[0])
