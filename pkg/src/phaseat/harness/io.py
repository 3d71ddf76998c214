"""Model container and metric files.

Container layout (all integers little-endian)::

    b"PHAT"                      magic
    u32                          format version
    u32                          length of the JSON descriptor in bytes
    bytes                        UTF-8 JSON: layer shapes, activations,
                                 projection scale, optional state header
    u64                          number of float64 values that follow
    f64[...]                     parameters (extractor, then heads re/im),
                                 projection direction, then the frequency
                                 state arrays (real/imag interleaved)
"""

from __future__ import annotations

import csv
import io
import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import FormatError
from ..freq_select import FrequencyState
from ..nn import Layer, ParameterSet
from ..phase_model import PhaseModel, ProjectionSpec

MAGIC = b"PHAT"
VERSION = 1
METRIC_FIELDS = ("epoch", "split", "clean_acc", "robust_acc", "attack_name", "e_low", "e_high", "loss")


def _describe(ps: ParameterSet) -> list[dict]:
    return [{"shape": list(l.weight.shape), "activation": l.activation} for l in ps.layers]


def _rebuild(desc: list[dict], flat: np.ndarray, pos: int) -> tuple[ParameterSet, int]:
    layers = []
    for d in desc:
        out_dim, in_dim = d["shape"]
        W = flat[pos:pos + out_dim * in_dim].reshape(out_dim, in_dim)
        pos += out_dim * in_dim
        b = flat[pos:pos + out_dim]
        pos += out_dim
        layers.append(Layer(W.copy(), b.copy(), d["activation"]))
    return ParameterSet(tuple(layers)), pos


def _complex_to_flat(a: np.ndarray) -> np.ndarray:
    return np.stack([a.real, a.imag], axis=-1).ravel()


def _flat_to_complex(v: np.ndarray, shape) -> np.ndarray:
    pairs = v.reshape(*shape, 2)
    out = np.empty(shape, dtype=np.complex128)
    out.real, out.imag = pairs[..., 0], pairs[..., 1]
    return out


def encode_model(model: PhaseModel, state: FrequencyState | None = None) -> bytes:
    desc = {
        "extractor": _describe(model.extractor),
        "heads": [[_describe(re), _describe(im)] for re, im in model.heads],
        "projection": None if model.projection is None else {"scale": model.projection.scale},
        "state": None,
    }
    parts = [model.to_vector()]
    if model.projection is not None:
        parts.append(np.asarray(model.projection.direction, dtype=np.float64))
    if state is not None:
        seeded = state.ema_clean is not None
        desc["state"] = {
            "k_max": state.k_max,
            "beta": state.beta,
            "n_classes": int(state.ema_clean.shape[1]) if seeded else 0,
            "has_discrepancy": state.discrepancy is not None,
        }
        if seeded:
            parts += [_complex_to_flat(state.ema_clean), _complex_to_flat(state.ema_adv)]
        if state.discrepancy is not None:
            parts.append(state.discrepancy)
    blob = json.dumps(desc, sort_keys=True).encode()
    flat = np.concatenate(parts).astype("<f8")
    return b"".join([
        MAGIC,
        struct.pack("<II", VERSION, len(blob)),
        blob,
        struct.pack("<Q", flat.size),
        flat.tobytes(),
    ])


def decode_model(data: bytes) -> tuple[PhaseModel, FrequencyState | None]:
    if len(data) < 12 or data[:4] != MAGIC:
        raise FormatError("not a PHAT model container")
    version, n_json = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        raise FormatError(f"unsupported container version {version}")
    end = 12 + n_json
    if len(data) < end + 8:
        raise FormatError("truncated container header")
    try:
        desc = json.loads(data[12:end].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as err:
        raise FormatError(f"corrupt architecture descriptor: {err}") from None
    (count,) = struct.unpack_from("<Q", data, end)
    body = data[end + 8:]
    if len(body) != 8 * count:
        raise FormatError(f"expected {8 * count} parameter bytes, found {len(body)}")
    flat = np.frombuffer(body, dtype="<f8").astype(np.float64)

    try:
        pos = 0
        extractor, pos = _rebuild(desc["extractor"], flat, pos)
        heads = []
        for re_desc, im_desc in desc["heads"]:
            re, pos = _rebuild(re_desc, flat, pos)
            im, pos = _rebuild(im_desc, flat, pos)
            heads.append((re, im))
        projection = None
        if desc["projection"] is not None:
            dim = extractor.in_dim
            projection = ProjectionSpec(flat[pos:pos + dim].copy(), desc["projection"]["scale"])
            pos += dim
        state = None
        if desc["state"] is not None:
            s = desc["state"]
            k, c = s["k_max"], s["n_classes"]
            ema_c = ema_a = disc = None
            if c:
                n = 2 * k * c
                ema_c = _flat_to_complex(flat[pos:pos + n], (k, c))
                ema_a = _flat_to_complex(flat[pos + n:pos + 2 * n], (k, c))
                pos += 2 * n
            if s["has_discrepancy"]:
                disc = flat[pos:pos + k].copy()
                pos += k
            state = FrequencyState(k, s["beta"], ema_c, ema_a, disc)
        if pos != flat.size:
            raise FormatError("parameter count does not match the descriptor")
        return PhaseModel(extractor, tuple(heads), projection), state
    except (KeyError, TypeError, ValueError) as err:
        if isinstance(err, FormatError):
            raise
        raise FormatError(f"descriptor does not match parameters: {err}") from None


def save_model(path, model: PhaseModel, state: FrequencyState | None = None) -> None:
    Path(path).write_bytes(encode_model(model, state))


def load_model(path) -> tuple[PhaseModel, FrequencyState | None]:
    try:
        data = Path(path).read_bytes()
    except OSError as err:
        raise FormatError(f"cannot read model {path}: {err}") from None
    return decode_model(data)


# ---------------------------------------------------------------------------
# metrics


@dataclass(frozen=True)
class MetricRow:
    epoch: int
    split: str
    clean_acc: float
    robust_acc: float
    attack_name: str
    e_low: float
    e_high: float
    loss: float


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def format_metric_rows(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRIC_FIELDS)
    for r in rows:
        w.writerow([_fmt(getattr(r, f)) for f in METRIC_FIELDS])
    return buf.getvalue()


class MetricsWriter:
    """Append-only ``metrics.csv``; the header is written on creation."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.write_text(format_metric_rows([]))

    def append(self, rows) -> None:
        body = format_metric_rows(rows).split("\n", 1)[1]
        with open(self.path, "a") as fh:
            fh.write(body)


def read_metrics(path) -> list[MetricRow]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != METRIC_FIELDS:
            raise FormatError(f"unexpected metrics header {reader.fieldnames}")
        out = []
        for r in reader:
            out.append(MetricRow(
                int(r["epoch"]), r["split"], float(r["clean_acc"]), float(r["robust_acc"]),
                r["attack_name"], float(r["e_low"]), float(r["e_high"]), float(r["loss"]),
            ))
        return out


def json_safe(obj):
    """Replace non-finite floats by None so the output is strict JSON."""
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [json_safe(v) for v in obj]
    if isinstance(obj, np.generic):
        return json_safe(obj.item())
    if isinstance(obj, np.ndarray):
        return json_safe(obj.tolist())
    return obj
