"""Binary dataset/checkpoint files and CSV reports.

Both binary formats are ``magic | u32 version | u32 header length | JSON
header | payload | u32 CRC32``, little-endian, with the checksum covering
every byte before it.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import struct
import zlib
from pathlib import Path

import numpy as np

from .model import ModelShape, RceParams, init_params
from .planar import Dataset

DATASET_MAGIC = b"RCED"
CHECKPOINT_MAGIC = b"RCEC"
VERSION = 1


class FormatError(ValueError):
    """Bad magic, version, dimensions or checksum."""


def resolve_seed(seed: int) -> int:
    """``RCE_SEED`` in the environment wins over any configured seed."""
    env = os.environ.get("RCE_SEED")
    if env is None or env == "":
        return int(seed)
    try:
        return int(env)
    except ValueError:
        raise FormatError(f"RCE_SEED must be an integer, got {env!r}") from None


def _pack(magic: bytes, header: dict, payload: bytes) -> bytes:
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = magic + struct.pack("<II", VERSION, len(head)) + head + payload
    return body + struct.pack("<I", zlib.crc32(body))


def _unpack(blob: bytes, magic: bytes, what: str) -> tuple[dict, bytes]:
    if len(blob) < 16:
        raise FormatError(f"{what} file truncated")
    if blob[:4] != magic:
        raise FormatError(f"not a {what} file (magic {blob[:4]!r})")
    body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) != crc:
        raise FormatError(f"{what} checksum mismatch")
    version, n_head = struct.unpack("<II", body[4:12])
    if version != VERSION:
        raise FormatError(f"unsupported {what} version {version}")
    if 12 + n_head > len(body):
        raise FormatError(f"{what} header overruns file")
    header = json.loads(body[12:12 + n_head].decode("utf-8"))
    return header, body[12 + n_head:]


def _write_atomic(path: str | Path, data: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


# -- datasets ------------------------------------------------------------------------


def dataset_bytes(data: Dataset) -> bytes:
    n, n_x = data.x.shape
    n_u, n_s = data.u.shape[1], data.s.shape[1]
    header = {"n": n, "n_x": n_x, "n_u": n_u, "n_s": n_s,
              "sigma": data.meta.get("sigma"), "seed": data.meta.get("seed"),
              "env": data.meta.get("env"), "env_config": data.meta.get("env_config")}
    rows = np.concatenate([data.x, data.u, data.x_next, data.s, data.s_next], axis=1)
    return _pack(DATASET_MAGIC, header, rows.astype("<f4").tobytes())


def dataset_from_bytes(blob: bytes) -> Dataset:
    header, payload = _unpack(blob, DATASET_MAGIC, "dataset")
    n, n_x, n_u, n_s = (int(header[k]) for k in ("n", "n_x", "n_u", "n_s"))
    width = 2 * n_x + n_u + 2 * n_s
    if len(payload) != 4 * n * width:
        raise FormatError(f"dataset payload has {len(payload)} bytes, header implies {4 * n * width}")
    rows = np.frombuffer(payload, dtype="<f4").reshape(n, width).astype(np.float64)
    cuts = np.cumsum([n_x, n_u, n_x, n_s])
    x, u, x_next, s, s_next = np.split(rows, cuts, axis=1)
    meta = {k: header[k] for k in ("sigma", "seed", "env", "env_config")}
    meta["n"] = n
    return Dataset(*(np.ascontiguousarray(a) for a in (x, u, x_next, s, s_next)), meta)


def save_dataset(path: str | Path, data: Dataset) -> None:
    _write_atomic(path, dataset_bytes(data))


def load_dataset(path: str | Path) -> Dataset:
    return dataset_from_bytes(Path(path).read_bytes())


# -- checkpoints ---------------------------------------------------------------------


def checkpoint_bytes(params: RceParams, train_config: dict | None = None, epoch: int = 0) -> bytes:
    named = params.named_parameters()
    header = {
        "shape": params.shape.to_dict(),
        "roles": dict(params.roles),
        "train_config": train_config,
        "epoch": int(epoch),
        "blocks": [[name, list(t.shape)] for name, t in named],
    }
    payload = b"".join(np.ascontiguousarray(t.data, dtype="<f8").tobytes() for _, t in named)
    return _pack(CHECKPOINT_MAGIC, header, payload)


def checkpoint_from_bytes(blob: bytes) -> tuple[RceParams, dict]:
    """Return the parameters and the decoded header."""
    header, payload = _unpack(blob, CHECKPOINT_MAGIC, "checkpoint")
    params = init_params(ModelShape.from_dict(header["shape"]), 0)
    named = params.named_parameters()
    blocks = header["blocks"]
    if [b[0] for b in blocks] != [name for name, _ in named]:
        raise FormatError("checkpoint parameter names do not match the declared shape")
    offset = 0
    for (name, shape), (_, t) in zip(blocks, named):
        if tuple(shape) != t.shape:
            raise FormatError(f"block {name} has shape {tuple(shape)}, expected {t.shape}")
        size = 8 * int(np.prod(shape, dtype=np.int64))
        if offset + size > len(payload):
            raise FormatError("checkpoint payload truncated")
        t.data = np.frombuffer(payload, dtype="<f8", count=size // 8, offset=offset
                               ).reshape(shape).astype(np.float64)
        offset += size
    if offset != len(payload):
        raise FormatError("checkpoint payload has trailing bytes")
    params.roles = dict(header["roles"])
    return params, header


def save_checkpoint(path: str | Path, params: RceParams, train_config: dict | None = None,
                    epoch: int = 0) -> None:
    _write_atomic(path, checkpoint_bytes(params, train_config, epoch))


def load_checkpoint(path: str | Path) -> tuple[RceParams, dict]:
    return checkpoint_from_bytes(Path(path).read_bytes())


# -- reports -------------------------------------------------------------------------


def config_hash(config: dict) -> str:
    text = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def report_text(columns: list[str], rows: list[list], config: dict, seed: int) -> str:
    buf = io.StringIO()
    buf.write(f"# config_hash={config_hash(config)} seed={seed}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def write_report(path: str | Path, columns: list[str], rows: list[list], config: dict,
                 seed: int) -> None:
    Path(path).write_text(report_text(columns, rows, config, seed), encoding="utf-8")


def read_report(path: str | Path) -> tuple[str, list[dict]]:
    """Return the comment line and the rows as dicts of strings."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith("#"):
        raise FormatError("report is missing its header comment line")
    return lines[0], list(csv.DictReader(lines[1:]))


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.6f}"
    return str(v)
