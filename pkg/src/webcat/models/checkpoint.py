"""Checkpoint files.

Layout: an 8-byte little-endian header length, a UTF-8 JSON header, then the
parameter arrays as little-endian float32 in the order the header lists them.
The header embeds the tokenizer text so a checkpoint is self-contained.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np

from ..errors import CorruptCheckpoint
from ..tokenize import CharVocab, SubwordVocab
from .expose import ExposeConfig
from .student import EXPOSE, TRANSFORMER, StudentModel
from .transformer import TinyTransformerConfig

FORMAT_VERSION = 1
_LEN = struct.Struct("<Q")


def _tokenizer_text(model: StudentModel) -> str:
    return model.tokenizer.to_text()


def checkpoint_bytes(model: StudentModel) -> bytes:
    names = list(model.config.param_shapes())
    arrays = [np.ascontiguousarray(model.params[n], dtype="<f4") for n in names]
    payload = b"".join(a.tobytes() for a in arrays)
    tok_text = _tokenizer_text(model)
    header = {
        "format_version": FORMAT_VERSION,
        "architecture": {
            "kind": model.kind,
            "config": asdict(model.config),
            "classifier_head": "linear",
            "pooling": "max-over-time" if model.kind == EXPOSE else "cls",
        },
        "tokenizer": {
            "kind": "char" if model.kind == EXPOSE else "subword",
            "sha256": hashlib.sha256(tok_text.encode("utf-8")).hexdigest(),
            "text": tok_text,
        },
        "tensors": [{"name": n, "shape": list(a.shape)} for n, a in zip(names, arrays)],
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
        "provenance": model.provenance,
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return _LEN.pack(len(head)) + head + payload


def save_checkpoint(model: StudentModel, path: str | Path) -> None:
    Path(path).write_bytes(checkpoint_bytes(model))


def checkpoint_from_bytes(blob: bytes) -> StudentModel:
    try:
        (n,) = _LEN.unpack_from(blob, 0)
        header = json.loads(blob[_LEN.size : _LEN.size + n].decode("utf-8"))
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptCheckpoint(f"unreadable header: {exc}") from None
    if not isinstance(header, dict) or header.get("format_version") != FORMAT_VERSION:
        raise CorruptCheckpoint("unsupported checkpoint version")
    payload = blob[_LEN.size + n :]
    if hashlib.sha256(payload).hexdigest() != header.get("payload_sha256"):
        raise CorruptCheckpoint("payload checksum mismatch")
    try:
        arch = header["architecture"]
        tok = header["tokenizer"]
        if hashlib.sha256(tok["text"].encode("utf-8")).hexdigest() != tok["sha256"]:
            raise CorruptCheckpoint("tokenizer hash mismatch")
        if arch["kind"] == EXPOSE:
            cfg = dict(arch["config"])
            cfg["kernel_widths"] = tuple(cfg["kernel_widths"])
            config = ExposeConfig(**cfg)
            lines = tok["text"].split("\n")
            tokenizer = CharVocab(chars=lines[1], max_len=config.max_len)
        elif arch["kind"] == TRANSFORMER:
            config = TinyTransformerConfig(**arch["config"])
            tokenizer = SubwordVocab.from_text(tok["text"])
        else:
            raise CorruptCheckpoint(f"unknown architecture {arch['kind']!r}")
        params, offset = {}, 0
        expected = config.param_shapes()
        for entry in header["tensors"]:
            shape = tuple(entry["shape"])
            if expected.get(entry["name"]) != shape:
                raise CorruptCheckpoint(f"tensor {entry['name']} has unexpected shape {shape}")
            count = int(np.prod(shape))
            arr = np.frombuffer(payload, dtype="<f4", count=count, offset=offset)
            params[entry["name"]] = arr.astype(np.float32).reshape(shape)
            offset += 4 * count
        if offset != len(payload) or set(params) != set(expected):
            raise CorruptCheckpoint("tensor payload does not match the header")
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, CorruptCheckpoint):
            raise
        raise CorruptCheckpoint(f"malformed header: {exc}") from None
    return StudentModel(arch["kind"], config, params, tokenizer, header.get("provenance", {}))


def load_checkpoint(path: str | Path) -> StudentModel:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise CorruptCheckpoint(f"cannot read checkpoint: {exc}") from None
    return checkpoint_from_bytes(blob)
