"""
Checkpoint files: a text manifest followed by little-endian float32 arrays.

    ADIR-CHECKPOINT 2
    step_count 1200
    ema_rate 0.999
    arch {"blocks": 4, ...}
    schedule {"T": 200, "kind": "linear", "beta_start": 0.0001, "beta_end": 0.02}
    provenance {...}
    arrays 20
    array layers/in.weight 32,1,3,3 288 <sha256>
    ...
    end
    <raw float32 data in manifest order>

Only float32 weights are written; anything else is rejected rather than
rounded on the way to disk.
"""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path
from typing import Any

import numpy as np
import torch

from .denoiser import ArchConfig, DenoiserParams, layer_shapes
from .diffusion import DiffusionSchedule, ScheduleKind
from .errors import FormatError, ParameterError

MAGIC = "ADIR-CHECKPOINT"
VERSION = 2


def _to_bytes(t: torch.Tensor) -> bytes:
    return t.detach().contiguous().numpy().astype("<f4").tobytes()


def _digest(raw: bytes) -> str:
    return hashlib.sha256(raw).hexdigest()


def _atomic_write(path: Path, payload: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(payload)
    os.replace(tmp, path)


def save_checkpoint(params: DenoiserParams, path: str | Path, sched: DiffusionSchedule) -> None:
    arrays = [(f"layers/{k}", v) for k, v in params.layers.items()]
    arrays += [(f"ema/{k}", v) for k, v in params.ema_shadow.items()]
    wrong = sorted({str(v.dtype) for _, v in arrays if v.dtype != torch.float32})
    if wrong:
        raise ParameterError("checkpoints store float32 weights only", {"dtypes": wrong})
    blobs = [_to_bytes(v) for _, v in arrays]

    lines = [
        f"{MAGIC} {VERSION}",
        f"step_count {params.step_count}",
        f"ema_rate {params.ema_rate!r}",
        f"arch {json.dumps(params.arch.model_dump(), sort_keys=True)}",
        f"schedule {json.dumps(sched.summary(), sort_keys=True)}",
        f"provenance {json.dumps(params.provenance, sort_keys=True)}",
        f"arrays {len(arrays)}",
    ]
    for (name, value), raw in zip(arrays, blobs):
        shape = ",".join(str(d) for d in value.shape)
        lines.append(f"array {name} {shape} {value.numel()} {_digest(raw)}")
    lines.append("end")
    header = ("\n".join(lines) + "\n").encode("utf-8")
    _atomic_write(Path(path), header + b"".join(blobs))


def _field(line: str, key: str) -> str:
    prefix = key + " "
    if not line.startswith(prefix):
        raise FormatError(f"expected '{key}' line", {"line": line[:80]})
    return line[len(prefix):]


def _schedule(text: str) -> dict[str, Any]:
    meta = json.loads(text)
    if not isinstance(meta, dict) or set(meta) != {"T", "kind", "beta_start", "beta_end"}:
        raise FormatError("schedule line needs T, kind, beta_start and beta_end", {"schedule": text[:80]})
    T = meta["T"]
    if isinstance(T, bool) or not isinstance(T, int) or T < 1:
        raise FormatError("schedule T must be a positive integer", {"T": T})
    ScheduleKind(meta["kind"])
    start, end = float(meta["beta_start"]), float(meta["beta_end"])
    if not 0.0 < start <= end <= 1.0:
        raise FormatError("schedule betas out of range", {"beta_start": start, "beta_end": end})
    return {"T": T, "kind": meta["kind"], "beta_start": start, "beta_end": end}


def load_checkpoint(path: str | Path) -> DenoiserParams:
    path = Path(path)
    try:
        payload = path.read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read checkpoint: {exc}", {"path": str(path)}) from exc

    marker = b"\nend\n"
    cut = payload.find(marker)
    if cut < 0:
        raise FormatError("checkpoint header is not terminated", {"path": str(path)})
    try:
        lines = payload[:cut].decode("utf-8").split("\n")
    except UnicodeDecodeError as exc:
        raise FormatError("checkpoint header is not text", {"path": str(path)}) from exc
    body = payload[cut + len(marker):]

    head = lines[0].split()
    if len(head) != 2 or head[0] != MAGIC or head[1] != str(VERSION):
        raise FormatError("not an adir checkpoint", {"header": lines[0][:80]})
    try:
        step_count = int(_field(lines[1], "step_count"))
        ema_rate = float(_field(lines[2], "ema_rate"))
        arch = ArchConfig(**json.loads(_field(lines[3], "arch")))
        schedule = _schedule(_field(lines[4], "schedule"))
        provenance = json.loads(_field(lines[5], "provenance"))
        count = int(_field(lines[6], "arrays"))
    except (IndexError, ValueError, TypeError) as exc:
        raise FormatError(f"corrupt checkpoint header: {exc}", {"path": str(path)}) from exc

    entries = lines[7:]
    if len(entries) != count:
        raise FormatError("array manifest length mismatch", {"declared": count, "found": len(entries)})

    expected = layer_shapes(arch)
    layers: dict[str, torch.Tensor] = {}
    shadow: dict[str, torch.Tensor] = {}
    offset = 0
    for entry in entries:
        parts = entry.split()
        if len(parts) != 5 or parts[0] != "array":
            raise FormatError("corrupt array entry", {"line": entry[:80]})
        _, name, shape_txt, n_txt, digest = parts
        shape = tuple(int(d) for d in shape_txt.split(",")) if shape_txt else ()
        n = int(n_txt)
        group, _, key = name.partition("/")
        if key not in expected or tuple(expected[key]) != shape or int(np.prod(shape)) != n:
            raise FormatError("array does not match the architecture", {"array": name, "shape": list(shape)})
        raw = body[offset: offset + 4 * n]
        if len(raw) != 4 * n:
            raise FormatError("checkpoint is truncated", {"array": name})
        if _digest(raw) != digest:
            raise FormatError("checksum mismatch", {"array": name})
        offset += 4 * n
        tensor = torch.from_numpy(np.frombuffer(raw, dtype="<f4").astype(np.float32).reshape(shape))
        if group == "layers":
            layers[key] = tensor
        elif group == "ema":
            shadow[key] = tensor
        else:
            raise FormatError("unknown array group", {"array": name})
    if offset != len(body):
        raise FormatError("trailing bytes after last array", {"extra": len(body) - offset})
    if set(layers) != set(expected) or set(shadow) != set(expected):
        raise FormatError("checkpoint is missing arrays", {"path": str(path)})

    return DenoiserParams(
        arch=arch,
        layers={k: layers[k] for k in expected},
        ema_shadow={k: shadow[k] for k in expected},
        step_count=step_count,
        ema_rate=ema_rate,
        provenance=provenance,
        schedule=schedule,
    )


def checkpoint_digest(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
