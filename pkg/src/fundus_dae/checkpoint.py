"""Binary checkpoint container shared by training and inference.

Layout (little-endian)::

    8 bytes   magic b"FDAECKPT"
    uint32    format version (1)
    uint32    header length L, then L bytes of UTF-8 JSON (sorted keys):
              model config, schedule config, training state, parameter
              count and the layer shape table
    uint32    tensor count
    per tensor:
      uint32 name length, name bytes (UTF-8)
      uint32 rank, rank x uint32 dims
      float32 payload, row-major

Tensor names are ``model/<param>`` for weights and ``adam_m/<param>``,
``adam_v/<param>`` for optimizer moments.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .errors import CheckpointError
from .imageio import atomic_write_bytes
from .model import DiffusionAutoencoder, ModelConfig
from .schedule import ScheduleConfig

MAGIC = b"FDAECKPT"
VERSION = 1


@dataclass
class Checkpoint:
    model_config: ModelConfig
    schedule_config: ScheduleConfig
    params: dict[str, torch.Tensor]
    adam_m: dict[str, torch.Tensor] = field(default_factory=dict)
    adam_v: dict[str, torch.Tensor] = field(default_factory=dict)
    state: dict = field(default_factory=dict)  # step, epoch, train config echo

    @classmethod
    def from_model(cls, model: DiffusionAutoencoder, schedule_config: ScheduleConfig, **kw) -> "Checkpoint":
        params = {k: v.detach().clone() for k, v in model.state_dict().items()}
        return cls(model.cfg, schedule_config, params, **kw)

    def build_model(self) -> DiffusionAutoencoder:
        model = DiffusionAutoencoder(self.model_config)
        expected = model.shape_table()
        got = {k: list(v.shape) for k, v in self.params.items()}
        if expected != got:
            raise CheckpointError("checkpoint tensors do not match the model shape table")
        model.load_state_dict(self.params)
        model.eval()
        return model

    def header(self) -> dict:
        shapes = {k: list(v.shape) for k, v in self.params.items()}
        return {
            "model_config": self.model_config.to_dict(),
            "schedule_config": vars(self.schedule_config).copy(),
            "state": self.state,
            "param_count": int(sum(int(np.prod(s)) for s in shapes.values())),
            "shapes": shapes,
        }

    def to_bytes(self) -> bytes:
        head = json.dumps(self.header(), sort_keys=True, separators=(",", ":")).encode("utf-8")
        chunks = [MAGIC, struct.pack("<II", VERSION, len(head)), head]
        tensors = [(f"model/{k}", v) for k, v in self.params.items()]
        tensors += [(f"adam_m/{k}", v) for k, v in self.adam_m.items()]
        tensors += [(f"adam_v/{k}", v) for k, v in self.adam_v.items()]
        chunks.append(struct.pack("<I", len(tensors)))
        for name, t in tensors:
            raw = name.encode("utf-8")
            arr = t.detach().cpu().numpy().astype("<f4", copy=False)
            chunks.append(struct.pack("<I", len(raw)) + raw)
            chunks.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
            chunks.append(np.ascontiguousarray(arr).tobytes())
        return b"".join(chunks)

    @classmethod
    def from_bytes(cls, data: bytes, source: str = "<bytes>") -> "Checkpoint":
        try:
            if data[:8] != MAGIC:
                raise CheckpointError(f"{source}: not a checkpoint (bad magic)")
            version, head_len = struct.unpack_from("<II", data, 8)
            if version != VERSION:
                raise CheckpointError(f"{source}: unsupported checkpoint version {version}")
            pos = 16
            header = json.loads(data[pos : pos + head_len].decode("utf-8"))
            pos += head_len
            (count,) = struct.unpack_from("<I", data, pos)
            pos += 4
            groups: dict[str, dict[str, torch.Tensor]] = {"model": {}, "adam_m": {}, "adam_v": {}}
            for _ in range(count):
                (nlen,) = struct.unpack_from("<I", data, pos)
                pos += 4
                name = data[pos : pos + nlen].decode("utf-8")
                pos += nlen
                (rank,) = struct.unpack_from("<I", data, pos)
                pos += 4
                dims = struct.unpack_from(f"<{rank}I", data, pos)
                pos += 4 * rank
                size = int(np.prod(dims)) if rank else 1
                arr = np.frombuffer(data, dtype="<f4", count=size, offset=pos).reshape(dims)
                pos += 4 * size
                group, _, key = name.partition("/")
                groups[group][key] = torch.from_numpy(arr.astype(np.float32))
            if pos != len(data):
                raise CheckpointError(f"{source}: {len(data) - pos} trailing bytes")
        except CheckpointError:
            raise
        except (struct.error, ValueError, KeyError, UnicodeDecodeError) as exc:
            raise CheckpointError(f"{source}: corrupt checkpoint ({exc})") from exc
        return cls(
            model_config=ModelConfig.from_dict(header["model_config"]),
            schedule_config=ScheduleConfig(**header["schedule_config"]),
            params=groups["model"],
            adam_m=groups["adam_m"],
            adam_v=groups["adam_v"],
            state=header.get("state", {}),
        )

    def save(self, path) -> None:
        atomic_write_bytes(path, self.to_bytes())

    @classmethod
    def load(cls, path) -> "Checkpoint":
        try:
            data = Path(path).read_bytes()
        except OSError as exc:
            raise CheckpointError(f"{path}: {exc.strerror or exc}") from exc
        return cls.from_bytes(data, str(path))
