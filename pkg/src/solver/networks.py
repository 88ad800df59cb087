"""Function approximators for the value function and its gradient."""

import json
import logging
import struct
from pathlib import Path
from typing import Any

import numpy as np
import torch
from torch import nn

from src.errors import ArtifactMissing, ConfigInvalid

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"SCTLCKPT"
CHECKPOINT_VERSION = 1


class Mlp(nn.Module):
    """Fully connected network with ELU activations, float64 throughout."""

    def __init__(self, in_dim: int, out_dim: int, hidden_layers: int = 3, neurons: int = 50):
        super().__init__()
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.hidden_layers = hidden_layers
        self.neurons = neurons
        widths = [in_dim] + [neurons] * hidden_layers
        layers: list[nn.Module] = []
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            layers += [nn.Linear(fan_in, fan_out, dtype=torch.float64), nn.ELU()]
        layers.append(nn.Linear(widths[-1], out_dim, dtype=torch.float64))
        self.net = nn.Sequential(*layers)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        out = self.net(x)
        return out.squeeze(-1) if self.out_dim == 1 else out

    def architecture(self) -> dict[str, int]:
        return {
            "in_dim": self.in_dim,
            "out_dim": self.out_dim,
            "hidden_layers": self.hidden_layers,
            "neurons": self.neurons,
        }

    def evaluate(self, w: np.ndarray) -> np.ndarray:
        """Evaluate on a numpy batch without tracking gradients."""
        with torch.no_grad():
            x = torch.as_tensor(np.asarray(w, dtype=np.float64))
            return self(x).numpy()


def save_checkpoint(
    path: str | Path, v_net: Mlp, g_net: Mlp, meta: dict[str, Any] | None = None
) -> Path:
    """Write both networks to a flat binary file.

    Layout: magic, little-endian uint32 header length, UTF-8 JSON header with
    architectures and tensor shapes, then every tensor as little-endian
    float64 in header order (V-net layers first, then G-net layers).
    """
    path = Path(path)
    tensors: list[dict[str, Any]] = []
    payload: list[bytes] = []
    for prefix, net in (("v", v_net), ("g", g_net)):
        for name, tensor in net.state_dict().items():
            array = tensor.detach().cpu().numpy().astype("<f8")
            tensors.append({"name": f"{prefix}.{name}", "shape": list(array.shape)})
            payload.append(array.tobytes(order="C"))
    header = {
        "version": CHECKPOINT_VERSION,
        "v": v_net.architecture(),
        "g": g_net.architecture(),
        "tensors": tensors,
        "meta": meta or {},
    }
    encoded = json.dumps(header, sort_keys=True).encode("utf-8")
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", len(encoded)))
        f.write(encoded)
        for chunk in payload:
            f.write(chunk)
    logger.info(f"Saved checkpoint to {path}")
    return path


def load_checkpoint(path: str | Path) -> tuple[Mlp, Mlp, dict[str, Any]]:
    """Read networks written by ``save_checkpoint``."""
    path = Path(path)
    if not path.exists():
        raise ArtifactMissing(f"checkpoint not found: {path}", path=str(path))
    data = path.read_bytes()
    if not data.startswith(CHECKPOINT_MAGIC):
        raise ConfigInvalid(f"not a checkpoint file: {path}", path=str(path))
    offset = len(CHECKPOINT_MAGIC)
    (length,) = struct.unpack_from("<I", data, offset)
    offset += 4
    header = json.loads(data[offset : offset + length].decode("utf-8"))
    offset += length
    if header.get("version") != CHECKPOINT_VERSION:
        raise ConfigInvalid("unsupported checkpoint version", version=header.get("version"))

    nets = {key: Mlp(**header[key]) for key in ("v", "g")}
    states: dict[str, dict[str, torch.Tensor]] = {"v": {}, "g": {}}
    for entry in header["tensors"]:
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        array = np.frombuffer(data, dtype="<f8", count=count, offset=offset).reshape(entry["shape"])
        offset += 8 * count
        prefix, name = entry["name"].split(".", 1)
        states[prefix][name] = torch.from_numpy(array.astype(np.float64))
    for key, net in nets.items():
        net.load_state_dict(states[key])
    return nets["v"], nets["g"], header["meta"]
