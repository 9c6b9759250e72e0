"""Encoder + projector with binary checkpoint persistence.

The encoder is a small configurable CNN (conv / batch norm / relu
blocks with stride 2, global average pool) or an MLP. The projector is
a stack of linear / batch norm / relu blocks whose last layer stays
linear; training losses consume projector outputs while downstream
evaluation uses encoder outputs.

Checkpoints are a versioned little-endian binary format ("MVCK"): a
named tensor table carrying parameters, batch-norm running statistics
and optionally optimizer and RNG state, plus the resolved run config
and its digest. Round trips are bitwise.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import tensor as T
from .errors import ConfigError, FormatError, IntegrityError, ShapeError
from .seeds import MODEL_INIT, stream
from .tensor import Tensor

CHECKPOINT_MAGIC = b"MVCK"
CHECKPOINT_VERSION = 1

_DTYPE_CODES = {
    np.dtype(np.float32): 1,
    np.dtype(np.float64): 2,
    np.dtype(np.int64): 3,
    np.dtype(np.uint8): 4,
}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}


@dataclass
class EncoderConfig:
    kind: str = "cnn"
    channels: tuple[int, ...] = (16, 32, 64)
    kernel: int = 3
    stride: int = 2
    batch_norm: bool = True
    global_pool: bool = True
    mlp_widths: tuple[int, ...] = (256, 64)
    input_size: tuple[int, int, int] = (3, 32, 32)

    def __post_init__(self):
        if self.kind not in ("cnn", "mlp"):
            raise ConfigError(f"encoder kind must be cnn or mlp, got {self.kind!r}")
        if self.kind == "cnn" and not self.channels:
            raise ConfigError("cnn encoder needs a non-empty channel list")
        if self.kind == "mlp" and not self.mlp_widths:
            raise ConfigError("mlp encoder needs a non-empty width list")
        if self.kind == "cnn":
            h = self.input_size[1]
            w = self.input_size[2]
            for _ in self.channels:
                h = (h + 2 * (self.kernel // 2) - self.kernel) // self.stride + 1
                w = (w + 2 * (self.kernel // 2) - self.kernel) // self.stride + 1
            if h < 1 or w < 1:
                raise ConfigError(
                    f"input {self.input_size} collapses below 1x1 through the stride chain"
                )

    @property
    def embed_dim(self) -> int:
        return self.channels[-1] if self.kind == "cnn" else self.mlp_widths[-1]


@dataclass
class ProjectorConfig:
    widths: tuple[int, ...] = (256, 256, 256)
    enabled: bool = True

    def __post_init__(self):
        if self.enabled and not self.widths:
            raise ConfigError("projector needs at least one layer when enabled")


def _kaiming_uniform(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Model:
    """Encoder and projector parameters plus batch-norm buffers."""

    def __init__(self, enc: EncoderConfig, proj: ProjectorConfig, seed: int = 0, dtype=None):
        self.enc = enc
        self.proj = proj
        self.dtype = np.dtype(dtype or T.default_dtype())
        self.params: dict[str, Tensor] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self._build(stream(seed, MODEL_INIT))

    # -- construction ----------------------------------------------------

    def _add_param(self, name: str, value: np.ndarray) -> None:
        self.params[name] = Tensor(value.astype(self.dtype), requires_grad=True)

    def _add_bn(self, name: str, dim: int) -> None:
        self._add_param(f"{name}.gamma", np.ones(dim))
        self._add_param(f"{name}.beta", np.zeros(dim))
        self.buffers[f"{name}.running_mean"] = np.zeros(dim, dtype=self.dtype)
        self.buffers[f"{name}.running_var"] = np.ones(dim, dtype=self.dtype)

    def _build(self, rng: np.random.Generator) -> None:
        e = self.enc
        if e.kind == "cnn":
            c_in = e.input_size[0]
            for i, c_out in enumerate(e.channels):
                fan_in = c_in * e.kernel * e.kernel
                self._add_param(
                    f"enc.conv{i}.w",
                    _kaiming_uniform(rng, (c_out, c_in, e.kernel, e.kernel), fan_in, self.dtype),
                )
                if e.batch_norm:
                    self._add_bn(f"enc.bn{i}", c_out)
                else:
                    self._add_param(f"enc.conv{i}.b", np.zeros(c_out))
                c_in = c_out
            if not e.global_pool:
                h, w = e.input_size[1], e.input_size[2]
                for _ in e.channels:
                    h = (h + 2 * (e.kernel // 2) - e.kernel) // e.stride + 1
                    w = (w + 2 * (e.kernel // 2) - e.kernel) // e.stride + 1
                flat = e.channels[-1] * h * w
                self._add_param(
                    "enc.head.w", _kaiming_uniform(rng, (flat, e.embed_dim), flat, self.dtype)
                )
                self._add_param("enc.head.b", np.zeros(e.embed_dim))
        else:
            d_in = int(np.prod(e.input_size))
            for i, width in enumerate(e.mlp_widths):
                self._add_param(
                    f"enc.fc{i}.w", _kaiming_uniform(rng, (d_in, width), d_in, self.dtype)
                )
                self._add_param(f"enc.fc{i}.b", np.zeros(width))
                d_in = width
        if self.proj.enabled:
            d_in = e.embed_dim
            n = len(self.proj.widths)
            for i, width in enumerate(self.proj.widths):
                self._add_param(
                    f"proj.fc{i}.w", _kaiming_uniform(rng, (d_in, width), d_in, self.dtype)
                )
                self._add_param(f"proj.fc{i}.b", np.zeros(width))
                if i < n - 1:
                    self._add_bn(f"proj.bn{i}", width)
                d_in = width

    # -- forward ----------------------------------------------------------

    def encode(self, batch: np.ndarray, mode: str = "eval") -> Tensor:
        """(B, C, H, W) image batch -> (B, E) embeddings."""
        if tuple(batch.shape[1:]) != tuple(self.enc.input_size):
            raise ShapeError(
                f"batch shape {tuple(batch.shape[1:])} != configured input {self.enc.input_size}"
            )
        x = Tensor(np.asarray(batch, dtype=self.dtype))
        e = self.enc
        if e.kind == "cnn":
            pad = e.kernel // 2
            for i in range(len(e.channels)):
                x = T.conv2d(x, self.params[f"enc.conv{i}.w"], stride=e.stride, pad=pad)
                if e.batch_norm:
                    x = self._bn(f"enc.bn{i}", x, mode)
                else:
                    b = self.params[f"enc.conv{i}.b"]
                    x = T.add(x, T.reshape(b, (1, b.data.shape[0], 1, 1)))
                x = T.relu(x)
            if e.global_pool:
                x = T.mean_(x, axis=(2, 3))
            else:
                x = T.reshape(x, (x.data.shape[0], -1))
                x = T.add(T.matmul(x, self.params["enc.head.w"]), self.params["enc.head.b"])
        else:
            x = T.reshape(x, (x.data.shape[0], -1))
            n = len(e.mlp_widths)
            for i in range(n):
                x = T.add(T.matmul(x, self.params[f"enc.fc{i}.w"]), self.params[f"enc.fc{i}.b"])
                if i < n - 1:
                    x = T.relu(x)
        return x

    def project(self, emb: Tensor, mode: str = "eval") -> Tensor:
        """(B, E) encoder outputs -> (B, D) loss-space embeddings."""
        if not self.proj.enabled:
            return emb
        if emb.data.shape[1] != self.enc.embed_dim:
            raise ShapeError(
                f"projector expects width {self.enc.embed_dim}, got {emb.data.shape[1]}"
            )
        x = emb
        n = len(self.proj.widths)
        for i in range(n):
            x = T.add(T.matmul(x, self.params[f"proj.fc{i}.w"]), self.params[f"proj.fc{i}.b"])
            if i < n - 1:
                x = self._bn(f"proj.bn{i}", x, mode)
                x = T.relu(x)
        return x

    def forward(self, batch: np.ndarray, mode: str = "eval") -> Tensor:
        return self.project(self.encode(batch, mode), mode)

    def _bn(self, name: str, x: Tensor, mode: str) -> Tensor:
        return T.batch_norm(
            x,
            self.params[f"{name}.gamma"],
            self.params[f"{name}.beta"],
            self.buffers[f"{name}.running_mean"],
            self.buffers[f"{name}.running_var"],
            mode=mode,
        )

    # -- bookkeeping -------------------------------------------------------

    @property
    def embed_dim(self) -> int:
        return self.enc.embed_dim

    @property
    def project_dim(self) -> int:
        return self.proj.widths[-1] if self.proj.enabled else self.enc.embed_dim

    def parameter_count(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def checksum(self) -> float:
        """Order-stable sum over parameters and buffers (mutation guard)."""
        total = 0.0
        for name in sorted(self.params):
            total += float(np.float64(self.params[name].data).sum())
        for name in sorted(self.buffers):
            total += float(np.float64(self.buffers[name]).sum())
        return total

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {f"param/{k}": v.data for k, v in self.params.items()}
        out.update({f"buffer/{k}": v for k, v in self.buffers.items()})
        return out

    def load_state_arrays(self, table: dict[str, np.ndarray]) -> None:
        for k in self.params:
            self.params[k].data = table[f"param/{k}"].copy()
        for k in self.buffers:
            self.buffers[k] = table[f"buffer/{k}"].copy()


# -- checkpoint io -------------------------------------------------------


def _write_block(buf: io.BytesIO, name: str, arr: np.ndarray) -> None:
    nb = name.encode("utf-8")
    buf.write(struct.pack("<I", len(nb)))
    buf.write(nb)
    canonical = np.dtype(arr.dtype.name)
    code = _DTYPE_CODES.get(canonical)
    if code is None:
        raise ConfigError(f"checkpoint cannot store dtype {arr.dtype}")
    buf.write(struct.pack("<BB", code, arr.ndim))
    buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    buf.write(np.ascontiguousarray(arr, dtype=canonical.newbyteorder("<")).tobytes())


def _read_exact(f, n: int, what: str) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise IntegrityError(f"truncated checkpoint while reading {what} at offset {f.tell()}")
    return data


def save_checkpoint(
    model: Model,
    path,
    optimizer_state: Optional[dict[str, np.ndarray]] = None,
    rng_state: Optional[dict] = None,
    config_toml: str = "",
    config_digest: str = "",
) -> None:
    table = dict(model.state_arrays())
    if optimizer_state:
        table.update({f"opt/{k}": v for k, v in optimizer_state.items()})
    if rng_state is not None:
        table["rng/state"] = np.frombuffer(json.dumps(rng_state).encode("utf-8"), dtype=np.uint8)
    if config_toml:
        table["config/toml"] = np.frombuffer(config_toml.encode("utf-8"), dtype=np.uint8)
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<I", CHECKPOINT_VERSION))
    db = config_digest.encode("utf-8")
    buf.write(struct.pack("<I", len(db)))
    buf.write(db)
    buf.write(struct.pack("<I", len(table)))
    for name in sorted(table):
        _write_block(buf, name, table[name])
    with open(path, "wb") as f:
        f.write(buf.getvalue())


def read_checkpoint_table(path) -> tuple[dict[str, np.ndarray], str]:
    """Raw named-array table + config digest, with layout validation."""
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise FormatError(f"bad checkpoint magic {magic!r} at offset 0")
        (version,) = struct.unpack("<I", _read_exact(f, 4, "version"))
        if version != CHECKPOINT_VERSION:
            raise FormatError(f"unsupported checkpoint version {version}")
        (dlen,) = struct.unpack("<I", _read_exact(f, 4, "digest length"))
        digest = _read_exact(f, dlen, "digest").decode("utf-8")
        (count,) = struct.unpack("<I", _read_exact(f, 4, "table size"))
        table: dict[str, np.ndarray] = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<I", _read_exact(f, 4, "name length"))
            name = _read_exact(f, nlen, "name").decode("utf-8")
            code, ndim = struct.unpack("<BB", _read_exact(f, 2, f"{name} header"))
            if code not in _CODE_DTYPES:
                raise FormatError(f"unknown dtype code {code} for {name!r}")
            shape = struct.unpack(f"<{ndim}I", _read_exact(f, 4 * ndim, f"{name} dims"))
            dt = _CODE_DTYPES[code]
            nbytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize if ndim else dt.itemsize
            payload = _read_exact(f, nbytes, f"{name} payload")
            table[name] = np.frombuffer(payload, dtype=dt.newbyteorder("<")).reshape(shape)
        trailing = f.read(1)
        if trailing:
            raise IntegrityError(f"unexpected trailing bytes at offset {f.tell() - 1}")
    return table, digest


def load_checkpoint(path) -> tuple[Model, dict]:
    """Rebuild a model from a checkpoint; returns (model, extras).

    Extras carry the optimizer state table, RNG state, config digest and
    the resolved config text when present.
    """
    table, digest = read_checkpoint_table(path)
    if "config/toml" not in table:
        raise FormatError("checkpoint has no embedded config; cannot rebuild the model")
    config_toml = table["config/toml"].tobytes().decode("utf-8")
    from .config import experiment_from_toml  # local import to avoid a cycle

    cfg = experiment_from_toml(config_toml)
    dtype = np.float64 if cfg.train.float_width == "fp64" else np.float32
    model = Model(cfg.model_config(), cfg.projector_config(), seed=cfg.train.seed, dtype=dtype)
    model.load_state_arrays(table)
    extras = {
        "digest": digest,
        "config_toml": config_toml,
        "config": cfg,
        "optimizer": {
            k[len("opt/") :]: v.copy() for k, v in table.items() if k.startswith("opt/")
        },
    }
    if "rng/state" in table:
        extras["rng"] = json.loads(table["rng/state"].tobytes().decode("utf-8"))
    return model, extras
