"""CNN temporal encoder -> graph attention -> MLP head, and its checkpoint format."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import BatchNormState, ParameterStore, Tensor
from .gat import GatLayer, gat_stack
from .graph import build_graph

CHECKPOINT_FORMAT = "neogat-checkpoint/1"


class CheckpointError(ValueError):
    """Unreadable, corrupt or mismatched checkpoint."""


class ModelNotInitializedError(RuntimeError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    n_channels: int = 12
    n_samples: int = 384
    block_filters: tuple[int, ...] = (32, 64, 8, 1)
    kernel_sizes: tuple[int, int] = (5, 7)
    pool: int = 2
    gat_widths: tuple[int, ...] = (37, 32, 16)
    mlp_widths: tuple[int, ...] = (32, 16, 1)
    dropout: float = 0.2
    dropout_blocks: tuple[int, ...] = (1, 2, 3)
    leaky_slope: float = 0.2
    bn_momentum: float = 0.9
    bn_eps: float = 1e-5
    seed: int = 0

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def encoder_lengths(self) -> list[int]:
        lengths = [self.n_samples]
        for _ in self.block_filters:
            lengths.append(lengths[-1] // self.pool)
        return lengths


def _kaiming_uniform(rng, shape, fan_in, dtype):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def _xavier_uniform(rng, shape, fan_in, fan_out, dtype):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Model:
    """Seizure classifier over ``(N, 12, 384)`` normalised epochs.

    The 12 EEG channels ride along as a batch-like axis through the encoder,
    sharing convolution weights; the filter axis carries ``block_filters``.
    """

    def __init__(self, config: ModelConfig | None = None, dtype=np.float32, init: bool = True) -> None:
        self.config = config or ModelConfig()
        self.dtype = np.dtype(dtype)
        self.params = ParameterStore()
        self.bn: dict[str, BatchNormState] = {}
        self.decay: set[str] = set()
        self.graph = build_graph()
        self.initialized = False
        if init:
            self._init_params(np.random.default_rng(self.config.seed))

    # construction

    def _param(self, name, value, decay=False):
        self.params.add(name, value)
        if decay:
            self.decay.add(name)

    def _conv(self, rng, name, c_out, c_in, k, bias=True):
        dt = self.dtype
        self._param(f"{name}.weight", _kaiming_uniform(rng, (c_out, c_in, k), c_in * k, dt), decay=True)
        if bias:
            self._param(f"{name}.bias", np.zeros(c_out, dt))

    def _bn(self, name, c):
        self._param(f"{name}.gamma", np.ones(c, self.dtype))
        self._param(f"{name}.beta", np.zeros(c, self.dtype))
        self.bn[name] = BatchNormState(c, self.config.bn_momentum, self.config.bn_eps, self.dtype)

    def _init_params(self, rng: np.random.Generator) -> None:
        cfg = self.config
        k_a, k_b = cfg.kernel_sizes
        f1 = cfg.block_filters[0]
        self._conv(rng, "block1.conv5", f1, 1, k_a)
        self._conv(rng, "block1.conv7", f1, 1, k_b)
        self._bn("block1.bn", f1)
        c_in = f1
        for b, c_out in enumerate(cfg.block_filters[1:], start=2):
            self._conv(rng, f"block{b}.conv_a", c_out, c_in, k_a)
            self._conv(rng, f"block{b}.conv_b", c_out, c_out, k_b)
            if c_in != c_out:
                self._conv(rng, f"block{b}.skip", c_out, c_in, 1, bias=False)
            self._bn(f"block{b}.bn", c_out)
            c_in = c_out
        f = cfg.encoder_lengths()[-1] * cfg.block_filters[-1]
        for i, f_out in enumerate(cfg.gat_widths, start=1):
            self._param(f"gat{i}.W", _xavier_uniform(rng, (f, f_out), f, f_out, self.dtype), decay=True)
            self._param(f"gat{i}.a", _xavier_uniform(rng, (2 * f_out,), 2 * f_out, 1, self.dtype), decay=True)
            f = f_out
        width = cfg.n_channels
        for i, w_out in enumerate(cfg.mlp_widths, start=1):
            self._param(f"head.dense{i}.weight", _kaiming_uniform(rng, (width, w_out), width, self.dtype), decay=True)
            self._param(f"head.dense{i}.bias", np.zeros(w_out, self.dtype))
            width = w_out
        self.initialized = True

    def gat_layers(self) -> list[GatLayer]:
        mask = self.graph.mask()
        return [
            GatLayer(self.params[f"gat{i}.W"], self.params[f"gat{i}.a"], mask, self.config.leaky_slope)
            for i in range(1, len(self.config.gat_widths) + 1)
        ]

    def num_parameters(self) -> int:
        return self.params.num_scalars()

    def zero_final_layer(self) -> None:
        """Zero the output neuron so every probability is exactly 0.5."""
        n = len(self.config.mlp_widths)
        self.params[f"head.dense{n}.weight"].data[...] = 0
        self.params[f"head.dense{n}.bias"].data[...] = 0

    def astype(self, dtype) -> "Model":
        """Deep copy with parameters and running statistics cast to ``dtype``."""
        other = Model(self.config, dtype=dtype, init=False)
        for name, t in self.params.items():
            other._param(name, t.data.astype(dtype), decay=name in self.decay)
        for name, st in self.bn.items():
            new = copy.copy(st)
            new.running_mean = st.running_mean.astype(dtype)
            new.running_var = st.running_var.astype(dtype)
            other.bn[name] = new
        other.initialized = self.initialized
        return other

    def copy(self) -> "Model":
        return self.astype(self.dtype)

    # forward

    def _drop(self, x, block, train, rng):
        if block in self.config.dropout_blocks:
            return ad.dropout(x, self.config.dropout, train, rng)
        return x

    def encode(self, x: Tensor, train: bool = False, rng=None, trace: dict | None = None) -> Tensor:
        """``(N, 12, T)`` -> ``(N, 12, T / 16)`` via four pooled conv blocks."""
        cfg = self.config
        p = self.params
        n, c, t = x.shape
        h = ad.reshape(x, (n * c, 1, t))
        path5 = ad.relu(ad.conv1d(h, p["block1.conv5.weight"], p["block1.conv5.bias"]))
        path7 = ad.relu(ad.conv1d(h, p["block1.conv7.weight"], p["block1.conv7.bias"]))
        h = ad.add(path5, path7)
        h = ad.avg_pool1d(h, cfg.pool)
        h = ad.batch_norm(h, p["block1.bn.gamma"], p["block1.bn.beta"], self.bn["block1.bn"], train)
        h = self._drop(h, 1, train, rng)
        if trace is not None:
            trace["block1"] = h
        for b in range(2, len(cfg.block_filters) + 1):
            skip = h
            if f"block{b}.skip.weight" in p:
                skip = ad.conv1d(h, p[f"block{b}.skip.weight"])
            y = ad.relu(ad.conv1d(h, p[f"block{b}.conv_a.weight"], p[f"block{b}.conv_a.bias"]))
            y = ad.conv1d(y, p[f"block{b}.conv_b.weight"], p[f"block{b}.conv_b.bias"])
            h = ad.relu(ad.add(y, skip))
            h = ad.avg_pool1d(h, cfg.pool)
            h = ad.batch_norm(h, p[f"block{b}.bn.gamma"], p[f"block{b}.bn.beta"], self.bn[f"block{b}.bn"], train)
            h = self._drop(h, b, train, rng)
            if trace is not None:
                trace[f"block{b}"] = h
        _, f, t_out = h.shape
        # (N*12, F, T') -> (N, 12, F*T'); with F == 1 this is the 12 x 24 node-feature matrix
        return ad.reshape(h, (n, c, f * t_out))

    def head(self, g: Tensor, train: bool = False, rng=None, trace: dict | None = None) -> Tensor:
        """Global average pool over node features, then the dense stack -> logits ``(N,)``."""
        p = self.params
        h = ad.mean(g, axis=-1)
        if trace is not None:
            trace["gap"] = h
        n_dense = len(self.config.mlp_widths)
        for i in range(1, n_dense + 1):
            h = ad.dense(h, p[f"head.dense{i}.weight"], p[f"head.dense{i}.bias"])
            if i < n_dense:
                h = ad.relu(h)
                h = ad.dropout(h, self.config.dropout, train, rng)
            if trace is not None:
                trace[f"dense{i}"] = h
        return ad.reshape(h, (h.shape[0],))

    def forward(self, x, train: bool = False, rng=None, trace: dict | None = None) -> Tensor:
        """Logits for a batch of epochs; ``trace`` collects intermediate nodes by name."""
        if not self.initialized:
            raise ModelNotInitializedError("model parameters are not initialised")
        x = ad.as_tensor(np.asarray(x.data if isinstance(x, Tensor) else x, dtype=self.dtype))
        if x.ndim == 2:
            x = ad.reshape(x, (1,) + x.shape)
        cfg = self.config
        if x.shape[1:] != (cfg.n_channels, cfg.n_samples):
            raise ad.ShapeError(f"expected (N, {cfg.n_channels}, {cfg.n_samples}) input, got {x.shape}")
        enc = self.encode(x, train, rng, trace)
        if trace is not None:
            trace["encoder"] = enc
        g = gat_stack(enc, self.gat_layers(), train, rng, cfg.dropout, trace)
        if trace is not None:
            trace["last_gat"] = g
        g = ad.dropout(g, cfg.dropout, train, rng)
        return self.head(g, train, rng, trace)

    def classify(self, epochs) -> tuple[np.ndarray, np.ndarray]:
        """Eval-mode ``(probabilities, logits)`` for one epoch or a batch."""
        with ad.no_grad():
            logits = self.forward(epochs, train=False)
            probs = ad.sigmoid(logits)
        return probs.data, logits.data

    def predict_proba(self, data: np.ndarray, batch_size: int = 64) -> np.ndarray:
        out = [self.classify(data[i : i + batch_size])[0] for i in range(0, len(data), batch_size)]
        return np.concatenate(out) if out else np.zeros(0, dtype=self.dtype)

    # state

    def state_tensors(self) -> list[tuple[str, str, np.ndarray]]:
        """``(name, kind, array)`` in checkpoint order: parameters then buffers."""
        out = [(n, "param", t.data) for n, t in self.params.items()]
        for name in sorted(self.bn):
            st = self.bn[name]
            out.append((f"{name}.running_mean", "buffer", st.running_mean))
            out.append((f"{name}.running_var", "buffer", st.running_var))
        return out


def save_checkpoint(model: Model, path, metadata: dict | None = None, metrics: dict | None = None) -> Path:
    """Write ``manifest.json`` and ``params.bin`` (little-endian float32) into ``path``."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    entries, chunks, offset = [], [], 0
    for name, kind, arr in model.state_tensors():
        blob = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        entries.append({"name": name, "kind": kind, "shape": list(arr.shape), "offset": offset, "nbytes": len(blob)})
        chunks.append(blob)
        offset += len(blob)
    payload = b"".join(chunks)
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "config": model.config.to_dict(),
        "config_hash": model.config.config_hash(),
        "n_parameters": model.num_parameters(),
        "tensors": entries,
        "payload_bytes": len(payload),
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
        "metadata": metadata or {},
        "metrics": metrics or {},
    }
    (path / "params.bin").write_bytes(payload)
    (path / "manifest.json").write_text(json.dumps(manifest, indent=1))
    return path


def read_manifest(path) -> dict:
    try:
        return json.loads((Path(path) / "manifest.json").read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint manifest at {path}: {exc}") from exc


def load_checkpoint(path, expected_config: ModelConfig | None = None) -> Model:
    path = Path(path)
    man = read_manifest(path)
    if man.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"unsupported checkpoint format {man.get('format')!r}")
    config = ModelConfig.from_dict(man["config"])
    if config.config_hash() != man.get("config_hash"):
        raise CheckpointError("config hash in manifest does not match its config; refusing to load")
    if expected_config is not None and expected_config.config_hash() != man["config_hash"]:
        raise CheckpointError("checkpoint was built for a different model config")
    try:
        payload = (path / "params.bin").read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint payload: {exc}") from exc
    expected = sum(e["nbytes"] for e in man["tensors"])
    if len(payload) != expected or len(payload) != man.get("payload_bytes", expected):
        raise CheckpointError(f"corrupt payload: {len(payload)} bytes, manifest expects {expected}")
    model = Model(config)
    known = {name for name, _, _ in model.state_tensors()}
    names = {e["name"] for e in man["tensors"]}
    if names - known:
        raise CheckpointError(f"unknown tensors in checkpoint: {sorted(names - known)}")
    if known - names:
        raise CheckpointError(f"checkpoint lacks tensors: {sorted(known - names)}")
    for e in man["tensors"]:
        arr = np.frombuffer(payload, dtype="<f4", count=int(np.prod(e["shape"], dtype=np.int64)), offset=e["offset"])
        arr = arr.reshape(e["shape"]).astype(np.float32)
        name = e["name"]
        if e["kind"] == "param":
            if model.params[name].shape != arr.shape:
                raise CheckpointError(f"shape mismatch for {name}: {arr.shape} vs {model.params[name].shape}")
            model.params[name].data = arr
        else:
            layer, stat = name.rsplit(".", 1)
            setattr(model.bn[layer], stat, arr)
    return model
