"""Small reverse-mode layer stack: optical layer plus a 1-D conv classifier.

Every layer keeps the tensors it needs from ``forward`` and returns the
input gradient from ``backward``, filling ``grads`` for its parameters.
Arrays are float64 numpy arrays; batches come first.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .sensing import CONTINUOUS, CodingPatternSet, coded_integration

MODEL_MAGIC = "MDL1"

LAYER_KINDS = ("optical-dense", "conv1d", "batchnorm", "relu", "dropout", "dense", "softmax")


class Layer:
    kind = ""
    trainable = True

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dout: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def state_names(self) -> list[str]:
        """Arrays saved in checkpoints, in declaration order."""
        return list(self.params) + list(self.buffers)

    def state(self) -> dict[str, np.ndarray]:
        return {**self.params, **self.buffers}

    def _require_cache(self, cache):
        if cache is None:
            raise RuntimeError(f"{self.kind}: backward called before forward")
        return cache


class OpticalDense(Layer):
    """Coded-aperture sensing as a bias-free dense layer, y = phi @ f."""

    kind = "optical-dense"

    def __init__(self, phi: np.ndarray, trainable: bool = True, noise_std: float = 0.0,
                 rng: np.random.Generator | None = None):
        super().__init__()
        self.params["phi"] = np.array(phi, dtype=np.float64)
        self.trainable = trainable
        self.noise_std = noise_std
        self.rng = rng
        self._x = None

    @property
    def S(self) -> int:
        return self.params["phi"].shape[0]

    @property
    def L(self) -> int:
        return self.params["phi"].shape[1]

    def forward(self, x, training=False):
        if x.ndim != 2 or x.shape[1] != self.L:
            raise ValueError(f"optical layer expects (batch, {self.L}) input, got {x.shape}")
        self._x = x
        y = coded_integration(self.params["phi"], x.T).T
        if training and self.noise_std > 0:
            y = y + self.noise_std * self.rng.standard_normal(y.shape)
        return y

    def backward(self, dout):
        x = self._require_cache(self._x)
        if dout.shape != (x.shape[0], self.S):
            raise ValueError(f"upstream gradient has shape {dout.shape}, expected {(x.shape[0], self.S)}")
        self.grads["phi"] = dout.T @ x
        return dout @ self.params["phi"]


class Conv1D(Layer):
    """Same-padded 1-D convolution over the measurement axis.

    Channels-last: (B, W, Cin) -> (B, W, Cout); a 2-D input is one channel.
    Weights are stored as (Cout, Cin, kernel).
    """

    kind = "conv1d"

    def __init__(self, in_channels: int, out_channels: int, kernel: int,
                 rng: np.random.Generator):
        super().__init__()
        if kernel % 2 == 0:
            raise ValueError("same padding needs an odd kernel width")
        self.in_channels, self.out_channels, self.kernel = in_channels, out_channels, kernel
        fan_in = in_channels * kernel
        self.params["W"] = rng.standard_normal((out_channels, in_channels, kernel)) * np.sqrt(2.0 / fan_in)
        self.params["b"] = np.zeros(out_channels)
        self._cache = None

    def _wmat(self) -> np.ndarray:
        # (k * Cin, Cout), matching the column layout built in forward
        return self.params["W"].transpose(2, 1, 0).reshape(-1, self.out_channels)

    def forward(self, x, training=False):
        in_shape = x.shape
        if x.ndim == 2:
            x = x[:, :, None]
        B, W, cin = x.shape
        if cin != self.in_channels:
            raise ValueError(f"conv1d expects {self.in_channels} input channels, got {cin}")
        cols = self._columns(x)
        out = cols @ self._wmat() + self.params["b"]
        self._cache = (cols, (B, W, cin), in_shape)
        return out.reshape(B, W, self.out_channels)

    def _columns(self, x: np.ndarray) -> np.ndarray:
        B, W, cin = x.shape
        k, p = self.kernel, self.kernel // 2
        xp = np.zeros((B, W + 2 * p, cin))
        xp[:, p:p + W] = x
        return np.concatenate([xp[:, j:j + W] for j in range(k)], axis=2).reshape(B * W, k * cin)

    def folded(self, x: np.ndarray, bn: "BatchNorm") -> np.ndarray:
        """Inference-mode conv followed by ``bn``, with the normalization folded into the weights."""
        if x.ndim == 2:
            x = x[:, :, None]
        B, W, _ = x.shape
        scale = bn.params["gamma"] / np.sqrt(bn.buffers["running_var"] + bn.eps)
        Wm = self._wmat() * scale
        b = (self.params["b"] - bn.buffers["running_mean"]) * scale + bn.params["beta"]
        out = self._columns(x) @ Wm
        out += b
        return out.reshape(B, W, self.out_channels)

    def backward(self, dout):
        cols, (B, W, cin), in_shape = self._require_cache(self._cache)
        k, p = self.kernel, self.kernel // 2
        d2 = dout.reshape(B * W, self.out_channels)
        gW = cols.T @ d2                                    # (k * Cin, Cout)
        self.grads["W"] = gW.reshape(k, cin, self.out_channels).transpose(2, 1, 0)
        self.grads["b"] = d2.sum(axis=0)
        dcols = (d2 @ self._wmat().T).reshape(B, W, k, cin)
        dxp = np.zeros((B, W + 2 * p, cin))
        for j in range(k):
            dxp[:, j:j + W] += dcols[:, :, j]
        return dxp[:, p:p + W].reshape(in_shape)


class BatchNorm(Layer):
    """Per-channel batch normalization over every axis but the last (channels)."""

    kind = "batchnorm"

    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.9):
        super().__init__()
        self.channels, self.eps, self.momentum = channels, eps, momentum
        self.params["gamma"] = np.ones(channels)
        self.params["beta"] = np.zeros(channels)
        self.buffers["running_mean"] = np.zeros(channels)
        self.buffers["running_var"] = np.ones(channels)
        self._cache = None

    def forward(self, x, training=False):
        if x.shape[-1] != self.channels:
            raise ValueError(f"batchnorm expects {self.channels} channels, got {x.shape[-1]}")
        axes = tuple(range(x.ndim - 1))
        if training:
            n = x.size // self.channels
            if x.shape[0] < 2:
                raise ValueError("batchnorm needs a batch of at least 2 in training mode")
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            m = self.momentum
            self.buffers["running_mean"] = m * self.buffers["running_mean"] + (1 - m) * mean
            self.buffers["running_var"] = m * self.buffers["running_var"] + (1 - m) * var * n / (n - 1)
        else:
            mean, var = self.buffers["running_mean"], self.buffers["running_var"]
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean) * inv_std
        self._cache = (xhat, inv_std, training, axes)
        return self.params["gamma"] * xhat + self.params["beta"]

    def backward(self, dout):
        xhat, inv_std, training, axes = self._require_cache(self._cache)
        self.grads["gamma"] = (dout * xhat).sum(axis=axes)
        self.grads["beta"] = dout.sum(axis=axes)
        dxhat = dout * self.params["gamma"]
        if not training:
            return dxhat * inv_std
        n = dout.size // self.channels
        s1 = dxhat.sum(axis=axes)
        s2 = (dxhat * xhat).sum(axis=axes)
        return inv_std / n * (n * dxhat - s1 - xhat * s2)


class ReLU(Layer):
    kind = "relu"
    trainable = False

    def __init__(self):
        super().__init__()
        self._mask = None

    def forward(self, x, training=False):
        self._mask = x > 0
        # maximum (unlike where) lets NaN through, so divergence stays visible
        return np.maximum(x, 0.0)

    def backward(self, dout):
        return dout * self._require_cache(self._mask)


class Dropout(Layer):
    """Inverted dropout; identity outside training.

    With ``freeze_mask`` set, the last drawn mask is reused, which makes the
    layer a fixed linear map for gradient checking.
    """

    kind = "dropout"
    trainable = False

    def __init__(self, rate: float, rng: np.random.Generator):
        super().__init__()
        if not 0.0 <= rate < 1.0:
            raise ValueError("dropout rate must lie in [0, 1)")
        self.rate = rate
        self.rng = rng
        self.freeze_mask = False
        self._mask = None

    def forward(self, x, training=False):
        if not training or self.rate == 0.0:
            self._mask = np.ones_like(x)
            return x
        if not (self.freeze_mask and self._mask is not None and self._mask.shape == x.shape):
            self._mask = (self.rng.random(x.shape) >= self.rate) / (1.0 - self.rate)
        return x * self._mask

    def backward(self, dout):
        return dout * self._require_cache(self._mask)


class Dense(Layer):
    """Fully connected layer; flattens everything after the batch axis."""

    kind = "dense"

    def __init__(self, in_features: int, units: int, rng: np.random.Generator):
        super().__init__()
        self.in_features, self.units = in_features, units
        self.params["W"] = rng.standard_normal((in_features, units)) * np.sqrt(2.0 / in_features)
        self.params["b"] = np.zeros(units)
        self._cache = None

    def forward(self, x, training=False):
        flat = x.reshape(x.shape[0], -1)
        if flat.shape[1] != self.in_features:
            raise ValueError(f"dense expects {self.in_features} inputs, got {flat.shape[1]}")
        self._cache = (flat, x.shape)
        return flat @ self.params["W"] + self.params["b"]

    def backward(self, dout):
        flat, shape = self._require_cache(self._cache)
        self.grads["W"] = flat.T @ dout
        self.grads["b"] = dout.sum(axis=0)
        return (dout @ self.params["W"].T).reshape(shape)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


class SoftmaxCrossEntropy:
    """Softmax fused with mean categorical cross-entropy."""

    kind = "softmax"

    def __init__(self):
        self._cache = None

    def forward(self, logits: np.ndarray, targets: np.ndarray) -> float:
        z = logits - logits.max(axis=1, keepdims=True)
        logsum = np.log(np.exp(z).sum(axis=1))
        B = logits.shape[0]
        loss = float(np.mean(logsum - z[np.arange(B), targets]))
        self._cache = (np.exp(z - logsum[:, None]), targets)
        return loss

    def backward(self) -> np.ndarray:
        if self._cache is None:
            raise RuntimeError("softmax: backward called before forward")
        probs, targets = self._cache
        d = probs.copy()
        d[np.arange(len(targets)), targets] -= 1.0
        return d / len(targets)


# ---------------------------------------------------------------- regularizer


def binreg_value(phi: np.ndarray) -> float:
    """Mean of phi^2 (phi - 1)^2; zero exactly on {0, 1} entries."""
    phi = np.asarray(phi, dtype=np.float64)
    return float(np.mean(phi ** 2 * (phi - 1.0) ** 2))


def binreg_grad(phi: np.ndarray) -> np.ndarray:
    phi = np.asarray(phi, dtype=np.float64)
    return 2.0 * phi * (phi - 1.0) * (2.0 * phi - 1.0) / phi.size


# ---------------------------------------------------------------- model assembly


@dataclass
class LayerSpec:
    kind: str
    args: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")

    def header(self) -> str:
        parts = [self.kind] + [f"{k}={v}" for k, v in self.args.items()]
        return " ".join(parts)

    @classmethod
    def parse(cls, line: str) -> "LayerSpec":
        kind, *rest = line.split()
        args = {}
        for item in rest:
            k, v = item.split("=", 1)
            args[k] = float(v) if any(c in v for c in ".eE") else int(v)
        return cls(kind, args)


@dataclass
class ClassifierConfig:
    channels: tuple[int, ...] = (16, 32, 64)
    kernel: int = 3
    dropout: float = 0.2
    hidden: int = 128
    bn_eps: float = 1e-5
    bn_momentum: float = 0.9


def classifier_specs(S: int, L: int, n_classes: int,
                     cfg: ClassifierConfig | None = None) -> list[LayerSpec]:
    cfg = cfg or ClassifierConfig()
    specs = [LayerSpec("optical-dense", {"shots": S, "bands": L})]
    cin = 1
    for cout in cfg.channels:
        specs += [
            LayerSpec("conv1d", {"in_channels": cin, "out_channels": cout, "kernel": cfg.kernel}),
            LayerSpec("batchnorm", {"channels": cout, "eps": float(cfg.bn_eps),
                                    "momentum": float(cfg.bn_momentum)}),
            LayerSpec("relu"),
        ]
        cin = cout
    specs += [
        LayerSpec("dropout", {"rate": float(cfg.dropout)}),
        LayerSpec("dense", {"in_features": cin * S, "units": cfg.hidden}),
        LayerSpec("relu"),
        LayerSpec("dense", {"in_features": cfg.hidden, "units": n_classes}),
        LayerSpec("softmax", {"classes": n_classes}),
    ]
    return specs


def validate_specs(specs: list[LayerSpec]) -> None:
    """Check layer ordering and that each layer accepts its predecessor's output."""
    if not specs or specs[0].kind != "optical-dense":
        raise ValueError("the first layer must be the optical layer")
    if sum(s.kind == "optical-dense" for s in specs) != 1:
        raise ValueError("exactly one optical layer is allowed")
    shape: tuple[int, ...] = (specs[0].args["shots"],)
    for i, spec in enumerate(specs[1:], start=1):
        a = spec.args
        if spec.kind == "conv1d":
            cin = 1 if len(shape) == 1 else shape[-1]
            if cin != a["in_channels"]:
                raise ValueError(f"layer {i}: conv1d expects {a['in_channels']} channels, gets {cin}")
            shape = (shape[0], a["out_channels"])
        elif spec.kind == "batchnorm":
            if shape[-1] != a["channels"]:
                raise ValueError(f"layer {i}: batchnorm over {a['channels']} channels, gets {shape[-1]}")
        elif spec.kind == "dense":
            n = int(np.prod(shape))
            if n != a["in_features"]:
                raise ValueError(f"layer {i}: dense expects {a['in_features']} inputs, gets {n}")
            shape = (a["units"],)
        elif spec.kind == "softmax":
            if i != len(specs) - 1:
                raise ValueError("softmax must be the last layer")
            if len(shape) != 1 or shape[0] != a["classes"]:
                raise ValueError(f"softmax over {a['classes']} classes, gets shape {shape}")
    if specs[-1].kind != "softmax":
        raise ValueError("the last layer must be softmax")


def build_layer(spec: LayerSpec, rng: np.random.Generator, phi: np.ndarray | None = None,
                trainable_phi: bool = True) -> Layer:
    a = spec.args
    if spec.kind == "optical-dense":
        if phi is None:
            phi = rng.uniform(0.3, 0.7, size=(a["shots"], a["bands"]))
        return OpticalDense(phi, trainable=trainable_phi, rng=rng)
    if spec.kind == "conv1d":
        return Conv1D(a["in_channels"], a["out_channels"], a["kernel"], rng)
    if spec.kind == "batchnorm":
        return BatchNorm(a["channels"], a.get("eps", 1e-5), a.get("momentum", 0.9))
    if spec.kind == "relu":
        return ReLU()
    if spec.kind == "dropout":
        return Dropout(a["rate"], rng)
    if spec.kind == "dense":
        return Dense(a["in_features"], a["units"], rng)
    raise ValueError(f"{spec.kind} is not a standalone layer")


class Model:
    """Optical layer followed by the classifier; the loss head is fused softmax-xent."""

    def __init__(self, specs: list[LayerSpec], seed: int = 0, phi: np.ndarray | None = None,
                 trainable_phi: bool = True):
        validate_specs(specs)
        self.specs = specs
        self.rng = np.random.default_rng(seed)
        self.layers = [build_layer(s, self.rng, phi if i == 0 else None, trainable_phi)
                       for i, s in enumerate(specs[:-1])]
        self.head = SoftmaxCrossEntropy()

    @property
    def optical(self) -> OpticalDense:
        return self.layers[0]  # type: ignore[return-value]

    @property
    def phi(self) -> np.ndarray:
        return self.optical.params["phi"]

    @property
    def n_classes(self) -> int:
        return self.specs[-1].args["classes"]

    def patterns(self) -> CodingPatternSet:
        return CodingPatternSet(self.phi.copy(), CONTINUOUS)

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        if not training:
            return self._infer(x)
        for layer in self.layers:
            x = layer.forward(x, training)
        return x

    def recalibrate(self, x: np.ndarray) -> None:
        """Set every batchnorm's running statistics to its population statistics on ``x``.

        One training-mode pass with dropout off; parameters are untouched.
        """
        for layer in self.layers:
            if isinstance(layer, Dropout):
                continue
            if isinstance(layer, BatchNorm):
                momentum, layer.momentum = layer.momentum, 0.0
                try:
                    x = layer.forward(x, True)
                finally:
                    layer.momentum = momentum
            else:
                x = layer.forward(x, False)

    def _infer(self, x: np.ndarray) -> np.ndarray:
        """Inference pass without caches; conv+batchnorm pairs run folded."""
        layers = self.layers
        i = 0
        x = coded_integration(self.phi, x.T).T
        i = 1
        while i < len(layers):
            layer = layers[i]
            nxt = layers[i + 1] if i + 1 < len(layers) else None
            if isinstance(layer, Conv1D) and isinstance(nxt, BatchNorm):
                x = layer.folded(x, nxt)
                i += 2
                continue
            if isinstance(layer, ReLU):
                x = np.maximum(x, 0.0, out=x)
            elif isinstance(layer, Dense):
                x = x.reshape(x.shape[0], -1) @ layer.params["W"] + layer.params["b"]
            elif not isinstance(layer, Dropout):
                x = layer.forward(x, False)
            i += 1
        return x

    def backward(self, dlogits: np.ndarray) -> np.ndarray:
        d = dlogits
        for layer in reversed(self.layers):
            d = layer.backward(d)
        return d

    def loss_and_grads(self, x: np.ndarray, targets: np.ndarray) -> tuple[float, np.ndarray]:
        """Training-mode forward + backward. Returns the loss and the logits."""
        logits = self.forward(x, training=True)
        loss = self.head.forward(logits, targets)
        self.backward(self.head.backward())
        return loss, logits

    def trainable(self):
        """Yield (key, param, grad) for every trainable parameter."""
        for i, layer in enumerate(self.layers):
            if not layer.trainable:
                continue
            for name, p in layer.params.items():
                yield (i, name), p, layer.grads.get(name)

    def predict_proba(self, x: np.ndarray, phi: np.ndarray | None = None,
                      chunk: int = 256) -> np.ndarray:
        """Inference-mode class probabilities; ``phi`` temporarily replaces the patterns."""
        saved = self.optical.params["phi"]
        if phi is not None:
            phi = np.asarray(phi, dtype=np.float64)
            if phi.shape != saved.shape:
                raise ValueError(f"patterns of shape {phi.shape} do not fit a model built for {saved.shape}")
            self.optical.params["phi"] = phi
        try:
            out = [softmax(self.forward(x[i:i + chunk], training=False))
                   for i in range(0, x.shape[0], chunk)]
        finally:
            self.optical.params["phi"] = saved
        return np.concatenate(out) if out else np.empty((0, self.n_classes))

    def predict(self, x: np.ndarray, phi: np.ndarray | None = None) -> np.ndarray:
        # argmax returns the first maximum: ties go to the lowest class id
        return np.argmax(self.predict_proba(x, phi), axis=1)


# ---------------------------------------------------------------- checkpoints


def save_model(path: str | os.PathLike, model: Model) -> None:
    """MDL1: text header (one spec per line, ``END``) then raw little-endian float64 arrays."""
    lines = [f"{MODEL_MAGIC} {len(model.specs)}"] + [s.header() for s in model.specs] + ["END"]
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("ascii"))
        for layer in model.layers:
            for name in layer.state_names():
                fh.write(np.ascontiguousarray(layer.state()[name], dtype="<f8").tobytes())


def load_model(path: str | os.PathLike) -> Model:
    with open(path, "rb") as fh:
        first = fh.readline().decode("ascii").split()
        if len(first) != 2 or first[0] != MODEL_MAGIC:
            raise ValueError(f"not a {MODEL_MAGIC} file")
        specs = []
        while True:
            line = fh.readline().decode("ascii").strip()
            if line == "END":
                break
            if not line:
                raise ValueError(f"truncated {MODEL_MAGIC} header")
            specs.append(LayerSpec.parse(line))
        if len(specs) != int(first[1]):
            raise ValueError(f"{MODEL_MAGIC} header declares {first[1]} layers, found {len(specs)}")
        model = Model(specs)
        for layer in model.layers:
            for name in layer.state_names():
                ref = layer.state()[name]
                raw = fh.read(ref.size * 8)
                if len(raw) != ref.size * 8:
                    raise ValueError(f"{MODEL_MAGIC} payload ends early in {layer.kind}.{name}")
                arr = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(ref.shape)
                if name in layer.params:
                    layer.params[name] = arr
                else:
                    layer.buffers[name] = arr
        if fh.read(1):
            raise ValueError(f"{MODEL_MAGIC} payload has trailing bytes")
    return model
