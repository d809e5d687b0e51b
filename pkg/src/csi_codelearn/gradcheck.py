"""Central-difference checks for every differentiable operation."""
from __future__ import annotations

from typing import Callable

import numpy as np

from .nn import (
    Layer,
    LayerSpec,
    SoftmaxCrossEntropy,
    binreg_grad,
    binreg_value,
    build_layer,
)


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """Worst entrywise |a - n| / max(|a|, |n|, floor).

    The floor keeps entries whose true derivative is zero from dividing
    rounding noise by zero.
    """
    a, n = np.ravel(analytic), np.ravel(numeric)
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))


def numeric_grad(f: Callable[[], float], x: np.ndarray, h: float = 1e-3) -> np.ndarray:
    """Central differences of scalar ``f`` w.r.t. ``x``, perturbed in place."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def _probe_input(spec: LayerSpec, rng: np.random.Generator, batch: int) -> np.ndarray:
    a = spec.args
    if spec.kind == "optical-dense":
        return rng.uniform(0.0, 1.0, (batch, a["bands"]))
    if spec.kind == "conv1d":
        return rng.standard_normal((batch, a.get("width", 7), a["in_channels"]))
    if spec.kind == "batchnorm":
        return rng.standard_normal((batch, a.get("width", 5), a["channels"])) * 2.0 + 0.5
    if spec.kind == "dense":
        return rng.standard_normal((batch, a["in_features"]))
    if spec.kind == "softmax":
        return rng.standard_normal((batch, a["classes"])) * 2.0
    # relu / dropout: keep inputs clear of the kink at zero
    shape = (batch, a.get("features", 6))
    return rng.choice([-1.0, 1.0], shape) * rng.uniform(0.1, 1.0, shape)


def grad_check(spec: LayerSpec, seed: int = 0, h: float = 1e-3, batch: int = 4) -> float:
    """Max relative error between analytic and central-difference gradients.

    Every parameter and the input are checked. Layers are reduced to a scalar
    through a fixed random projection of their output, except ``softmax``
    which is checked as the fused cross-entropy loss. Batchnorm runs in
    training mode; dropout runs in training mode with its mask frozen.
    """
    rng = np.random.default_rng(seed)
    x = _probe_input(spec, rng, batch)

    if spec.kind == "softmax":
        head = SoftmaxCrossEntropy()
        targets = rng.integers(0, spec.args["classes"], batch)
        head.forward(x, targets)
        analytic = head.backward()
        numeric = numeric_grad(lambda: head.forward(x, targets), x, h)
        return relative_error(analytic, numeric)

    phi = None
    if spec.kind == "optical-dense":
        phi = rng.uniform(0.0, 1.0, (spec.args["shots"], spec.args["bands"]))
    layer: Layer = build_layer(spec, rng, phi)
    # perturb params away from their init so e.g. zero biases and unit gains are generic
    for name, p in layer.params.items():
        p += 0.1 * rng.standard_normal(p.shape)
    training = spec.kind in ("batchnorm", "dropout")
    if spec.kind == "dropout":
        layer.freeze_mask = True  # type: ignore[attr-defined]
    out = layer.forward(x, training)
    proj = rng.standard_normal(out.shape)

    def f() -> float:
        return float(np.sum(layer.forward(x, training) * proj))

    f()
    dx = layer.backward(proj)
    worst = relative_error(dx, numeric_grad(f, x, h))
    analytic = {k: v.copy() for k, v in layer.grads.items()}
    for name, p in layer.params.items():
        worst = max(worst, relative_error(analytic[name], numeric_grad(f, p, h)))
    return worst


def binreg_check(phi: np.ndarray, h: float = 1e-3) -> float:
    phi = np.array(phi, dtype=np.float64)
    return relative_error(binreg_grad(phi), numeric_grad(lambda: binreg_value(phi), phi, h))


def default_specs() -> list[LayerSpec]:
    """One small instance of every differentiable layer kind."""
    return [
        LayerSpec("optical-dense", {"shots": 4, "bands": 8}),
        LayerSpec("conv1d", {"in_channels": 2, "out_channels": 3, "kernel": 3}),
        LayerSpec("batchnorm", {"channels": 3, "eps": 1e-5, "momentum": 0.9}),
        LayerSpec("relu"),
        LayerSpec("dropout", {"rate": 0.2}),
        LayerSpec("dense", {"in_features": 6, "units": 4}),
        LayerSpec("softmax", {"classes": 3}),
    ]
