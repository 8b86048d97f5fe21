"""The two CNN trunks (5-layer proposed, 9-layer Kong-style) and the shared head.

A model is a flat ordered mapping of named tensors. Parameter names:

    block{b}.conv{c}.weight / .bias
    block{b}.bn{c}.gain / .bias / .running_mean / .running_var
    head.weight / head.bias
    norm.mean / norm.std        (per-mel-bin input standardization)
"""

from dataclasses import dataclass, field

import numpy as np

from . import layers

N_MELS = 64
CHANNELS = (64, 128, 256, 512)
POOLED_BLOCKS = (1, 2, 3)
TIME_REDUCTION = 8

ARCHS = {
    "proposed5": {"kernel": 5, "convs": 1},
    "kong9": {"kernel": 3, "convs": 2},
}
ARCH_TAGS = {"proposed5": 0, "kong9": 1}


@dataclass
class ModelParams:
    arch: str
    n_classes: int
    tensors: dict = field(default_factory=dict)

    def trainable(self):
        """Names of tensors updated by the optimizer."""
        return [n for n in self.tensors
                if not n.startswith("norm.") and not n.endswith(("running_mean", "running_var"))]

    def copy(self):
        return ModelParams(self.arch, self.n_classes,
                           {k: v.copy() for k, v in self.tensors.items()})


def _layer_plan(arch):
    layout = ARCHS[arch]
    cin = 1
    plan = []
    for b, cout in enumerate(CHANNELS, start=1):
        for c in range(1, layout["convs"] + 1):
            plan.append((b, c, cin, cout))
            cin = cout
    return plan


def expected_shapes(arch, n_classes):
    """Ordered name -> shape map for an architecture."""
    if arch not in ARCHS:
        raise ValueError(f"unknown architecture {arch!r}")
    k = ARCHS[arch]["kernel"]
    shapes = {}
    for b, c, cin, cout in _layer_plan(arch):
        shapes[f"block{b}.conv{c}.weight"] = (cout, cin, k, k)
        shapes[f"block{b}.conv{c}.bias"] = (cout,)
        for suffix in ("gain", "bias", "running_mean", "running_var"):
            shapes[f"block{b}.bn{c}.{suffix}"] = (cout,)
    shapes["head.weight"] = (CHANNELS[-1], n_classes)
    shapes["head.bias"] = (n_classes,)
    shapes["norm.mean"] = (N_MELS,)
    shapes["norm.std"] = (N_MELS,)
    return shapes


def build_model(arch, n_classes, seed, dtype=np.float32):
    """Kaiming-uniform weights, zero biases, BN gain 1 / bias 0, identity norm."""
    if n_classes < 1:
        raise ValueError("need at least one class")
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in expected_shapes(arch, n_classes).items():
        if name.endswith(".weight"):
            fan_in = int(np.prod(shape[1:])) if len(shape) == 4 else shape[0]
            bound = np.sqrt(6.0 / fan_in)
            t = rng.uniform(-bound, bound, size=shape)
        elif name.endswith(("gain", "running_var", "norm.std")):
            t = np.ones(shape)
        else:
            t = np.zeros(shape)
        tensors[name] = t.astype(dtype)
    return ModelParams(arch, n_classes, tensors)


def parameter_count(model, trainable_only=True):
    names = model.trainable() if trainable_only else list(model.tensors)
    return sum(model.tensors[n].size for n in names)


def output_frames(n_frames):
    return n_frames // 2 // 2 // 2


def standardize(model, logmel):
    t = model.tensors
    return (logmel - t["norm.mean"]) / t["norm.std"]


def forward(model, x, train=False, standardize_input=True, bn_momentum=0.9):
    """Run the network on a batch of log-mel patches.

    x: (B, T, 64) or (T, 64). Returns ``(posteriors, cache)`` with
    posteriors of shape (B, T // 8, K) (batch axis dropped for 2-D input).
    ``bn_momentum`` only matters in train mode, where it weights the old
    running statistics against the batch statistics.
    """
    x = np.asarray(x)
    squeeze = x.ndim == 2
    if squeeze:
        x = x[None]
    if x.ndim != 3 or x.shape[2] != N_MELS:
        raise ValueError(f"expected (batch, frames, {N_MELS}) input, got {x.shape}")
    t = model.tensors
    dtype = t["head.weight"].dtype
    if standardize_input:
        x = standardize(model, x)
    h = x.astype(dtype, copy=False)[..., None]

    k = ARCHS[model.arch]["kernel"]
    caches = []
    for b, c, _, _ in _layer_plan(model.arch):
        pre = f"block{b}"
        h, cc = layers.conv2d_forward(h, t[f"{pre}.conv{c}.weight"], t[f"{pre}.conv{c}.bias"], k // 2)
        h, bc = layers.batchnorm_forward(
            h, t[f"{pre}.bn{c}.gain"], t[f"{pre}.bn{c}.bias"],
            t[f"{pre}.bn{c}.running_mean"], t[f"{pre}.bn{c}.running_var"], train,
            momentum=bn_momentum)
        h, rc = layers.relu_forward(h)
        pc = None
        if c == ARCHS[model.arch]["convs"] and b in POOLED_BLOCKS:
            h, pc = layers.maxpool2x2_forward(h)
        caches.append((b, c, cc, bc, rc, pc))

    h, fshape = layers.freq_mean_forward(h)
    logits, dc = layers.dense_forward(h, t["head.weight"], t["head.bias"])
    post = layers.sigmoid(logits)
    cache = {"layers": caches, "freq_shape": fshape, "dense": dc}
    return (post[0] if squeeze else post), cache


def backward(model, cache, dlogits):
    """Gradients of every trainable tensor given d(loss)/d(logits)."""
    grads = {}
    dh, grads["head.weight"], grads["head.bias"] = layers.dense_backward(dlogits, cache["dense"])
    dh = layers.freq_mean_backward(dh, cache["freq_shape"])
    for idx, (b, c, cc, bc, rc, pc) in enumerate(reversed(cache["layers"])):
        pre = f"block{b}"
        if pc is not None:
            dh = layers.maxpool2x2_backward(dh, pc)
        dh = layers.relu_backward(dh, rc)
        dh, grads[f"{pre}.bn{c}.gain"], grads[f"{pre}.bn{c}.bias"] = layers.batchnorm_backward(dh, bc)
        first = idx == len(cache["layers"]) - 1
        dh, grads[f"{pre}.conv{c}.weight"], grads[f"{pre}.conv{c}.bias"] = \
            layers.conv2d_backward(dh, cc, need_dx=not first)
    return grads


def clip_probabilities(posteriors):
    """Clip-level class probability = max over frames."""
    return np.asarray(posteriors).max(axis=-2)
