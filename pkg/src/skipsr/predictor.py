"""Skippability predictor: a four-layer 3-D conv net on codec latents.

Forward and backward passes are written out by hand (im2col convolution) so
the gradients can be checked against finite differences.  The network maps a
latent of shape ``(t, h, w, C)`` to logits of shape ``(t, ceil(h/2),
ceil(w/2))``, one per ``4x16x16`` pixel patch.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .codec import DEFAULT_KEEP, LatentTensor, encode
from .oracle import DEFAULT_FACTOR, DEFAULT_TAU, SkipMask, oracle_mask
from .resample import down_up
from .vidio import PATCH_SHAPE, reflect_pad
from .weights import load_weights, save_weights

KERNEL = 3
N_LAYERS = 4
STRIDES = ((1, 2, 2), (1, 1, 1), (1, 1, 1), (1, 1, 1))


@dataclass
class PredictorNet:
    c_in: int
    width: int = 64
    seed: int = 0
    params: dict[str, np.ndarray] = field(default_factory=dict, repr=False)
    # fixed per-channel input standardization; not trained
    in_mean: np.ndarray | None = field(default=None, repr=False)
    in_std: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.in_mean is None:
            self.in_mean = np.zeros(self.c_in)
        if self.in_std is None:
            self.in_std = np.ones(self.c_in)

    @classmethod
    def init(cls, c_in: int, width: int = 64, seed: int = 0, dtype=np.float64):
        """He-uniform kernels, zero biases."""
        rng = np.random.default_rng(seed)
        chans = [c_in, width, width, width, 1]
        params = {}
        for i in range(N_LAYERS):
            fan_in = KERNEL ** 3 * chans[i]
            bound = np.sqrt(6.0 / fan_in)
            shape = (KERNEL, KERNEL, KERNEL, chans[i], chans[i + 1])
            params[f"w{i + 1}"] = rng.uniform(-bound, bound, size=shape).astype(dtype)
            params[f"b{i + 1}"] = np.zeros(chans[i + 1], dtype=dtype)
        return cls(c_in, width, seed, params)

    def copy(self) -> "PredictorNet":
        return copy.deepcopy(self)

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def save(self, path) -> None:
        manifest = {
            "kind": "predictor",
            "architecture": {
                "layers": N_LAYERS, "kernel": KERNEL, "strides": STRIDES,
                "activation": "relu",
            },
            "c_in": self.c_in, "width": self.width, "seed": self.seed,
        }
        save_weights(path, manifest, {**self.params, "in_mean": self.in_mean,
                                      "in_std": self.in_std})

    @classmethod
    def load(cls, path, dtype=np.float64) -> "PredictorNet":
        manifest, tensors = load_weights(path, dtype)
        if manifest.get("kind") != "predictor":
            raise ValueError(f"{path} is not a predictor weights file")
        mean, std = tensors.pop("in_mean", None), tensors.pop("in_std", None)
        return cls(manifest["c_in"], manifest["width"], manifest["seed"], tensors, mean, std)

    def fit_input_norm(self, latents) -> None:
        """Set the input standardization from the channel statistics of ``latents``."""
        x = np.concatenate([_as_batch(l)[0].reshape(-1, self.c_in) for l in latents])
        self.in_mean = x.mean(axis=0)
        self.in_std = x.std(axis=0) + 1e-6


# --------------------------------------------------------------------------
# convolution


def _out_size(n: int, stride: int) -> int:
    return (n - 1) // stride + 1  # kernel 3, pad 1


def _im2col(x: np.ndarray, stride) -> np.ndarray:
    B, T, H, W, C = x.shape
    st, sh, sw = stride
    To, Ho, Wo = _out_size(T, st), _out_size(H, sh), _out_size(W, sw)
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (1, 1), (0, 0)))
    cols = np.empty((B, To, Ho, Wo, KERNEL ** 3, C), dtype=x.dtype)
    k = 0
    for a in range(KERNEL):
        for b in range(KERNEL):
            for c in range(KERNEL):
                cols[:, :, :, :, k] = xp[:, a:a + st * To:st, b:b + sh * Ho:sh, c:c + sw * Wo:sw]
                k += 1
    return cols


def _col2im(dcols: np.ndarray, x_shape, stride) -> np.ndarray:
    B, T, H, W, C = x_shape
    st, sh, sw = stride
    _, To, Ho, Wo, _, _ = dcols.shape
    dxp = np.zeros((B, T + 2, H + 2, W + 2, C), dtype=dcols.dtype)
    k = 0
    for a in range(KERNEL):
        for b in range(KERNEL):
            for c in range(KERNEL):
                dxp[:, a:a + st * To:st, b:b + sh * Ho:sh, c:c + sw * Wo:sw] += dcols[:, :, :, :, k]
                k += 1
    return dxp[:, 1:-1, 1:-1, 1:-1]


def conv3d(x, w, b, stride):
    """Zero-padded 3x3x3 convolution; returns output and the im2col buffer."""
    cols = _im2col(x, stride)
    out = cols.reshape(-1, w[..., 0].size) @ w.reshape(-1, w.shape[-1]) + b
    return out.reshape(*cols.shape[:4], w.shape[-1]), cols


def _as_batch(x) -> tuple[np.ndarray, bool]:
    if isinstance(x, LatentTensor):
        x = x.coeffs
    x = np.asarray(x)
    if x.ndim == 4:
        return x[None], True
    if x.ndim == 5:
        return x, False
    raise ValueError(f"expected (t, h, w, C) or (B, t, h, w, C) input, got {x.shape}")


def _forward(net: PredictorNet, x: np.ndarray):
    if x.shape[-1] != net.c_in:
        raise ValueError(f"input has {x.shape[-1]} channels, net expects {net.c_in}")
    caches = []
    dtype = net.params["w1"].dtype
    h = ((x - net.in_mean) / net.in_std).astype(dtype, copy=False)
    for i in range(N_LAYERS):
        w, b = net.params[f"w{i + 1}"], net.params[f"b{i + 1}"]
        z, cols = conv3d(h, w, b, STRIDES[i])
        caches.append((h.shape, cols, z))
        h = np.maximum(z, 0.0) if i < N_LAYERS - 1 else z
    return h[..., 0], caches


def forward(net: PredictorNet, latent) -> np.ndarray:
    """Logit grid ``(t, ceil(h/2), ceil(w/2))`` (batched input keeps its batch axis)."""
    x, single = _as_batch(latent)
    logits, _ = _forward(net, x)
    return logits[0] if single else logits


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def softplus(z):
    return np.logaddexp(0.0, z)


def bce_with_logits(z, y, pos_weight: float = 1.0) -> tuple[float, np.ndarray]:
    """Mean weighted BCE and its gradient with respect to the logits."""
    n = z.size
    loss = pos_weight * y * softplus(-z) + (1.0 - y) * softplus(z)
    s = sigmoid(z)
    dz = (pos_weight * y * (s - 1.0) + (1.0 - y) * s) / n
    return float(loss.sum() / n), dz


def backward(net: PredictorNet, latent, target, pos_weight: float = 1.0):
    """Return ``(loss, grads)`` with ``grads`` keyed like ``net.params``."""
    x, single = _as_batch(latent)
    target = np.asarray(target, dtype=np.float64)
    if single:
        target = target[None]
    logits, caches = _forward(net, x)
    if target.shape != logits.shape:
        raise ValueError(f"target shape {target.shape} != logit shape {logits.shape}")
    loss, dz = bce_with_logits(logits, target, pos_weight)
    grads = {}
    d = dz[..., None].astype(logits.dtype)
    for i in reversed(range(N_LAYERS)):
        in_shape, cols, z = caches[i]
        if i < N_LAYERS - 1:
            d = d * (z > 0)
        w = net.params[f"w{i + 1}"]
        d2 = d.reshape(-1, d.shape[-1])
        grads[f"w{i + 1}"] = (cols.reshape(d2.shape[0], -1).T @ d2).reshape(w.shape)
        grads[f"b{i + 1}"] = d2.sum(axis=0)
        if i > 0:
            dcols = (d2 @ w.reshape(-1, w.shape[-1]).T).reshape(cols.shape)
            d = _col2im(dcols, in_shape, STRIDES[i])
    return loss, grads


# --------------------------------------------------------------------------
# training


@dataclass
class TrainConfig:
    lr: float = 1e-3
    steps: int = 500
    batch: int = 8
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    pos_weight: float = 1.0
    normalize: bool = True
    tau: float = DEFAULT_TAU
    factor: int = DEFAULT_FACTOR
    keep: int = DEFAULT_KEEP

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("lr must be non-negative")


def _stack_batch(dataset, idx):
    xs = [np.asarray(dataset[i][0].coeffs if isinstance(dataset[i][0], LatentTensor)
                     else dataset[i][0]) for i in idx]
    ys = [np.asarray(dataset[i][1], dtype=np.float64) for i in idx]
    if len({x.shape for x in xs}) == 1:
        return [(np.stack(xs), np.stack(ys))]
    return [(x, y) for x, y in zip(xs, ys)]


def train(net: PredictorNet, dataset, cfg: TrainConfig) -> tuple[PredictorNet, list[float]]:
    """Adam on weighted BCE; ``dataset`` is a list of ``(latent, label grid)``.

    The input net is not modified.  Batch order comes from ``cfg.seed`` only.
    With ``cfg.normalize`` the input standardization is refit on the dataset
    before the first step.
    """
    if not dataset:
        raise ValueError("training set is empty")
    net = net.copy()
    if cfg.normalize:
        net.fit_input_norm([x for x, _ in dataset])
    rng = np.random.default_rng(cfg.seed)
    m = {k: np.zeros_like(v) for k, v in net.params.items()}
    v = {k: np.zeros_like(p) for k, p in net.params.items()}
    losses = []
    batch = min(cfg.batch, len(dataset))
    order, cursor = rng.permutation(len(dataset)), 0
    for step in range(1, cfg.steps + 1):
        # shuffled epochs; an epoch tail too short for a batch is dropped
        if cursor + batch > len(dataset):
            order, cursor = rng.permutation(len(dataset)), 0
        idx = np.sort(order[cursor:cursor + batch])
        cursor += batch
        groups = _stack_batch(dataset, idx)
        total = {k: np.zeros_like(p) for k, p in net.params.items()}
        step_loss = 0.0
        for xb, yb in groups:
            weight = xb.shape[0] / len(idx) if xb.ndim == 5 else 1.0 / len(idx)
            loss, grads = backward(net, xb, yb, cfg.pos_weight)
            step_loss += weight * loss
            for k in total:
                total[k] += weight * grads[k]
        losses.append(step_loss)
        c1 = 1.0 - cfg.beta1 ** step
        c2 = 1.0 - cfg.beta2 ** step
        for k, p in net.params.items():
            g = total[k]
            m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g
            v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g * g
            p -= cfg.lr * (m[k] / c1) / (np.sqrt(v[k] / c2) + cfg.eps)
    return net, losses


def predict_mask(net: PredictorNet, latent, threshold: float = 0.5,
                 tau: float = DEFAULT_TAU, factor: int = DEFAULT_FACTOR) -> SkipMask:
    """Threshold the predicted skip probability; higher thresholds skip less."""
    return SkipMask(sigmoid(forward(net, latent)) >= threshold, tau=tau, factor=factor)


# --------------------------------------------------------------------------
# data


def predictor_input(lr_up: np.ndarray, keep: int = DEFAULT_KEEP) -> LatentTensor:
    """Encode an upsampled low-resolution video; this is what the net sees."""
    return encode(lr_up, keep)


def training_pair(video: np.ndarray, tau: float = DEFAULT_TAU, factor: int = DEFAULT_FACTOR,
                  keep: int = DEFAULT_KEEP) -> tuple[LatentTensor, np.ndarray]:
    """``(encode(U(D(I))), oracle_mask(I))`` for one high-resolution clip.

    The clip is reflect-padded to whole patches first so that the resampling
    factor always divides the frame and all grids line up.
    """
    video, _ = reflect_pad(np.asarray(video, dtype=np.float64), PATCH_SHAPE)
    x = predictor_input(down_up(video, factor), keep)
    return x, oracle_mask(video, tau, factor).bits
