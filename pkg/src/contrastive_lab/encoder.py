"""Small MLP encoder with final L2 normalization and SGD-momentum training.

The encoder is a stack of linear layers with ReLU between them and an exact
normalization layer on top, so every output lands on the unit sphere.
Backpropagation is hand-rolled in float64, including the normalization
Jacobian (I - zz^T)/||v||; this is what lets the gradient checks pass at
1e-4 relative tolerance.  All randomness flows through explicit
``numpy.random.Generator`` instances, making training bit-reproducible.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import NearZeroNorm
from .geometry import NORM_EPS
from .losses import BatchViews, LossBreakdown, LossParams, loss_by_name, loss_grad_wrt_reps
from .synthdata import AugmentationSpec, augment_batch


@dataclass
class EncoderConfig:
    """Layer widths input -> hidden... -> output, ReLU on all but the last."""

    layer_dims: tuple[int, ...]
    seed: int = 0

    def __post_init__(self):
        self.layer_dims = tuple(int(d) for d in self.layer_dims)
        if len(self.layer_dims) < 2:
            raise ValueError("need at least input and output dims")
        if any(d <= 0 for d in self.layer_dims):
            raise ValueError(f"layer dims must be positive, got {self.layer_dims}")


@dataclass
class OptimizerConfig:
    """SGD hyperparameters; defaults follow the momentum-0.9 / lr-0.1 /
    weight-decay-1e-4 recipe with cosine decay applied per epoch."""

    learning_rate: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-4
    epochs: int = 200

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")


@dataclass
class MlpParams:
    """Weights, biases and momentum buffers, one entry per linear layer."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    vel_w: list[np.ndarray] = field(default_factory=list)
    vel_b: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if not self.vel_w:
            self.vel_w = [np.zeros_like(w) for w in self.weights]
        if not self.vel_b:
            self.vel_b = [np.zeros_like(b) for b in self.biases]

    @property
    def layer_dims(self) -> tuple[int, ...]:
        return tuple([self.weights[0].shape[0]] + [w.shape[1] for w in self.weights])

    def copy(self) -> "MlpParams":
        return MlpParams(
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            vel_w=[v.copy() for v in self.vel_w],
            vel_b=[v.copy() for v in self.vel_b],
        )


def init_params(config: EncoderConfig) -> MlpParams:
    """He-style uniform fan-in initialization, biases zero, from the seed."""
    rng = np.random.default_rng(config.seed)
    weights, biases = [], []
    dims = config.layer_dims
    for d_in, d_out in zip(dims[:-1], dims[1:]):
        bound = np.sqrt(6.0 / d_in)
        weights.append(rng.uniform(-bound, bound, size=(d_in, d_out)))
        biases.append(np.zeros(d_out))
    return MlpParams(weights=weights, biases=biases)


def forward_batch(params: MlpParams, x: np.ndarray) -> tuple[np.ndarray, dict]:
    """Forward a (B, d_in) batch; returns unit-norm outputs and the cache
    needed for exact backprop (pre-activations and the pre-norm output)."""
    h = np.asarray(x, dtype=np.float64)
    if h.ndim == 1:
        h = h[None, :]
    pre_acts = []
    hiddens = [h]
    n_layers = len(params.weights)
    for l, (w, b) in enumerate(zip(params.weights, params.biases)):
        a = h @ w + b
        pre_acts.append(a)
        h = np.maximum(a, 0.0) if l < n_layers - 1 else a
        hiddens.append(h)
    norms = np.sqrt(np.einsum("ij,ij->i", h, h))
    if np.any(norms < NORM_EPS):
        raise NearZeroNorm("pre-normalization encoder output collapsed")
    z = h / norms[:, None]
    cache = {"pre_acts": pre_acts, "hiddens": hiddens, "norms": norms, "z": z}
    return z, cache


def encoder_forward(params: MlpParams, x) -> tuple[np.ndarray, dict]:
    """Forward a single input vector; returns (unit representation, cache)."""
    z, cache = forward_batch(params, np.asarray(x, dtype=np.float64)[None, :])
    return z[0], cache


def backward_batch(params: MlpParams, cache: dict, d_z: np.ndarray
                   ) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Backprop d(loss)/d(z) through normalization and all layers.

    Returns (d_weights, d_biases) matching the parameter shapes.
    """
    z = cache["z"]
    norms = cache["norms"]
    # Normalization Jacobian: dv = (dz - (z . dz) z) / ||v||.
    radial = np.einsum("ij,ij->i", z, d_z)
    d_a = (d_z - radial[:, None] * z) / norms[:, None]

    d_weights = [np.empty(0)] * len(params.weights)
    d_biases = [np.empty(0)] * len(params.biases)
    for l in range(len(params.weights) - 1, -1, -1):
        h_in = cache["hiddens"][l]
        d_weights[l] = h_in.T @ d_a
        d_biases[l] = d_a.sum(axis=0)
        if l > 0:
            d_h = d_a @ params.weights[l].T
            d_a = d_h * (cache["pre_acts"][l - 1] > 0.0)
    return d_weights, d_biases


def parameter_gradients(params: MlpParams, view_a: np.ndarray, view_b: np.ndarray,
                        loss_params: LossParams, which: str
                        ) -> tuple[list[np.ndarray], list[np.ndarray], LossBreakdown]:
    """Exact gradients of the selected loss w.r.t. all weights and biases.

    Both views pass through the same parameters (Siamese weight sharing),
    so the two backprop passes accumulate into shared gradient buffers.
    """
    z_a, cache_a = forward_batch(params, view_a)
    z_b, cache_b = forward_batch(params, view_b)
    batch = BatchViews(z_a, z_b, validate=False)
    breakdown = loss_by_name(batch, loss_params, which)
    grads = loss_grad_wrt_reps(batch, loss_params, which)
    dw_a, db_a = backward_batch(params, cache_a, grads.d_z)
    dw_b, db_b = backward_batch(params, cache_b, grads.d_z_prime)
    d_weights = [ga + gb for ga, gb in zip(dw_a, dw_b)]
    d_biases = [ga + gb for ga, gb in zip(db_a, db_b)]
    return d_weights, d_biases, breakdown


def train_step(params: MlpParams, inputs: np.ndarray, aug: AugmentationSpec,
               loss_params: LossParams, which: str, opt: OptimizerConfig,
               lr_now: float, rng: np.random.Generator
               ) -> tuple[MlpParams, LossBreakdown]:
    """One SGD-with-momentum step on a minibatch.

    Draws two independent augmentations per input, backpropagates the
    selected loss through the shared encoder, adds weight decay to the
    weight gradients (biases excluded) and updates the momentum buffers
    in place.  ``params`` is mutated and returned.
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    view_a = augment_batch(inputs, aug, rng)
    view_b = augment_batch(inputs, aug, rng)
    d_weights, d_biases, breakdown = parameter_gradients(
        params, view_a, view_b, loss_params, which)
    for l in range(len(params.weights)):
        gw = d_weights[l] + opt.weight_decay * params.weights[l]
        params.vel_w[l] = opt.momentum * params.vel_w[l] + gw
        params.weights[l] -= lr_now * params.vel_w[l]
        params.vel_b[l] = opt.momentum * params.vel_b[l] + d_biases[l]
        params.biases[l] -= lr_now * params.vel_b[l]
    return params, breakdown


def cosine_lr(base_lr: float, epoch: int, total_epochs: int) -> float:
    """Cosine decay without warmup: base_lr at epoch 0, zero at the end."""
    if total_epochs < 1:
        raise ValueError("total_epochs must be >= 1")
    if not 0 <= epoch <= total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {total_epochs}]")
    return base_lr * (1.0 + np.cos(np.pi * epoch / total_epochs)) / 2.0


def save_checkpoint(path, params: MlpParams, seed: int, epoch: int) -> None:
    """Write parameters as text: one JSON header line, then one line per
    tensor (weights then bias per layer) with full-precision floats."""
    header = {"layer_dims": list(params.layer_dims), "seed": int(seed), "epoch": int(epoch)}
    with open(path, "w", newline="\n") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for w, b in zip(params.weights, params.biases):
            fh.write(" ".join(f"{v:.17g}" for v in w.ravel()) + "\n")
            fh.write(" ".join(f"{v:.17g}" for v in b) + "\n")


def load_checkpoint(path) -> tuple[MlpParams, dict]:
    """Inverse of ``save_checkpoint``; returns (params, header dict).

    Momentum buffers are not stored and come back as zeros.
    """
    with open(path) as fh:
        header = json.loads(fh.readline())
        dims = header["layer_dims"]
        weights, biases = [], []
        for d_in, d_out in zip(dims[:-1], dims[1:]):
            w = np.array([float(t) for t in fh.readline().split()]).reshape(d_in, d_out)
            b = np.array([float(t) for t in fh.readline().split()])
            weights.append(w)
            biases.append(b)
    return MlpParams(weights=weights, biases=biases), header
