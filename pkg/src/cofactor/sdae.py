"""Stacked denoising autoencoder over bag-of-words rows.

Sigmoid activations on every layer. The encoder is the first half of the
layer stack; the reconstruction is the full stack. Gradients cover the three
joint-loss terms that touch the net: the item-anchor pull toward the middle
layer, the clean-row reconstruction error, and weight decay.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

from .errors import ValidationError


@dataclass
class SdaeConfig:
    """Architecture and training knobs.

    layer_widths runs input → … → latent → … → output and must be symmetric
    with an even number of layers; the middle width is the latent dimension
    shared with the factor model.
    """

    layer_widths: list[int]
    noise_rate: float = 0.3
    pretrain_epochs: int = 20
    learning_rate: float = 0.01
    activation: str = "sigmoid"

    @property
    def n_layers(self) -> int:
        return len(self.layer_widths) - 1

    @property
    def latent_dim(self) -> int:
        return self.layer_widths[len(self.layer_widths) // 2]

    def validate(self) -> None:
        widths = self.layer_widths
        if len(widths) < 3 or self.n_layers % 2 != 0:
            raise ValidationError("layer_widths must describe an even, nonzero layer count")
        if widths != widths[::-1]:
            raise ValidationError("layer_widths must be symmetric around the middle")
        if any(w < 1 for w in widths):
            raise ValidationError("layer widths must be positive")
        if not 0.0 <= self.noise_rate < 1.0:
            raise ValidationError("noise_rate must be in [0, 1)")
        if self.learning_rate <= 0:
            raise ValidationError("learning_rate must be positive")
        if self.pretrain_epochs < 0:
            raise ValidationError("pretrain_epochs must be nonnegative")
        if self.activation != "sigmoid":
            raise ValidationError(f"unsupported activation {self.activation!r}")


@dataclass
class SdaeParams:
    """Per-layer weight matrices (fan_in × fan_out) and bias vectors."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def layer_widths(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def copy(self) -> "SdaeParams":
        return SdaeParams([w.copy() for w in self.weights],
                          [b.copy() for b in self.biases])

    def squared_norm(self) -> float:
        return float(sum((w * w).sum() for w in self.weights)
                     + sum((b * b).sum() for b in self.biases))


def init_params(layer_widths: list[int], seed_or_rng) -> SdaeParams:
    """Zero biases; weights uniform in ±sqrt(6 / (fan_in + fan_out))."""
    rng = seed_or_rng if isinstance(seed_or_rng, np.random.Generator) \
        else np.random.default_rng(seed_or_rng)
    weights, biases = [], []
    for d_in, d_out in zip(layer_widths[:-1], layer_widths[1:]):
        limit = np.sqrt(6.0 / (d_in + d_out))
        weights.append(rng.uniform(-limit, limit, size=(d_in, d_out)))
        biases.append(np.zeros(d_out))
    return SdaeParams(weights=weights, biases=biases)


def corrupt(x_clean, noise_rate: float, rng_seed):
    """Masking noise: zero each stored coordinate independently with the given rate."""
    if not 0.0 <= noise_rate < 1.0:
        raise ValidationError("noise_rate must be in [0, 1)")
    rng = np.random.default_rng(rng_seed)
    if sp.issparse(x_clean):
        out = x_clean.copy().tocsr()
        out.data = out.data * (rng.random(out.data.shape) >= noise_rate)
        out.eliminate_zeros()
        return out
    x = np.asarray(x_clean, dtype=np.float64)
    return x * (rng.random(x.shape) >= noise_rate)


def _check_input_width(x, params: SdaeParams) -> None:
    width = x.shape[-1] if x.ndim > 0 else 0
    expected = params.weights[0].shape[0]
    if width != expected:
        raise ValidationError(f"input width {width} != first layer fan-in {expected}")


def _forward(x, params: SdaeParams, n_layers: int):
    """Activations [h_0 … h_n]; h_0 is the (possibly sparse) input."""
    acts = [x]
    h = x
    for layer in range(n_layers):
        h = expit(h @ params.weights[layer] + params.biases[layer])
        acts.append(h)
    return acts

def encode(x0, params: SdaeParams) -> np.ndarray:
    """Middle-layer activation: the latent representation of x0."""
    _check_input_width(x0, params)
    if params.n_layers % 2 != 0:
        raise ValidationError("encode needs an even layer count to locate the middle layer")
    return _forward(x0, params, params.n_layers // 2)[-1]


def reconstruct(x0, params: SdaeParams) -> np.ndarray:
    """Output-layer activation: the reconstruction of x0 through all layers."""
    _check_input_width(x0, params)
    return _forward(x0, params, params.n_layers)[-1]


def forward_activations(x0, params: SdaeParams) -> list:
    """All layer activations, exposed so the encode/reconstruct split is checkable."""
    _check_input_width(x0, params)
    return _forward(x0, params, params.n_layers)


def loss_terms(params: SdaeParams, x0, xc, beta: np.ndarray) -> tuple[float, float, float]:
    """Raw squared sums (anchor, reconstruction, decay) before any λ/2 scaling."""
    acts = forward_activations(x0, params)
    mid = params.n_layers // 2
    xc_dense = xc.toarray() if sp.issparse(xc) else np.asarray(xc, dtype=np.float64)
    anchor = beta - acts[mid]
    recon = xc_dense - acts[-1]
    return float((anchor * anchor).sum()), float((recon * recon).sum()), params.squared_norm()


def sdae_gradients(params: SdaeParams, x0, xc, beta: np.ndarray, *,
                   lambda_anchor: float, lambda_recon: float,
                   lambda_decay: float) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Gradients of the minimized joint-loss terms w.r.t. every weight and bias.

    Covers (λ_anchor/2)·Σ‖β − encode(x0)‖² + (λ_recon/2)·Σ‖xc − reconstruct(x0)‖²
    + (λ_decay/2)·(‖W‖² + ‖b‖²), backpropagated through the sigmoid stack with
    the anchor residual injected at the middle layer.
    """
    n_layers = params.n_layers
    if n_layers % 2 != 0:
        raise ValidationError("gradients need an even layer count")
    mid = n_layers // 2
    beta = np.atleast_2d(np.asarray(beta, dtype=np.float64))
    xc_dense = xc.toarray() if sp.issparse(xc) else np.atleast_2d(np.asarray(xc, dtype=np.float64))
    if not (np.isfinite(beta).all() and np.isfinite(xc_dense).all()):
        raise ValidationError("non-finite values in gradient inputs")
    acts = forward_activations(x0, params)
    grads_w: list[np.ndarray | None] = [None] * n_layers
    grads_b: list[np.ndarray | None] = [None] * n_layers
    out = acts[-1]
    delta = lambda_recon * (out - xc_dense) * out * (1.0 - out)
    for layer in range(n_layers - 1, -1, -1):
        h_prev = acts[layer]
        grads_w[layer] = (h_prev.T @ delta) + lambda_decay * params.weights[layer]
        grads_b[layer] = delta.sum(axis=0) + lambda_decay * params.biases[layer]
        if layer == 0:
            break
        back = delta @ params.weights[layer].T
        if layer == mid:
            back = back + lambda_anchor * (acts[mid] - beta)
        h = acts[layer]
        delta = back * h * (1.0 - h)
    return grads_w, grads_b


def pretrain(clean_rows, config: SdaeConfig, seed: int) -> SdaeParams:
    """Greedy layer-wise denoising pretraining of the full symmetric stack.

    Each encoder depth trains a one-hidden-layer denoising autoencoder on the
    clean propagation of the rows so far; its decoder initializes the mirror
    layer. pretrain_epochs=0 returns the random initialization untouched.
    """
    if hasattr(clean_rows, "rows"):    # accept a DocTermMatrix directly
        clean_rows = clean_rows.rows
    config.validate()
    if not sp.issparse(clean_rows):
        clean_rows = np.asarray(clean_rows, dtype=np.float64)
    if clean_rows.shape[1] != config.layer_widths[0]:
        raise ValidationError(
            f"rows have width {clean_rows.shape[1]}, config expects {config.layer_widths[0]}")
    rng = np.random.default_rng(seed)
    params = init_params(config.layer_widths, rng)
    if config.pretrain_epochs == 0:
        return params
    n_layers = params.n_layers
    n_rows = clean_rows.shape[0]
    lr = config.learning_rate
    h = clean_rows
    for depth in range(n_layers // 2):
        enc, dec = depth, n_layers - 1 - depth
        for _ in range(config.pretrain_epochs):
            noisy = corrupt(h, config.noise_rate, rng)
            hidden = expit(noisy @ params.weights[enc] + params.biases[enc])
            output = expit(hidden @ params.weights[dec] + params.biases[dec])
            target = h.toarray() if sp.issparse(h) else h
            delta_out = (output - target) * output * (1.0 - output) / n_rows
            grad_w_dec = hidden.T @ delta_out
            grad_b_dec = delta_out.sum(axis=0)
            delta_hid = (delta_out @ params.weights[dec].T) * hidden * (1.0 - hidden)
            grad_w_enc = noisy.T @ delta_hid
            grad_b_enc = delta_hid.sum(axis=0)
            params.weights[dec] -= lr * grad_w_dec
            params.biases[dec] -= lr * grad_b_dec
            params.weights[enc] -= lr * np.asarray(grad_w_enc)
            params.biases[enc] -= lr * grad_b_enc
        h = expit(h @ params.weights[enc] + params.biases[enc])
    return params
