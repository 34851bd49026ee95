"""Joint trainer: exact block least-squares for the factor matrices plus a
full-batch gradient step for the text autoencoder, alternated per epoch.

The minimized loss is

    1/2 Σ_rated (r_ui − θ_u·β_i)²
  + λ_s/2 Σ_ordered-pairs (s_ij − β_i·α_j)²
  + λ_user/2 ‖θ‖² + λ_item/2 Σ_i ‖β_i − encode(x0_i)‖² + λ_context/2 ‖α‖²
  + λ_recon/2 Σ_i ‖xc_i − reconstruct(x0_i)‖² + λ_decay/2 (‖W‖² + ‖b‖²)

where the pair sum runs over both (i,j) and (j,i) for every stored symmetric
entry — the reading under which each block update below is the exact minimizer
of its subproblem. With the autoencoder disabled the anchor degenerates to a
plain ridge toward zero and the model is classic regularized factorization.
"""

from __future__ import annotations

import dataclasses
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .container import read_container, write_container
from .corpus import DocTermMatrix, EvalSplit
from .errors import (CheckpointError, CofactorError, TrainingDivergedError,
                     ValidationError)
from .ppmi import PpmiMatrix
from .sdae import (SdaeConfig, SdaeParams, corrupt, encode, loss_terms,
                   pretrain, sdae_gradients)

CHECKPOINT_VERSION = 1


class NonFiniteLossError(CofactorError):
    """A loss term evaluated to a non-finite value."""

    def __init__(self, term: str):
        self.term = term
        super().__init__(f"loss term {term!r} is non-finite")


@dataclass
class Hyperparams:
    n_factors: int = 64
    lambda_s: float = 1.0           # weight of the co-click pair term
    lambda_user: float = 0.01
    lambda_item: float = 10.0       # pull of item factors toward the text anchor
    lambda_context: float = 0.01
    lambda_recon: float = 10.0
    lambda_decay: float = 1e-4
    sdae: SdaeConfig | None = None  # None disables the text model entirely
    max_epochs: int = 50
    patience: int = 5               # 0 disables early stopping
    seed: int = 0
    center_ratings: bool = False

    def validate(self) -> None:
        if self.n_factors < 1:
            raise ValidationError("n_factors must be >= 1")
        for name in ("lambda_s", "lambda_user", "lambda_item", "lambda_context",
                     "lambda_recon", "lambda_decay"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be nonnegative")
        if self.lambda_user <= 0 or self.lambda_context <= 0:
            raise ValidationError("lambda_user and lambda_context must be positive")
        if self.max_epochs < 1:
            raise ValidationError("max_epochs must be >= 1")
        if self.patience < 0:
            raise ValidationError("patience must be nonnegative")
        if self.sdae is not None:
            self.sdae.validate()
            if self.sdae.latent_dim != self.n_factors:
                raise ValidationError(
                    f"autoencoder latent width {self.sdae.latent_dim} != n_factors {self.n_factors}")


@dataclass
class ModelState:
    user_factors: np.ndarray      # (n_users, K)
    item_factors: np.ndarray      # (n_items, K)
    context_factors: np.ndarray   # (n_items, K)
    sdae: SdaeParams | None
    epoch: int = 0
    rating_offset: float = 0.0

    def copy(self) -> "ModelState":
        return ModelState(self.user_factors.copy(), self.item_factors.copy(),
                          self.context_factors.copy(),
                          self.sdae.copy() if self.sdae is not None else None,
                          self.epoch, self.rating_offset)


@dataclass
class TrainData:
    """Inputs of one training run; the PPMI matrix comes from training clicks."""

    split: EvalSplit
    ppmi: PpmiMatrix | None = None
    docs: DocTermMatrix | None = None


@dataclass
class EpochStats:
    epoch: int
    loss_after_users: float
    loss_after_items: float
    loss_after_contexts: float
    loss_epoch_end: float
    validation_rmse: float
    sdae_lr: float


@dataclass
class TrainingTrace:
    label: str
    epochs: list[EpochStats] = field(default_factory=list)
    best_epoch: int = 0
    best_validation_rmse: float = float("inf")


def run_label(hyper: Hyperparams) -> str:
    """'pmf-degenerate' when both the click term and the text model are off."""
    return "pmf-degenerate" if hyper.lambda_s == 0 and hyper.sdae is None else "joint"


def _solve_spd(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    try:
        return scipy.linalg.solve(a, b, assume_a="pos")
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
        raise ValidationError(f"singular block system: {exc}") from None


def update_user(rated_items: np.ndarray, rated_values: np.ndarray,
                item_factors: np.ndarray, lambda_user: float) -> np.ndarray:
    """Exact minimizer over one user's factor vector, all else fixed."""
    k = item_factors.shape[1]
    if len(rated_items) == 0:
        return np.zeros(k)
    basis = item_factors[rated_items]
    gram = basis.T @ basis + lambda_user * np.eye(k)
    return _solve_spd(gram, basis.T @ rated_values)


def update_item_feature(rater_users: np.ndarray, rater_values: np.ndarray,
                        user_factors: np.ndarray, context_factors: np.ndarray,
                        neighbor_items: np.ndarray, neighbor_values: np.ndarray,
                        lambda_s: float, lambda_item: float,
                        text_anchor: np.ndarray | None) -> np.ndarray:
    """Exact minimizer over one item's feature vector.

    With no raters and no stored neighbors the solution collapses to the text
    anchor (or zero without one): the cold-start value.
    """
    k = user_factors.shape[1]
    gram = lambda_item * np.eye(k)
    rhs = np.zeros(k) if text_anchor is None else lambda_item * np.asarray(text_anchor)
    if len(rater_users):
        basis = user_factors[rater_users]
        gram = gram + basis.T @ basis
        rhs = rhs + basis.T @ rater_values
    if lambda_s > 0 and len(neighbor_items):
        ctx = context_factors[neighbor_items]
        gram = gram + lambda_s * (ctx.T @ ctx)
        rhs = rhs + lambda_s * (ctx.T @ neighbor_values)
    return _solve_spd(gram, rhs)


def update_item_context(neighbor_items: np.ndarray, neighbor_values: np.ndarray,
                        item_factors: np.ndarray, lambda_s: float,
                        lambda_context: float) -> np.ndarray:
    """Exact minimizer over one item's context vector."""
    k = item_factors.shape[1]
    if lambda_s == 0 or len(neighbor_items) == 0:
        return np.zeros(k)
    basis = item_factors[neighbor_items]
    gram = lambda_s * (basis.T @ basis) + lambda_context * np.eye(k)
    return _solve_spd(gram, lambda_s * (basis.T @ neighbor_values))


def _check_finite(value: float, term: str) -> float:
    if not np.isfinite(value):
        raise NonFiniteLossError(term)
    return value


def total_loss(state: ModelState, ratings, ppmi: PpmiMatrix | None,
               x0, xc, hyper: Hyperparams) -> float:
    """Full joint loss; rating values are centered by the state's offset."""
    theta, beta, alpha = state.user_factors, state.item_factors, state.context_factors
    resid = (ratings.ratings - state.rating_offset
             - np.einsum("ij,ij->i", theta[ratings.users], beta[ratings.items]))
    loss = _check_finite(0.5 * float(resid @ resid), "rating")
    if hyper.lambda_s > 0 and ppmi is not None and ppmi.matrix.nnz:
        coo = ppmi.matrix.tocoo()
        s_resid = coo.data - np.einsum("ij,ij->i", beta[coo.row], alpha[coo.col])
        loss += _check_finite(0.5 * hyper.lambda_s * float(s_resid @ s_resid), "pair")
    loss += _check_finite(0.5 * hyper.lambda_user * float((theta * theta).sum()), "user_reg")
    loss += _check_finite(0.5 * hyper.lambda_context * float((alpha * alpha).sum()),
                          "context_reg")
    if state.sdae is not None:
        anchor_sq, recon_sq, decay_sq = loss_terms(state.sdae, x0, xc, beta)
        loss += _check_finite(0.5 * hyper.lambda_item * anchor_sq, "item_anchor")
        loss += _check_finite(0.5 * hyper.lambda_recon * recon_sq, "reconstruction")
        loss += _check_finite(0.5 * hyper.lambda_decay * decay_sq, "decay")
    else:
        loss += _check_finite(0.5 * hyper.lambda_item * float((beta * beta).sum()),
                              "item_reg")
    return _check_finite(loss, "total")


def _group_by(keys: np.ndarray, companions: list[np.ndarray], n_groups: int):
    """CSR-style grouping: returns (indptr, sorted companion arrays)."""
    order = np.argsort(keys, kind="stable")
    sorted_keys = keys[order]
    indptr = np.searchsorted(sorted_keys, np.arange(n_groups + 1))
    return indptr, [c[order] for c in companions]


def _run_rows(n_rows: int, worker, threads: int) -> None:
    if threads <= 1 or n_rows < 2 * threads:
        worker(range(n_rows))
        return
    chunks = np.array_split(np.arange(n_rows), threads * 4)
    with ThreadPoolExecutor(max_workers=threads) as pool:
        list(pool.map(worker, chunks))


def train(data: TrainData, hyper: Hyperparams,
          threads: int = 1) -> tuple[ModelState, TrainingTrace]:
    """Alternate user / item-feature / item-context solves and one autoencoder
    gradient pass per epoch; stop on stale validation RMSE; return the state
    of the best validation epoch plus the per-epoch trace.
    """
    hyper.validate()
    split = data.split
    train_ds = split.train
    n_users, n_items, k = train_ds.n_users, train_ds.n_items, hyper.n_factors
    sdae_on = hyper.sdae is not None
    docs = data.docs
    if sdae_on:
        if docs is None:
            raise ValidationError("autoencoder enabled but no document matrix supplied")
        if hyper.sdae.layer_widths[0] != docs.vocab_size:
            raise ValidationError(
                f"autoencoder input width {hyper.sdae.layer_widths[0]} != vocabulary size "
                f"{docs.vocab_size}")
        if docs.n_items != n_items:
            raise ValidationError("document matrix rows do not match item count")
    if split.mode == "out_of_matrix" and not sdae_on:
        raise ValidationError("out_of_matrix validation requires the text model")

    offset = float(train_ds.ratings.mean()) if hyper.center_ratings else 0.0
    values = train_ds.ratings - offset

    rng = np.random.default_rng(hyper.seed)
    theta = 0.01 * rng.standard_normal((n_users, k))
    if sdae_on:
        params = pretrain(docs.rows, hyper.sdae, seed=hyper.seed)
        beta = np.asarray(encode(docs.rows, params))
    else:
        params = None
        beta = 0.01 * rng.standard_normal((n_items, k))
    alpha = 0.01 * rng.standard_normal((n_items, k))

    u_indptr, (u_items, u_values) = _group_by(train_ds.users, [train_ds.items, values],
                                              n_users)
    i_indptr, (i_users, i_values) = _group_by(train_ds.items, [train_ds.users, values],
                                              n_items)
    if hyper.lambda_s > 0 and data.ppmi is not None:
        if data.ppmi.n_items != n_items:
            raise ValidationError("PPMI matrix size does not match item count")
        s_matrix = data.ppmi.matrix
    else:
        s_matrix = sp.csr_matrix((n_items, n_items))

    val = split.validation
    if sdae_on:
        val_unique, val_inverse = np.unique(val.items, return_inverse=True)

    def validation_rmse() -> float:
        if split.mode == "in_matrix":
            pred = np.einsum("ij,ij->i", theta[val.users], beta[val.items])
        else:
            emb = np.asarray(encode(docs.rows[val_unique], params))
            pred = np.einsum("ij,ij->i", theta[val.users], emb[val_inverse])
        err = val.ratings - offset - pred
        return float(np.sqrt(np.mean(err * err)))

    state = ModelState(theta, beta, alpha, params, 0, offset)
    trace = TrainingTrace(label=run_label(hyper))
    sdae_lr = hyper.sdae.learning_rate if sdae_on else 0.0
    x0 = xc = None
    stale = 0

    def loss_now(epoch: int) -> float:
        try:
            return total_loss(state, train_ds, data.ppmi, x0, xc, hyper)
        except NonFiniteLossError as exc:
            raise TrainingDivergedError(epoch, exc.term) from None

    for epoch in range(1, hyper.max_epochs + 1):
        if sdae_on:
            xc = docs.rows
            x0 = corrupt(xc, hyper.sdae.noise_rate,
                         np.random.SeedSequence(entropy=hyper.seed, spawn_key=(epoch,)))
            anchor = np.asarray(encode(x0, params))

        def user_worker(rows):
            for u in rows:
                lo, hi = u_indptr[u], u_indptr[u + 1]
                theta[u] = update_user(u_items[lo:hi], u_values[lo:hi], beta,
                                       hyper.lambda_user)

        _run_rows(n_users, user_worker, threads)
        loss_users = loss_now(epoch)

        def item_worker(rows):
            for i in rows:
                lo, hi = i_indptr[i], i_indptr[i + 1]
                slo, shi = s_matrix.indptr[i], s_matrix.indptr[i + 1]
                beta[i] = update_item_feature(
                    i_users[lo:hi], i_values[lo:hi], theta, alpha,
                    s_matrix.indices[slo:shi], s_matrix.data[slo:shi],
                    hyper.lambda_s, hyper.lambda_item,
                    anchor[i] if sdae_on else None)

        _run_rows(n_items, item_worker, threads)
        loss_items = loss_now(epoch)

        def context_worker(rows):
            for j in rows:
                slo, shi = s_matrix.indptr[j], s_matrix.indptr[j + 1]
                alpha[j] = update_item_context(s_matrix.indices[slo:shi],
                                               s_matrix.data[slo:shi], beta,
                                               hyper.lambda_s, hyper.lambda_context)

        _run_rows(n_items, context_worker, threads)
        loss_contexts = loss_now(epoch)

        if sdae_on:
            before = _sdae_objective(params, x0, xc, beta, hyper)
            grads_w, grads_b = sdae_gradients(
                params, x0, xc, beta, lambda_anchor=hyper.lambda_item,
                lambda_recon=hyper.lambda_recon, lambda_decay=hyper.lambda_decay)
            for layer in range(params.n_layers):
                params.weights[layer] -= sdae_lr * grads_w[layer]
                params.biases[layer] -= sdae_lr * grads_b[layer]
            if _sdae_objective(params, x0, xc, beta, hyper) > before:
                sdae_lr *= 0.5
        loss_end = loss_now(epoch)

        rmse_val = validation_rmse()
        if not np.isfinite(rmse_val):
            raise TrainingDivergedError(epoch, "validation_rmse")
        state.epoch = epoch
        trace.epochs.append(EpochStats(epoch, loss_users, loss_items, loss_contexts,
                                       loss_end, rmse_val, sdae_lr))
        if rmse_val < trace.best_validation_rmse:
            trace.best_validation_rmse = rmse_val
            trace.best_epoch = epoch
            best_state = state.copy()
            stale = 0
        else:
            stale += 1
            if hyper.patience and stale >= hyper.patience:
                break
    return best_state, trace


def _sdae_objective(params: SdaeParams, x0, xc, beta: np.ndarray,
                    hyper: Hyperparams) -> float:
    anchor_sq, recon_sq, decay_sq = loss_terms(params, x0, xc, beta)
    return 0.5 * (hyper.lambda_item * anchor_sq + hyper.lambda_recon * recon_sq
                  + hyper.lambda_decay * decay_sq)


def _hyper_to_dict(hyper: Hyperparams) -> dict:
    blob = dataclasses.asdict(hyper)
    return blob


def _hyper_from_dict(blob: dict) -> Hyperparams:
    blob = dict(blob)
    sdae_blob = blob.pop("sdae", None)
    sdae = SdaeConfig(**sdae_blob) if sdae_blob is not None else None
    return Hyperparams(sdae=sdae, **blob)


def save_checkpoint(path: str | Path, state: ModelState, hyper: Hyperparams, *,
                    user_ids: tuple[str, ...], item_ids: tuple[str, ...],
                    vocab: tuple[str, ...] = (), run_tag: str = "",
                    config_fingerprint: str = "",
                    best_validation_rmse: float | None = None) -> None:
    """Versioned binary checkpoint: manifest header plus little-endian float64 arrays."""
    meta = {
        "format_version": CHECKPOINT_VERSION,
        "n_users": state.user_factors.shape[0],
        "n_items": state.item_factors.shape[0],
        "n_factors": state.user_factors.shape[1],
        "vocab_size": len(vocab),
        "layer_widths": state.sdae.layer_widths if state.sdae is not None else [],
        "hyper": _hyper_to_dict(hyper),
        "epoch": state.epoch,
        "rating_offset": state.rating_offset,
        "run": run_tag or run_label(hyper),
        "config_fingerprint": config_fingerprint,
        "best_validation_rmse": best_validation_rmse,
        "user_ids": list(user_ids),
        "item_ids": list(item_ids),
        "vocab": list(vocab),
    }
    arrays = {
        "user_factors": state.user_factors,
        "item_factors": state.item_factors,
        "context_factors": state.context_factors,
    }
    if state.sdae is not None:
        for layer in range(state.sdae.n_layers):
            arrays[f"sdae_w_{layer}"] = state.sdae.weights[layer]
            arrays[f"sdae_b_{layer}"] = state.sdae.biases[layer]
    write_container(path, meta, arrays)


def load_checkpoint(path: str | Path) -> tuple[ModelState, Hyperparams, dict]:
    """Read and validate a checkpoint; returns (state, hyperparams, meta)."""
    meta, arrays = read_container(path)
    if meta.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: unsupported checkpoint version {meta.get('format_version')!r}")
    hyper = _hyper_from_dict(meta["hyper"])
    theta = arrays["user_factors"]
    beta = arrays["item_factors"]
    alpha = arrays["context_factors"]
    if theta.shape != (meta["n_users"], meta["n_factors"]):
        raise CheckpointError(f"{path}: user factor shape {theta.shape} does not match manifest")
    if beta.shape != alpha.shape or beta.shape != (meta["n_items"], meta["n_factors"]):
        raise CheckpointError(f"{path}: item factor shapes do not match manifest")
    widths = meta["layer_widths"]
    sdae_params = None
    if widths:
        weights, biases = [], []
        for layer in range(len(widths) - 1):
            w = arrays[f"sdae_w_{layer}"]
            b = arrays[f"sdae_b_{layer}"]
            if w.shape != (widths[layer], widths[layer + 1]) or b.shape != (widths[layer + 1],):
                raise CheckpointError(f"{path}: autoencoder layer {layer} shape mismatch")
            weights.append(w)
            biases.append(b)
        sdae_params = SdaeParams(weights=weights, biases=biases)
    state = ModelState(theta, beta, alpha, sdae_params,
                       epoch=meta["epoch"], rating_offset=meta["rating_offset"])
    return state, hyper, meta
