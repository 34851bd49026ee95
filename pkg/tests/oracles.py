"""Independent oracles the tests check the production code against.

Everything here is deliberately written the slow, obvious way (python sets,
per-entry loops, finite differences) and shares no code with the package.
"""

from __future__ import annotations

import math

import numpy as np


def brute_force_ppmi(user_clicks: list[set[int]]) -> dict[tuple[int, int], float]:
    """PPMI by direct enumeration of users per item pair. Keys are (i, j), i < j."""
    item_users: dict[int, set[int]] = {}
    for user, items in enumerate(user_clicks):
        for item in items:
            item_users.setdefault(item, set()).add(user)
    total_pairs = sum(len(items) * (len(items) - 1) // 2 for items in user_clicks)
    result: dict[tuple[int, int], float] = {}
    all_items = sorted(item_users)
    for a_pos, i in enumerate(all_items):
        for j in all_items[a_pos + 1:]:
            both = len(item_users[i] & item_users[j])
            if both == 0 or total_pairs == 0:
                continue
            value = math.log(both * total_pairs / (len(item_users[i]) * len(item_users[j])))
            if value > 0:
                result[(i, j)] = value
    return result


def pmf_als_reference(users, items, values, n_users, n_items, k, lambda_user,
                      lambda_item, seed, n_epochs, val_users, val_items, val_values):
    """Plain alternating-least-squares matrix factorization, loops and LU solves.

    Initialization mirrors the trainer's contract: one generator, user factors
    drawn first, then item factors, both scaled by 0.01. Returns per-epoch
    losses, per-epoch validation RMSEs, and the final factor matrices.
    """
    rng = np.random.default_rng(seed)
    theta = 0.01 * rng.standard_normal((n_users, k))
    beta = 0.01 * rng.standard_normal((n_items, k))
    rated_by_user = [[] for _ in range(n_users)]
    rated_by_item = [[] for _ in range(n_items)]
    for idx in range(len(values)):
        rated_by_user[users[idx]].append(idx)
        rated_by_item[items[idx]].append(idx)
    losses, val_rmses = [], []
    eye = np.eye(k)
    for _ in range(n_epochs):
        for u in range(n_users):
            a = lambda_user * eye.copy()
            b = np.zeros(k)
            for idx in rated_by_user[u]:
                vec = beta[items[idx]]
                a += np.outer(vec, vec)
                b += values[idx] * vec
            theta[u] = np.linalg.solve(a, b)
        for i in range(n_items):
            a = lambda_item * eye.copy()
            b = np.zeros(k)
            for idx in rated_by_item[i]:
                vec = theta[users[idx]]
                a += np.outer(vec, vec)
                b += values[idx] * vec
            beta[i] = np.linalg.solve(a, b)
        loss = 0.0
        for idx in range(len(values)):
            loss += 0.5 * (values[idx] - theta[users[idx]] @ beta[items[idx]]) ** 2
        loss += 0.5 * lambda_user * float((theta ** 2).sum())
        loss += 0.5 * lambda_item * float((beta ** 2).sum())
        losses.append(loss)
        err = [val_values[idx] - theta[val_users[idx]] @ beta[val_items[idx]]
               for idx in range(len(val_values))]
        val_rmses.append(float(np.sqrt(np.mean(np.square(err)))))
    return losses, val_rmses, theta, beta


def block_gradients(theta, beta, alpha, users, items, values, s_rows, s_cols,
                    s_values, anchor, lambda_s, lambda_user, lambda_item,
                    lambda_context):
    """Per-row gradients of the joint loss over the three factor blocks.

    `anchor` is the item-anchor matrix (zeros when the text model is off);
    the pair arrays list ordered pairs, both directions of each stored entry.
    """
    n_users, k = theta.shape
    n_items = beta.shape[0]
    g_theta = lambda_user * theta.copy()
    g_beta = lambda_item * (beta - anchor)
    g_alpha = lambda_context * alpha.copy()
    for idx in range(len(values)):
        u, i = users[idx], items[idx]
        resid = theta[u] @ beta[i] - values[idx]
        g_theta[u] += resid * beta[i]
        g_beta[i] += resid * theta[u]
    for idx in range(len(s_values)):
        i, j = s_rows[idx], s_cols[idx]
        resid = beta[i] @ alpha[j] - s_values[idx]
        g_beta[i] += lambda_s * resid * alpha[j]
        g_alpha[j] += lambda_s * resid * beta[i]
    return g_theta, g_beta, g_alpha


def joint_loss_reference(theta, beta, alpha, users, items, values, s_rows, s_cols,
                         s_values, anchor, lambda_s, lambda_user, lambda_item,
                         lambda_context):
    """Factor-side joint loss by per-entry loops (no autoencoder terms).

    The pair arrays list ordered pairs, both directions of each stored entry;
    `anchor` is zero when the text model is off.
    """
    loss = 0.0
    for idx in range(len(values)):
        loss += 0.5 * (values[idx] - theta[users[idx]] @ beta[items[idx]]) ** 2
    for idx in range(len(s_values)):
        loss += 0.5 * lambda_s * (s_values[idx] - beta[s_rows[idx]] @ alpha[s_cols[idx]]) ** 2
    loss += 0.5 * lambda_user * float((theta ** 2).sum())
    loss += 0.5 * lambda_item * float(((beta - anchor) ** 2).sum())
    loss += 0.5 * lambda_context * float((alpha ** 2).sum())
    return loss


def numeric_gradient(fn, x, step=1e-5):
    """Central finite differences of a scalar function over a flat array."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.ravel()
    out = grad.ravel()
    for idx in range(flat.size):
        orig = flat[idx]
        flat[idx] = orig + step
        hi = fn(x)
        flat[idx] = orig - step
        lo = fn(x)
        flat[idx] = orig
        out[idx] = (hi - lo) / (2.0 * step)
    return grad
