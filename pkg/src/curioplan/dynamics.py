"""Gaussian ensemble forward model and disagreement-based intrinsic reward.

Each member maps a normalized (state, action) pair to the mean and
log-variance of the next-state delta. Disagreement across the elite
members, measured as the trace of the sample covariance of the stacked
[mean, variance] outputs, is the exploration signal.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .nets import AdamState, Mlp, gaussian_nll_loss, load_net, save_net
from .replay import ReplayBuffer


class Normalizer:
    """Per-feature shift and scale with a variance floor."""

    def __init__(self, dim: int, eps: float = 1e-6):
        self.mean = np.zeros(dim)
        self.std = np.ones(dim)
        self.eps = eps

    def fit(self, data: np.ndarray) -> None:
        self.mean = data.mean(axis=0)
        self.std = np.maximum(data.std(axis=0), self.eps)

    def normalize(self, x):
        return (x - self.mean) / self.std

    def denormalize(self, x):
        return x * self.std + self.mean


@dataclass
class EnsembleConfig:
    n_members: int = 7
    n_elites: int = 5
    hidden: tuple[int, ...] = (200, 200, 200, 200)
    activation: str = "silu"
    lr: float = 2.8e-4
    weight_decay: float = 1e-4
    batch_size: int = 512
    holdout_ratio: float = 0.1
    logvar_bounds: tuple[float, float] = (-10.0, 4.0)
    max_batches_per_epoch: int | None = None  # caps retrain cost on large buffers

    def __post_init__(self):
        if self.n_members < 2:
            raise ValueError("need at least two ensemble members")
        if not 1 <= self.n_elites <= self.n_members:
            raise ValueError("n_elites must be within the member count")


class EnsembleModel:
    """M independent Gaussian delta predictors plus shared normalizers."""

    def __init__(self, state_dim: int, action_dim: int, cfg: EnsembleConfig, rng):
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.cfg = cfg
        sizes = [state_dim + action_dim, *cfg.hidden, 2 * state_dim]
        self.members = [Mlp(sizes, cfg.activation, rng=rng) for _ in range(cfg.n_members)]
        self.adams = [
            AdamState(m.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
            for m in self.members
        ]
        self.in_norm = Normalizer(state_dim + action_dim)
        self.out_norm = Normalizer(state_dim)
        self._elites = np.arange(cfg.n_elites)
        self._stack = None

    @property
    def elites(self):
        return self._elites

    @elites.setter
    def elites(self, value):
        self._elites = np.asarray(value, dtype=np.int64)
        self._stack = None

    def _elite_stack(self):
        """Per-layer weights of the elites stacked for batched matmul."""
        if self._stack is None:
            nets = [self.members[int(m)] for m in self._elites]
            self._stack = [
                (
                    np.stack([net.weights[i] for net in nets]),
                    np.stack([net.biases[i][None, :] for net in nets]),
                )
                for i in range(len(nets[0].weights))
            ]
        return self._stack

    def _elite_forward(self, x: np.ndarray) -> np.ndarray:
        """Forward a batch through every elite at once: [E, N, 2*state_dim]."""
        from .nets import _activate

        stack = self._elite_stack()
        h = np.broadcast_to(x, (len(self._elites), *x.shape))
        last = len(stack) - 1
        for i, (w, b) in enumerate(stack):
            h = h @ w + b
            if i < last:
                h = _activate(self.cfg.activation, h)
        return h

    def _member_raw(self, member: int, s: np.ndarray, a: np.ndarray):
        """Normalized-space (mean delta, clamped log-variance) of one member."""
        x = self.in_norm.normalize(np.concatenate([s, a], axis=-1))
        out = self.members[member].forward(np.atleast_2d(x))
        mu, logvar = out[:, : self.state_dim], out[:, self.state_dim :]
        logvar = np.clip(logvar, *self.cfg.logvar_bounds)
        return mu, logvar

    def predict_dist(self, s: np.ndarray, a: np.ndarray, member: int):
        """Denormalized next-state mean and variance of one elite member."""
        if member not in self.elites:
            raise ValueError(f"member {member} is not an elite ({list(self.elites)})")
        single = np.ndim(s) == 1
        s = np.atleast_2d(np.asarray(s, dtype=np.float64))
        a = np.atleast_2d(np.asarray(a, dtype=np.float64))
        mu, logvar = self._member_raw(member, s, a)
        delta = self.out_norm.denormalize(mu)
        var = np.exp(logvar) * self.out_norm.std**2
        mean_next = s + delta
        if single:
            return mean_next[0], var[0]
        return mean_next, var

    def _elite_outputs(self, s: np.ndarray, a: np.ndarray):
        """Stacked per-elite (mean next state, variance), denormalized.

        Returns arrays of shape [n_elites, N, state_dim].
        """
        s = np.atleast_2d(np.asarray(s, dtype=np.float64))
        a = np.atleast_2d(np.asarray(a, dtype=np.float64))
        x = self.in_norm.normalize(np.concatenate([s, a], axis=-1))
        out = self._elite_forward(x)
        mu, logvar = out[..., : self.state_dim], out[..., self.state_dim :]
        logvar = np.clip(logvar, *self.cfg.logvar_bounds)
        means = s + self.out_norm.denormalize(mu)
        variances = np.exp(logvar) * self.out_norm.std**2
        return means, variances

    def disagreement_reward(self, s: np.ndarray, a: np.ndarray, mean_only: bool = False):
        """Trace of the sample covariance of elite predictions (>= 0).

        The covariance is taken over the concatenated [mean, variance]
        member outputs with denominator M-1; ``mean_only`` restricts it to
        the mean component for ablations.
        """
        if len(self.elites) < 2:
            raise ValueError("disagreement needs at least two elites")
        single = np.ndim(s) == 1
        means, variances = self._elite_outputs(s, a)
        f = means if mean_only else np.concatenate([means, variances], axis=-1)
        r = f.var(axis=0, ddof=1).sum(axis=-1)
        return float(r[0]) if single else r

    def sample_next(self, s, a, members, rng):
        """One stochastic next state per row, each row using its own member."""
        s = np.atleast_2d(np.asarray(s, dtype=np.float64))
        a = np.atleast_2d(np.asarray(a, dtype=np.float64))
        out = np.empty_like(s)
        for member in np.unique(members):
            sel = members == member
            mu, logvar = self._member_raw(int(member), s[sel], a[sel])
            delta = self.out_norm.denormalize(mu)
            std = np.exp(0.5 * logvar) * self.out_norm.std
            out[sel] = s[sel] + delta + rng.standard_normal(delta.shape) * std
        return out

    def step_ts1(self, s, a, rng):
        """TS1 propagation: fresh random elite per row, stochastic sample."""
        s2 = np.atleast_2d(np.asarray(s, dtype=np.float64))
        means, variances = self._elite_outputs(s2, a)
        pick = rng.integers(0, len(self.elites), size=len(s2))
        rows = np.arange(len(s2))
        mu = means[pick, rows]
        std = np.sqrt(variances[pick, rows])
        return mu + rng.standard_normal(mu.shape) * std

    def disagree_and_step(self, s, a, rng, mean_only: bool = False):
        """Disagreement reward plus a TS1 next-state sample, one forward pass."""
        if len(self.elites) < 2:
            raise ValueError("disagreement needs at least two elites")
        s2 = np.atleast_2d(np.asarray(s, dtype=np.float64))
        means, variances = self._elite_outputs(s2, a)
        f = means if mean_only else np.concatenate([means, variances], axis=-1)
        reward = f.var(axis=0, ddof=1).sum(axis=-1)
        pick = rng.integers(0, len(self.elites), size=len(s2))
        rows = np.arange(len(s2))
        mu = means[pick, rows]
        std = np.sqrt(variances[pick, rows])
        nxt = mu + rng.standard_normal(mu.shape) * std
        return reward, nxt

    def step_mean(self, s, a):
        """Deterministic propagation through the mean of elite means."""
        single = np.ndim(s) == 1
        means, _ = self._elite_outputs(s, a)
        out = means.mean(axis=0)
        return out[0] if single else out


def fit_ensemble(
    model: EnsembleModel,
    buf: ReplayBuffer,
    epochs: int,
    rng: np.random.Generator,
    bootstrap: bool = True,
) -> np.ndarray:
    """Train every member on the buffer; returns held-out log-likelihoods.

    Members see bootstrapped batches (sampled with replacement) of the
    shared training split; elites are the members with the best Gaussian
    log-likelihood on the shared holdout. Normalizers are refit first.
    """
    cfg = model.cfg
    model._stack = None  # parameters are about to change
    s_all, a_all, delta_all = _transition_arrays(buf)
    n = len(s_all)
    if n < 16:
        raise ValueError("not enough transitions to fit the ensemble")

    perm = rng.permutation(n)
    n_holdout = max(1, int(n * cfg.holdout_ratio))
    holdout, train = perm[:n_holdout], perm[n_holdout:]

    x_all = np.concatenate([s_all, a_all], axis=1)
    model.in_norm.fit(x_all[train])
    model.out_norm.fit(delta_all[train])
    x_norm = model.in_norm.normalize(x_all)
    y_norm = model.out_norm.normalize(delta_all)

    n_train = len(train)
    batches_per_epoch = max(1, n_train // cfg.batch_size)
    if cfg.max_batches_per_epoch is not None:
        batches_per_epoch = min(batches_per_epoch, cfg.max_batches_per_epoch)
    for _ in range(epochs):
        if bootstrap:
            epoch_orders = [
                train[rng.integers(0, n_train, size=(batches_per_epoch, cfg.batch_size))]
                for _ in range(cfg.n_members)
            ]
        else:
            # without bootstrapping every member sees the same batches
            order = train[rng.permutation(n_train)][: batches_per_epoch * cfg.batch_size]
            epoch_orders = [order.reshape(batches_per_epoch, -1)] * cfg.n_members
        for b in range(batches_per_epoch):
            for member, net in enumerate(model.members):
                idx = epoch_orders[member][b]
                pred, cache = net.forward_cached(x_norm[idx])
                _, grad = gaussian_nll_loss(pred, y_norm[idx], cfg.logvar_bounds)
                grads, _ = net.backward(cache, grad)
                model.adams[member].step(net.parameters(), grads)

    scores = np.empty(cfg.n_members)
    for member, net in enumerate(model.members):
        pred = net.forward(x_norm[holdout])
        mu, logvar = pred[:, : model.state_dim], pred[:, model.state_dim :]
        logvar = np.clip(logvar, *cfg.logvar_bounds)
        ll = -0.5 * (
            logvar + (y_norm[holdout] - mu) ** 2 * np.exp(-logvar) + np.log(2 * np.pi)
        )
        scores[member] = ll.sum(axis=1).mean()
    order = np.argsort(-scores, kind="stable")
    model.elites = np.sort(order[: cfg.n_elites])
    return scores


def _transition_arrays(buf: ReplayBuffer):
    states, actions, deltas = [], [], []
    for s, a in buf.trajectories:
        states.append(s[:-1])
        actions.append(a)
        deltas.append(s[1:] - s[:-1])
    return (
        np.concatenate(states).astype(np.float64),
        np.concatenate(actions).astype(np.float64),
        np.concatenate(deltas).astype(np.float64),
    )


def save_ensemble(model: EnsembleModel, directory) -> None:
    os.makedirs(directory, exist_ok=True)
    for i, net in enumerate(model.members):
        save_net(net, os.path.join(directory, f"member_{i}.gcnn"))
    manifest = {
        "state_dim": model.state_dim,
        "action_dim": model.action_dim,
        "n_members": model.cfg.n_members,
        "n_elites": model.cfg.n_elites,
        "hidden": list(model.cfg.hidden),
        "activation": model.cfg.activation,
        "lr": model.cfg.lr,
        "weight_decay": model.cfg.weight_decay,
        "batch_size": model.cfg.batch_size,
        "holdout_ratio": model.cfg.holdout_ratio,
        "logvar_bounds": list(model.cfg.logvar_bounds),
        "elites": [int(e) for e in model.elites],
        "in_mean": model.in_norm.mean.tolist(),
        "in_std": model.in_norm.std.tolist(),
        "out_mean": model.out_norm.mean.tolist(),
        "out_std": model.out_norm.std.tolist(),
    }
    with open(os.path.join(directory, "ensemble.json"), "w") as fh:
        json.dump(manifest, fh, indent=2)


def load_ensemble(directory) -> EnsembleModel:
    with open(os.path.join(directory, "ensemble.json")) as fh:
        manifest = json.load(fh)
    cfg = EnsembleConfig(
        n_members=manifest["n_members"],
        n_elites=manifest["n_elites"],
        hidden=tuple(manifest["hidden"]),
        activation=manifest["activation"],
        lr=manifest["lr"],
        weight_decay=manifest["weight_decay"],
        batch_size=manifest["batch_size"],
        holdout_ratio=manifest["holdout_ratio"],
        logvar_bounds=tuple(manifest["logvar_bounds"]),
    )
    model = EnsembleModel(manifest["state_dim"], manifest["action_dim"], cfg, rng=None)
    for i in range(cfg.n_members):
        model.members[i] = load_net(os.path.join(directory, f"member_{i}.gcnn"))
    model.elites = np.array(manifest["elites"], dtype=np.int64)
    model.in_norm.mean = np.array(manifest["in_mean"])
    model.in_norm.std = np.array(manifest["in_std"])
    model.out_norm.mean = np.array(manifest["out_mean"])
    model.out_norm.std = np.array(manifest["out_std"])
    return model
