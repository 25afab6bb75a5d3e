"""Relative loss balancing with random lookback (ReLoBRaLo)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

LOSS_FLOOR = 1e-30
EXP_FLOOR = -700.0  # exp(-700) ~ 1e-304 stays a positive double


@dataclass
class BalancerState:
    n_terms: int
    alpha: float = 0.999
    tau: float = 1.0
    rho: float = 0.999
    seed: int = 0
    first: np.ndarray | None = None
    prev: np.ndarray | None = None
    weights: np.ndarray = None
    rng: np.random.Generator = field(default=None, repr=False)

    def __post_init__(self):
        if self.weights is None:
            self.weights = np.ones(self.n_terms)
        if self.rng is None:
            self.rng = np.random.default_rng(self.seed)


def _scaled_softmax(losses, ref, tau):
    z = losses / (tau * ref)
    z = np.maximum(z - z.max(), EXP_FLOOR)
    e = np.exp(z)
    return len(losses) * e / e.sum()


def relobralo_step(state, losses):
    """Update and return the loss weights for the current epoch's losses.

    lam = alpha * (r * lam_prev + (1 - r) * hat(L / L_first))
          + (1 - alpha) * hat(L / L_prev),
    with hat(.) = n * softmax(. / tau) and r ~ Bernoulli(rho).  The weights
    always sum to the number of terms.
    """
    losses = np.asarray(losses, dtype=float)
    if losses.shape != (state.n_terms,):
        raise ValueError(f"expected {state.n_terms} losses, got shape {losses.shape}")
    if not np.all(np.isfinite(losses)):
        raise FloatingPointError(f"non-finite losses {losses}")
    losses = np.maximum(losses, LOSS_FLOOR)
    if state.first is None:
        state.first = losses.copy()
        state.prev = losses.copy()
        state.weights = np.ones(state.n_terms)
        return state.weights.copy()
    lookback = float(state.rng.random() < state.rho)
    hist = _scaled_softmax(losses, state.prev, state.tau)
    init = _scaled_softmax(losses, state.first, state.tau)
    w = state.alpha * (lookback * state.weights + (1.0 - lookback) * init) + (1.0 - state.alpha) * hist
    state.weights = w
    state.prev = losses.copy()
    return w.copy()
