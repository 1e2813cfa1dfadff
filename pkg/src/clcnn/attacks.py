"""Input perturbation generators.

Sign-gradient attacks (one-step and iterated-with-projection) against a
trained network, plus a structured random perturbation generator that
splits its output into in-subspace and out-of-subspace components for
the error-theory experiments.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InfeasibleError
from .linalg import FloatArray, as_vector, check_orthonormal
from .network import (
    LayeredNetwork,
    backward_gradients,
    cross_entropy_grad,
    forward,
    one_hot,
)


@dataclass
class AttackConfig:
    """Budget and schedule for the iterated attack.

    ``epsilon`` is the max-norm radius around the clean input; the
    iterated attack takes ``steps`` sign-gradient steps of ``step_size``
    (default epsilon / 4) with re-projection onto the budget after each.
    ``clip`` optionally bounds the valid input range, e.g. (0, 1) for
    image-like data; synthetic data defaults to unbounded.
    """

    epsilon: float
    steps: int = 20
    step_size: float | None = None
    seed: int = 0
    clip: tuple[float, float] | None = None

    def __post_init__(self):
        if self.epsilon < 0:
            raise ConfigError("epsilon must be >= 0")
        if self.steps < 1:
            raise ConfigError("steps must be >= 1")
        if self.step_size is None:
            self.step_size = self.epsilon / 4.0
        if self.step_size < 0:
            raise ConfigError("step size must be >= 0")


def _loss_input_grad(net: LayeredNetwork, x: FloatArray, y: int) -> FloatArray:
    traj = forward(net, x)
    up = cross_entropy_grad(traj.logits, one_hot(y, net.out_dim))
    gx, _, _ = backward_gradients(net, traj, up)
    return gx


def _clip(x: FloatArray, clip: tuple[float, float] | None) -> FloatArray:
    if clip is None:
        return x
    lo, hi = clip
    return np.clip(x, lo, hi)


def fgsm(net: LayeredNetwork, x0, y: int, eps: float,
         clip: tuple[float, float] | None = None) -> FloatArray:
    """One-step sign-gradient attack: x0 + eps * sign(grad of the loss).

    Zero gradient coordinates stay untouched (sign(0) = 0), so every
    perturbation coordinate is one of {-eps, 0, +eps}.
    """
    if eps < 0:
        raise ConfigError("epsilon must be >= 0")
    x = as_vector(x0, "x0")
    g = _loss_input_grad(net, x, int(y))
    return _clip(x + eps * np.sign(g), clip)


def pgd(net: LayeredNetwork, x0, y: int, cfg: AttackConfig) -> FloatArray:
    """Iterated sign-gradient ascent, projected onto the eps max-norm ball."""
    x0 = as_vector(x0, "x0")
    x = x0.copy()
    for _ in range(cfg.steps):
        g = _loss_input_grad(net, x, int(y))
        x = x + cfg.step_size * np.sign(g)
        x = x0 + np.clip(x - x0, -cfg.epsilon, cfg.epsilon)
        x = _clip(x, cfg.clip)
    return x


def random_perturbation(v0, eps_par: float, eps_perp: float,
                        seed: int) -> tuple[FloatArray, FloatArray]:
    """Random perturbation split into span(V0) and complement components.

    Returns (z_par, z_perp) with the exact requested norms; deterministic
    for a fixed seed.  Raises if a complement component is requested but
    the subspace already fills the space.
    """
    v = check_orthonormal(v0, tol=1e-8, name="V0")
    if eps_par < 0 or eps_perp < 0:
        raise ConfigError("perturbation norms must be >= 0")
    d, r = v.shape
    if r >= d and eps_perp > 0:
        raise InfeasibleError("subspace fills the space; no complement direction exists")
    rng = np.random.default_rng(seed)
    z_par = np.zeros(d)
    if eps_par > 0:
        while True:
            w = v @ rng.standard_normal(r)
            n = np.linalg.norm(w)
            if n > 1e-8:
                z_par = eps_par * w / n
                break
    z_perp = np.zeros(d)
    if eps_perp > 0:
        while True:
            w = rng.standard_normal(d)
            w = w - v @ (v.T @ w)
            n = np.linalg.norm(w)
            if n > 1e-8:
                z_perp = eps_perp * w / n
                break
    return z_par, z_perp
