"""Online trajectory-control solver.

Given a trained network, per-layer embeddings and a possibly perturbed
input, the solver searches for additive controls u_0 .. u_{T-1} that
minimize the accumulated running loss

    J = sum_t  ||E_t(x_t) - x_t||^2 + u_t^T R u_t

along the controlled trajectory.  The search follows the maximum-principle
structure: a forward pass produces the states, a backward pass propagates
co-states p_t (the negative cost-to-go gradients, with p_T = 0), and the
Hamiltonian gradient with respect to each control feeds an Adam ascent
step.  Ascending the Hamiltonian is descending J, because the co-states
carry exactly the downstream sensitivity of the cost.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ConsistencyError, DivergenceError, ShapeError
from .linalg import FloatArray, as_vector
from .network import LayeredNetwork, Trajectory, forward_controlled


@dataclass
class RunningLossConfig:
    """Quadratic control penalty u^T R u with diagonal R.

    Either a scalar ``c`` (R = c I at every layer, the common case) or an
    explicit diagonal; an explicit diagonal requires equal control
    dimensions across layers.
    """

    c: float | None = 1e-3
    r_diag: FloatArray | None = None

    def __post_init__(self):
        if self.r_diag is not None:
            self.r_diag = as_vector(self.r_diag, "R diagonal")
            if np.any(self.r_diag < 0):
                raise ConfigError("R diagonal entries must be >= 0")
        elif self.c is None:
            raise ConfigError("provide either c or an explicit diagonal")
        if self.c is not None and self.c < 0:
            raise ConfigError("c must be >= 0")

    def diag(self, dim: int) -> FloatArray:
        if self.r_diag is not None:
            if self.r_diag.shape[0] != dim:
                raise ShapeError(
                    f"R diagonal has dim {self.r_diag.shape[0]}, control has {dim}"
                )
            return self.r_diag
        return np.full(dim, float(self.c))


@dataclass
class PmpConfig:
    """Iteration budget and Adam hyperparameters for the ascent."""

    max_iterations: int = 30
    step_size: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    stop_tol: float = 1e-9

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ConfigError("max_iterations must be >= 1")
        if self.step_size <= 0:
            raise ConfigError("step size must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("Adam betas must lie in [0, 1)")
        if self.stop_tol < 0:
            raise ConfigError("stop tolerance must be >= 0")


@dataclass
class ControlTrajectory:
    """Per-layer control vectors plus their Adam moment buffers."""

    controls: list[FloatArray]
    adam_m: list[FloatArray] = field(default_factory=list)
    adam_v: list[FloatArray] = field(default_factory=list)
    adam_steps: int = 0

    def __post_init__(self):
        self.controls = [as_vector(u, f"u_{t}") for t, u in enumerate(self.controls)]
        if not self.adam_m:
            self.adam_m = [np.zeros_like(u) for u in self.controls]
        if not self.adam_v:
            self.adam_v = [np.zeros_like(u) for u in self.controls]

    @classmethod
    def zeros(cls, net: LayeredNetwork) -> "ControlTrajectory":
        return cls(controls=[np.zeros(l.in_dim) for l in net.layers])

    def copy(self) -> "ControlTrajectory":
        return ControlTrajectory(
            controls=[u.copy() for u in self.controls],
            adam_m=[m.copy() for m in self.adam_m],
            adam_v=[v.copy() for v in self.adam_v],
            adam_steps=self.adam_steps,
        )

    def ascend(self, grads: list[FloatArray], cfg: PmpConfig) -> None:
        """One bias-corrected Adam step in the +gradient direction."""
        self.adam_steps += 1
        k = self.adam_steps
        for t, g in enumerate(grads):
            self.adam_m[t] = cfg.beta1 * self.adam_m[t] + (1 - cfg.beta1) * g
            self.adam_v[t] = cfg.beta2 * self.adam_v[t] + (1 - cfg.beta2) * g * g
            m_hat = self.adam_m[t] / (1 - cfg.beta1 ** k)
            v_hat = self.adam_v[t] / (1 - cfg.beta2 ** k)
            self.controls[t] = self.controls[t] + cfg.step_size * m_hat / (
                np.sqrt(v_hat) + cfg.eps_adam
            )


@dataclass
class CoStateTrajectory:
    """Co-states p_1 .. p_T; p_T is identically zero (no terminal loss)."""

    costates: list[FloatArray]

    def p(self, t: int) -> FloatArray:
        if not 1 <= t <= len(self.costates):
            raise ShapeError(f"co-state index {t} out of range 1..{len(self.costates)}")
        return self.costates[t - 1]


def _embedding_list(embeddings, T: int):
    es = list(embeddings)
    if len(es) != T:
        raise ShapeError(f"need one embedding per layer 0..{T - 1}, got {len(es)}")
    return es


def running_loss(x_t, u_t, e_t, r_cfg: RunningLossConfig) -> float:
    """Reconstruction loss of the state plus the quadratic control penalty."""
    u = as_vector(u_t, "u_t")
    r = r_cfg.diag(u.shape[0])
    return e_t.loss(x_t) + float(np.dot(u, r * u))


def total_cost(net: LayeredNetwork, x0, controls, embeddings,
               r_cfg: RunningLossConfig) -> float:
    """Accumulated running loss over the controlled trajectory (no terminal term)."""
    es = _embedding_list(embeddings, net.T)
    traj = forward_controlled(net, x0, controls)
    us = traj.controls if traj.controls is not None else [
        np.zeros(l.in_dim) for l in net.layers
    ]
    return sum(running_loss(traj.states[t], us[t], es[t], r_cfg) for t in range(net.T))


def hamiltonian(t: int, x_t, p_next, u_t, net: LayeredNetwork, e_t,
                r_cfg: RunningLossConfig) -> float:
    """p_{t+1} . f(x_t + u_t) - L(x_t, u_t)."""
    x = as_vector(x_t, "x_t")
    u = as_vector(u_t, "u_t")
    p = as_vector(p_next, "p_next")
    nxt = net.layers[t].apply(x + u)
    if nxt.shape != p.shape:
        raise ShapeError("co-state dimension does not match layer output")
    return float(np.dot(p, nxt)) - running_loss(x, u, e_t, r_cfg)


def _cost_of_trajectory(traj: Trajectory, es, r_cfg: RunningLossConfig) -> float:
    us = traj.controls
    T = len(es)
    if us is None:
        us = [np.zeros(traj.states[t].shape[0]) for t in range(T)]
    return sum(running_loss(traj.states[t], us[t], es[t], r_cfg) for t in range(T))


def backward_costates(net: LayeredNetwork, traj: Trajectory, controls, embeddings,
                      r_cfg: RunningLossConfig) -> CoStateTrajectory:
    """Propagate p_t = (d f/d x)^T p_{t+1} - d L/d x backward from p_T = 0.

    Each p_t equals the negative gradient of the cost-to-go from layer t
    with respect to the state x_t.
    """
    es = _embedding_list(embeddings, net.T)
    us = controls.controls if hasattr(controls, "controls") else list(controls)
    if traj.controls is not None and len(traj.controls) == len(us):
        same = all(a is b or np.array_equal(a, b) for a, b in zip(traj.controls, us))
    else:
        same = traj.controls is None and all(np.all(u == 0) for u in us)
    if not same:
        raise ConsistencyError("trajectory was produced with different controls")
    if len(traj.states) != net.T + 1:
        raise ConsistencyError("trajectory does not match the network depth")

    costates: list[FloatArray] = [np.zeros(net.out_dim)] * net.T
    costates[net.T - 1] = np.zeros(net.out_dim)  # p_T = 0 exactly
    p_next = costates[net.T - 1]
    for t in range(net.T - 1, 0, -1):
        z = traj.states[t] + us[t]
        j_t_p, _, _ = net.layers[t].vjp(z, p_next)
        p_t = j_t_p - es[t].loss_gradient(traj.states[t])
        costates[t - 1] = p_t
        p_next = p_t
    return CoStateTrajectory(costates=costates)


def control_gradient(t: int, x_t, p_next, u_t, net: LayeredNetwork, e_t,
                     r_cfg: RunningLossConfig) -> FloatArray:
    """Hamiltonian gradient in the control: (d f/d u)^T p_{t+1} - 2 R u_t."""
    x = as_vector(x_t, "x_t")
    u = as_vector(u_t, "u_t")
    p = as_vector(p_next, "p_next")
    j_t_p, _, _ = net.layers[t].vjp(x + u, p)
    return j_t_p - 2.0 * r_cfg.diag(u.shape[0]) * u


@dataclass
class SolveResult:
    """Best-cost controls, the evaluated cost history, and bookkeeping."""

    controls: ControlTrajectory
    cost_history: list[float]
    best_cost: float
    iterations: int  # ascent steps actually performed


def solve(net: LayeredNetwork, x0, embeddings, r_cfg: RunningLossConfig,
          cfg: PmpConfig) -> SolveResult:
    """Iterate forward / co-state / ascent from zero controls.

    Every candidate control set (including the initial zeros and the
    post-update final one) is evaluated; the best-cost iterate is
    returned, so the result never does worse than no control.  Stops
    early once the cost change falls below ``cfg.stop_tol``.
    """
    es = _embedding_list(embeddings, net.T)
    controls = ControlTrajectory.zeros(net)
    best = controls.copy()
    best_cost = np.inf
    history: list[float] = []

    for k in range(cfg.max_iterations + 1):
        traj = forward_controlled(net, x0, controls)
        cost = _cost_of_trajectory(traj, es, r_cfg)
        if not np.isfinite(cost):
            raise DivergenceError(k)
        history.append(cost)
        if cost < best_cost:
            best_cost = cost
            best = controls.copy()
        if k == cfg.max_iterations:
            break
        if k > 0 and abs(history[-1] - history[-2]) < cfg.stop_tol:
            break
        costates = backward_costates(net, traj, controls, es, r_cfg)
        grads = []
        for t in range(net.T):
            p_next = costates.p(t + 1)
            grads.append(
                control_gradient(t, traj.states[t], p_next, controls.controls[t],
                                 net, es[t], r_cfg)
            )
        controls.ascend(grads, cfg)

    return SolveResult(controls=best, cost_history=history, best_cost=best_cost,
                       iterations=len(history) - 1)
