"""Closed-form error analysis for greedily controlled linear chains.

Setting: a linear network x_{t+1} = theta_t (x_t + u_t) whose clean input
lives in a subspace span(V0); the subspace is pushed forward exactly
through the layers.  At each layer the control is the minimizer of the
quadratic index  0.5 ||Q_t (x_t + u_t)||^2 + 0.5 c ||u_t||^2  with
Q_t the projection onto the orthogonal complement, which has the closed
form u = -Q_t x / (1 + c).  Everything downstream of that choice is an
exact identity chain: the gain decomposition I - K = a I + (1 - a) P with
a = c / (1 + c), oblique conjugated projections P_t^s, their products
F_t, and finally a bound on the controlled-vs-clean state error that is
tight (an equality) when every layer matrix is orthogonal.

Each identity is implemented as an executable check: the functions here
recompute both sides independently and raise LemmaViolationError if a
closed form ever disagrees with its definition.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BasisError, ConfigError, LemmaViolationError, ShapeError
from .linalg import (
    FloatArray,
    as_matrix,
    as_vector,
    check_orthonormal,
    condition_number,
    invert,
    orthonormal_columns,
    random_orthogonal,
    spectral_norm,
)

IDENTITY_TOL = 1e-10  # gain decomposition
CHAIN_TOL = 1e-8  # oblique-chain identities (inversions amplify roundoff)


def alpha_of(c: float) -> float:
    """Residual shrinkage factor a = c / (1 + c) of the perpendicular component."""
    if c < 0:
        raise ConfigError(f"regularization c must be >= 0, got {c}")
    return c / (1.0 + c)


def _complement_apply(v: FloatArray, x: FloatArray) -> FloatArray:
    """(I - V V^T) x without forming the projection matrix."""
    return x - v @ (v.T @ x)


def greedy_control(x, v, c: float) -> FloatArray:
    """Single-layer optimal control u = -(c I + Q^T Q)^{-1} Q^T Q x = -Q x / (1 + c).

    The simplification uses that Q = I - V V^T is symmetric idempotent, and
    remains valid in the c = 0 limit where the inverse form degenerates.
    """
    v = check_orthonormal(v, tol=1e-8, name="subspace basis")
    x = as_vector(x)
    if x.shape[0] != v.shape[0]:
        raise ShapeError("state dim does not match basis")
    if c < 0:
        raise ConfigError(f"regularization c must be >= 0, got {c}")
    return -_complement_apply(v, x) / (1.0 + c)


def feedback_gain(v, c: float) -> FloatArray:
    """Gain K with u = -K x; equals Q / (1 + c) on the complement of span(V)."""
    v = check_orthonormal(v, tol=1e-8, name="subspace basis")
    if c < 0:
        raise ConfigError(f"regularization c must be >= 0, got {c}")
    d = v.shape[0]
    q = np.eye(d) - v @ v.T
    return q / (1.0 + c)


def control_matrix_identity(v, c: float) -> FloatArray:
    """I - K, checked against its decomposition a I + (1 - a) V V^T."""
    v = check_orthonormal(v, tol=1e-8, name="subspace basis")
    d = v.shape[0]
    m = np.eye(d) - feedback_gain(v, c)
    a = alpha_of(c)
    decomposed = a * np.eye(d) + (1.0 - a) * (v @ v.T)
    if np.max(np.abs(m - decomposed)) > IDENTITY_TOL:
        raise LemmaViolationError("gain decomposition I - K = aI + (1-a)P failed")
    return m


@dataclass
class TheoryInstance:
    """A linear chain with a clean input subspace and a split perturbation.

    The perturbation z = z_par + z_perp decomposes into a component inside
    span(V0) and one in its orthogonal complement; x0 is the clean input
    and lies in span(V0).
    """

    thetas: list[FloatArray]
    v0: FloatArray
    c: float
    z_par: FloatArray
    z_perp: FloatArray
    x0: FloatArray

    def __post_init__(self):
        self.v0 = check_orthonormal(self.v0, tol=1e-10, name="V0")
        d = self.v0.shape[0]
        self.thetas = [as_matrix(th, f"theta_{i}") for i, th in enumerate(self.thetas)]
        if not self.thetas:
            raise ConfigError("need at least one layer matrix")
        for i, th in enumerate(self.thetas):
            if th.shape != (d, d):
                raise ShapeError(f"theta_{i} must be {d}x{d}, got {th.shape}")
            condition_number(th)  # raises SingularMatrixError if not invertible
        if self.c < 0:
            raise ConfigError("regularization c must be >= 0")
        self.z_par = as_vector(self.z_par, "z_par")
        self.z_perp = as_vector(self.z_perp, "z_perp")
        self.x0 = as_vector(self.x0, "x0")
        for name, vec in (("z_par", self.z_par), ("z_perp", self.z_perp), ("x0", self.x0)):
            if vec.shape[0] != d:
                raise ShapeError(f"{name} must have dim {d}")
        tol = 1e-10
        if abs(float(np.dot(self.z_par, self.z_perp))) > tol * max(
            1.0, float(np.linalg.norm(self.z_par) * np.linalg.norm(self.z_perp))
        ):
            raise BasisError("z_par and z_perp are not orthogonal")
        if np.linalg.norm(_complement_apply(self.v0, self.z_par)) > tol * max(
            1.0, float(np.linalg.norm(self.z_par))
        ):
            raise BasisError("z_par is not inside span(V0)")
        if np.linalg.norm(self.v0.T @ self.z_perp) > tol * max(
            1.0, float(np.linalg.norm(self.z_perp))
        ):
            raise BasisError("z_perp is not orthogonal to span(V0)")
        if np.linalg.norm(_complement_apply(self.v0, self.x0)) > tol * max(
            1.0, float(np.linalg.norm(self.x0))
        ):
            raise BasisError("x0 is not inside span(V0)")

    @property
    def depth(self) -> int:
        return len(self.thetas)

    @property
    def dim(self) -> int:
        return self.v0.shape[0]

    @property
    def z(self) -> FloatArray:
        return self.z_par + self.z_perp

    @property
    def alpha(self) -> float:
        return alpha_of(self.c)


def pushforward_bases(thetas: list[FloatArray], v0: FloatArray) -> list[FloatArray]:
    """Orthonormal bases B_t of theta_{t-1} ... theta_0 span(V0), t = 0..T."""
    bases = [v0]
    for th in thetas:
        bases.append(orthonormal_columns(th @ bases[-1]))
    return bases


@dataclass
class ProjectionChain:
    """All projection machinery of one instance.

    ``orth[t]`` is the orthogonal projection onto the pushforward subspace
    at layer t.  ``oblique[(t, s)]`` conjugates orth[t] back s layers, so
    its range is the subspace at layer t - s while it stays idempotent.
    ``gains[(t, s)]`` is a I + (1 - a) oblique[(t, s)], and ``f[t]`` is the
    accumulated product gains[(t-1, t-1)] ... gains[(0, 0)] which also
    equals the closed-form geometric sum in the oblique projections.
    """

    alpha: float
    bases: list[FloatArray]
    orth: list[FloatArray]
    oblique: dict[tuple[int, int], FloatArray]
    gains: dict[tuple[int, int], FloatArray]
    f: dict[int, FloatArray]


def oblique_chain(instance: TheoryInstance) -> ProjectionChain:
    """Build and validate the full oblique-projection chain of an instance."""
    a = instance.alpha
    d = instance.dim
    bases = pushforward_bases(instance.thetas, instance.v0)
    orth = [b @ b.T for b in bases]
    inverses = [invert(th) for th in instance.thetas]
    eye = np.eye(d)

    oblique: dict[tuple[int, int], FloatArray] = {}
    gains: dict[tuple[int, int], FloatArray] = {}
    for t in range(instance.depth + 1):
        p = orth[t]
        oblique[(t, 0)] = p
        gains[(t, 0)] = a * eye + (1.0 - a) * p
        for s in range(t):
            p = inverses[t - s - 1] @ p @ instance.thetas[t - s - 1]
            oblique[(t, s + 1)] = p
            gains[(t, s + 1)] = a * eye + (1.0 - a) * p

    for (t, s), p in oblique.items():
        scale = max(1.0, float(np.max(np.abs(p))))
        if np.max(np.abs(p @ p - p)) > CHAIN_TOL * scale:
            raise LemmaViolationError(f"P_{t}^{s} is not idempotent")
        target = bases[t - s]
        if np.max(np.abs(p @ target - target)) > CHAIN_TOL * scale:
            raise LemmaViolationError(f"P_{t}^{s} does not fix the layer-{t - s} subspace")

    f: dict[int, FloatArray] = {}
    for t in range(1, instance.depth + 1):
        prod = eye
        for s in range(t):  # left-multiply so gains[(t-1, t-1)] ends outermost
            prod = gains[(s, s)] @ prod
        closed = (a ** t) * eye + (1.0 - a) * sum(
            (a ** s) * oblique[(s, s)] for s in range(t)
        )
        if np.max(np.abs(prod - closed)) > CHAIN_TOL * max(1.0, float(np.max(np.abs(prod)))):
            raise LemmaViolationError(f"product and closed forms of F_{t} disagree")
        f[t] = prod

    return ProjectionChain(alpha=a, bases=bases, orth=orth, oblique=oblique,
                           gains=gains, f=f)


def oblique_projection_bound(theta_bar, v) -> float:
    """Bound (1 + cond^2) ||I - theta^T theta|| on the conjugated-projection gap.

    Also verifies ||theta^{-1} P_hat theta - P|| is below the bound, where
    P projects onto span(V) and P_hat onto theta span(V).
    """
    th = as_matrix(theta_bar, "theta_bar")
    v = check_orthonormal(v, tol=1e-8, name="subspace basis")
    d = th.shape[0]
    if th.shape != (d, d) or v.shape[0] != d:
        raise ShapeError("theta must be square and match the basis dimension")
    kappa = condition_number(th)
    rhs = (1.0 + kappa ** 2) * spectral_norm(np.eye(d) - th.T @ th)
    p = v @ v.T
    b_hat = orthonormal_columns(th @ v)
    p_hat = b_hat @ b_hat.T
    lhs = spectral_norm(invert(th) @ p_hat @ th - p)
    if lhs > rhs + 1e-8:
        raise LemmaViolationError(
            f"conjugated projection gap {lhs:.3e} exceeds bound {rhs:.3e}"
        )
    return rhs


def cumulative_products(thetas: list[FloatArray]) -> list[FloatArray]:
    """theta_bar_s = theta_{s-1} ... theta_0 for s = 0..T, with theta_bar_0 = I."""
    d = thetas[0].shape[0]
    out = [np.eye(d)]
    for th in thetas:
        out.append(th @ out[-1])
    return out


def gamma_t(thetas: list[FloatArray], t: int) -> float:
    """max over s <= t of (1 + cond(theta_bar_s)^2) ||I - theta_bar_s^T theta_bar_s||."""
    if t < 1:
        raise ConfigError(f"t must be >= 1, got {t}")
    if t > len(thetas):
        raise ConfigError(f"t = {t} exceeds chain depth {len(thetas)}")
    d = thetas[0].shape[0]
    eye = np.eye(d)
    best = 0.0
    for bar in cumulative_products(thetas)[: t + 1]:
        term = (1.0 + condition_number(bar) ** 2) * spectral_norm(eye - bar.T @ bar)
        best = max(best, term)
    return best


def theorem1_bound(instance: TheoryInstance, t: int) -> float:
    """Upper bound on ||controlled perturbed state - clean state||^2 at layer t."""
    if t < 1 or t > instance.depth:
        raise ConfigError(f"t must lie in [1, {instance.depth}], got {t}")
    a = instance.alpha
    g = gamma_t(instance.thetas, t)
    prod = cumulative_products(instance.thetas)[t]
    norm_sq = spectral_norm(prod) ** 2
    z_perp_sq = float(np.dot(instance.z_perp, instance.z_perp))
    z_par_sq = float(np.dot(instance.z_par, instance.z_par))
    z_sq = z_perp_sq + z_par_sq
    inner = (
        a ** (2 * t) * z_perp_sq
        + z_par_sq
        + g * z_sq * (g * a ** 2 * (1.0 - a ** (t - 1)) ** 2 + 2.0 * (a - a ** t))
    )
    return norm_sq * inner


def theorem1_exact_orthogonal(instance: TheoryInstance, t: int) -> float:
    """Exact error a^{2t} ||z_perp||^2 + ||z_par||^2, valid for orthogonal chains."""
    if t < 1 or t > instance.depth:
        raise ConfigError(f"t must lie in [1, {instance.depth}], got {t}")
    eye = np.eye(instance.dim)
    for i, th in enumerate(instance.thetas):
        if np.max(np.abs(th.T @ th - eye)) > 1e-8:
            raise ConfigError(f"theta_{i} is not orthogonal; exact form does not apply")
    a = instance.alpha
    return a ** (2 * t) * float(np.dot(instance.z_perp, instance.z_perp)) + float(
        np.dot(instance.z_par, instance.z_par)
    )


def simulate_controlled(instance: TheoryInstance, t: int) -> float:
    """Run the greedy-controlled chain and return the squared error at layer t.

    The perturbed trajectory starts at x0 + z and receives the closed-form
    greedy control against the exact pushforward subspace at every layer;
    the clean trajectory runs uncontrolled.  This is the independent
    oracle the bound above is checked against.
    """
    if t < 1 or t > instance.depth:
        raise ConfigError(f"t must lie in [1, {instance.depth}], got {t}")
    bases = pushforward_bases(instance.thetas, instance.v0)
    shrink = 1.0 / (1.0 + instance.c)
    x_pert = instance.x0 + instance.z
    x_clean = instance.x0.copy()
    for s in range(t):
        u = -shrink * _complement_apply(bases[s], x_pert)
        x_pert = instance.thetas[s] @ (x_pert + u)
        x_clean = instance.thetas[s] @ x_clean
    diff = x_pert - x_clean
    return float(np.dot(diff, diff))


# --------------------------------------------------------------------------
# random instances for sampled verification


def _orthogonal(rng: np.random.Generator, d: int) -> FloatArray:
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    sign = np.sign(np.diag(r))
    sign[sign == 0] = 1.0
    return q * sign


def _unit_in_span(rng: np.random.Generator, v: FloatArray) -> FloatArray:
    while True:
        w = v @ rng.standard_normal(v.shape[1])
        n = np.linalg.norm(w)
        if n > 1e-8:
            return w / n


def _unit_in_complement(rng: np.random.Generator, v: FloatArray) -> FloatArray:
    while True:
        w = _complement_apply(v, rng.standard_normal(v.shape[0]))
        n = np.linalg.norm(w)
        if n > 1e-8:
            return w / n


def random_instance(seed: int, *, d: int | None = None, depth: int | None = None,
                    c: float | None = None, orthogonal: bool = False,
                    eps_par: float | None = None,
                    eps_perp: float | None = None) -> TheoryInstance:
    """Sample a well-conditioned instance, deterministic for a fixed seed.

    Non-orthogonal layer matrices are built as Q1 diag(U[0.5, 2]) Q2 so the
    chain conditioning stays controlled.  The subspace rank is drawn in
    [1, d - 1] so the complement is never empty.
    """
    rng = np.random.default_rng(seed)
    d = int(d) if d is not None else int(rng.integers(2, 11))
    if d < 2:
        raise ConfigError("instances need d >= 2")
    depth = int(depth) if depth is not None else int(rng.integers(1, 6))
    if c is None:
        c = float(rng.choice([0.0, 0.1, 1.0, 10.0]))
    r = int(rng.integers(1, d))
    thetas = []
    for _ in range(depth):
        if orthogonal:
            thetas.append(_orthogonal(rng, d))
        else:
            q1, q2 = _orthogonal(rng, d), _orthogonal(rng, d)
            thetas.append(q1 @ np.diag(rng.uniform(0.5, 2.0, size=d)) @ q2)
    v0 = _orthogonal(rng, d)[:, :r]
    eps_par = float(eps_par) if eps_par is not None else float(rng.uniform(0.1, 1.0))
    eps_perp = float(eps_perp) if eps_perp is not None else float(rng.uniform(0.1, 1.0))
    z_par = eps_par * _unit_in_span(rng, v0)
    z_perp = eps_perp * _unit_in_complement(rng, v0)
    x0 = v0 @ rng.standard_normal(r)
    return TheoryInstance(thetas=thetas, v0=v0, c=c, z_par=z_par, z_perp=z_perp, x0=x0)
