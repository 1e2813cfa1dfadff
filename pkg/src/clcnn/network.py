"""Small layered networks treated as controllable discrete dynamical systems.

A network is an ordered list of layers; running an input through it
produces a state trajectory x_0 .. x_T.  Every layer map can take an
additive control u_t, applied to the state *before* the layer:

    x_{t+1} = layer_t(x_t + u_t)

so that the linear chain case reduces exactly to x_{t+1} = W (x_t + u_t).
Gradients with respect to inputs, parameters and controls are hand-derived
reverse-mode products; there is no autodiff dependency.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, ConsistencyError, DataError, ShapeError
from .linalg import FloatArray, as_vector

KINDS = ("dense", "residual", "classifier")
ACTIVATIONS = ("relu", "identity")


def _act(name: str, z: FloatArray) -> FloatArray:
    if name == "relu":
        return np.maximum(z, 0.0)
    return z


def _act_deriv(name: str, z: FloatArray) -> FloatArray:
    if name == "relu":
        # subgradient at exactly 0 is taken as 0 for determinism
        return (z > 0.0).astype(np.float64)
    return np.ones_like(z)


@dataclass
class LayerSpec:
    """One layer: kind in {dense, residual, classifier}, weight (out, in), bias (out,)."""

    kind: str
    weight: FloatArray
    bias: FloatArray
    activation: str = "relu"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown layer kind {self.kind!r}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 2 or self.bias.ndim != 1:
            raise ShapeError("weight must be 2-D and bias 1-D")
        if self.weight.shape[0] != self.bias.shape[0]:
            raise ShapeError(
                f"bias length {self.bias.shape[0]} != output dim {self.weight.shape[0]}"
            )
        if self.kind == "residual" and self.weight.shape[0] != self.weight.shape[1]:
            raise ShapeError("residual layers need equal input/output dimension")
        if self.kind == "classifier":
            self.activation = "identity"

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]

    def apply(self, z: FloatArray) -> FloatArray:
        pre = self.weight @ z + self.bias
        if self.kind == "residual":
            return z + _act(self.activation, pre)
        if self.kind == "classifier":
            return pre
        return _act(self.activation, pre)

    def vjp(self, z: FloatArray, g: FloatArray) -> tuple[FloatArray, FloatArray, FloatArray]:
        """Jacobian-transpose products at input z for upstream gradient g.

        Returns (grad wrt z, grad wrt weight, grad wrt bias).
        """
        pre = self.weight @ z + self.bias
        if self.kind == "classifier":
            s = g
            z_grad = self.weight.T @ g
        else:
            s = _act_deriv(self.activation, pre) * g
            z_grad = self.weight.T @ s
            if self.kind == "residual":
                z_grad = z_grad + g
        return z_grad, np.outer(s, z), s.copy()


@dataclass
class LayeredNetwork:
    """Ordered layers theta_0 .. theta_{T-1}; immutable once trained."""

    layers: list[LayerSpec]

    def __post_init__(self):
        if not self.layers:
            raise ConfigError("network needs at least one layer")
        for a, b in zip(self.layers, self.layers[1:]):
            if a.out_dim != b.in_dim:
                raise ShapeError(
                    f"layer dims do not compose: {a.out_dim} -> {b.in_dim}"
                )

    @property
    def T(self) -> int:
        return len(self.layers)

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    def state_dim(self, t: int) -> int:
        """Dimension of the state x_t entering layer t (t = T gives the output)."""
        if t < self.T:
            return self.layers[t].in_dim
        return self.layers[-1].out_dim

    def copy(self) -> "LayeredNetwork":
        return LayeredNetwork(
            [replace(l, weight=l.weight.copy(), bias=l.bias.copy()) for l in self.layers]
        )


@dataclass
class Trajectory:
    """States x_0 .. x_T from one forward pass, plus the controls that produced it."""

    states: list[FloatArray]
    controls: list[FloatArray] | None  # None means the uncontrolled pass

    @property
    def logits(self) -> FloatArray:
        return self.states[-1]


def _check_controls(net: LayeredNetwork, controls) -> list[FloatArray] | None:
    if controls is None:
        return None
    us = list(controls.controls) if hasattr(controls, "controls") else list(controls)
    if len(us) != net.T:
        raise ShapeError(f"expected {net.T} controls, got {len(us)}")
    out = []
    for t, u in enumerate(us):
        u = as_vector(u, f"control u_{t}")
        if u.shape[0] != net.layers[t].in_dim:
            raise ShapeError(
                f"control u_{t} has dim {u.shape[0]}, layer expects {net.layers[t].in_dim}"
            )
        out.append(u)
    return out


def forward_controlled(net: LayeredNetwork, x0, controls) -> Trajectory:
    """Propagate x0 through the network with additive per-layer controls.

    ``controls`` may be None (plain forward pass), a sequence of vectors,
    or anything exposing a ``controls`` attribute.
    """
    x = as_vector(x0, "x0")
    if x.shape[0] != net.in_dim:
        raise ShapeError(f"input dim {x.shape[0]} != network input {net.in_dim}")
    us = _check_controls(net, controls)
    states = [x]
    for t, layer in enumerate(net.layers):
        z = states[t] if us is None else states[t] + us[t]
        states.append(layer.apply(z))
    return Trajectory(states=states, controls=us)


def forward(net: LayeredNetwork, x0) -> Trajectory:
    """Uncontrolled forward pass."""
    return forward_controlled(net, x0, None)


def _layer_inputs(net: LayeredNetwork, traj: Trajectory) -> list[FloatArray]:
    if len(traj.states) != net.T + 1:
        raise ConsistencyError(
            f"trajectory has {len(traj.states)} states, network expects {net.T + 1}"
        )
    for t in range(net.T):
        if traj.states[t].shape[0] != net.layers[t].in_dim:
            raise ConsistencyError(f"state x_{t} does not match layer {t} input dim")
    if traj.controls is None:
        return list(traj.states[:-1])
    return [traj.states[t] + traj.controls[t] for t in range(net.T)]


def backward_gradients(
    net: LayeredNetwork, traj: Trajectory, upstream
) -> tuple[FloatArray, list[tuple[FloatArray, FloatArray]], list[FloatArray]]:
    """Exact reverse-mode gradients of a scalar with gradient ``upstream`` at x_T.

    Returns (grad wrt x_0, [(dW_t, db_t)], [grad wrt u_t]).  Because the
    control enters as x_t + u_t, its gradient equals the state gradient
    flowing into layer t.
    """
    g = as_vector(upstream, "upstream")
    if g.shape[0] != net.out_dim:
        raise ConsistencyError("upstream gradient does not match output dim")
    zs = _layer_inputs(net, traj)
    param_grads: list[tuple[FloatArray, FloatArray]] = [None] * net.T  # type: ignore
    control_grads: list[FloatArray] = [None] * net.T  # type: ignore
    for t in range(net.T - 1, -1, -1):
        g, dw, db = net.layers[t].vjp(zs[t], g)
        param_grads[t] = (dw, db)
        control_grads[t] = g
    return g, param_grads, control_grads


# --------------------------------------------------------------------------
# losses and training


def softmax(logits: FloatArray) -> FloatArray:
    z = logits - np.max(logits)
    e = np.exp(z)
    return e / np.sum(e)


def cross_entropy(logits, target) -> float:
    """Softmax cross-entropy between logits and a target distribution."""
    lo = as_vector(logits, "logits")
    ta = as_vector(target, "target")
    if lo.shape != ta.shape:
        raise ShapeError("logits and target must have the same length")
    if np.any(ta < -1e-12) or abs(float(np.sum(ta)) - 1.0) > 1e-9:
        raise DataError("target is not a probability distribution")
    z = lo - np.max(lo)
    log_probs = z - math.log(float(np.sum(np.exp(z))))
    return float(-np.dot(ta, log_probs))


def cross_entropy_grad(logits: FloatArray, target: FloatArray) -> FloatArray:
    """Gradient of cross_entropy with respect to the logits."""
    return softmax(logits) - target


def one_hot(label: int, n_classes: int) -> FloatArray:
    v = np.zeros(n_classes)
    v[label] = 1.0
    return v


def smooth_labels(labels: np.ndarray, n_classes: int, eps_ls: float) -> FloatArray:
    """Soft targets: correct class 1 - eps_ls, all others eps_ls / (N - 1)."""
    if not 0.0 <= eps_ls < 1.0:
        raise ConfigError(f"smoothing must lie in [0, 1), got {eps_ls}")
    if n_classes < 2:
        raise ConfigError("label smoothing needs at least 2 classes")
    t = np.full((len(labels), n_classes), eps_ls / (n_classes - 1))
    t[np.arange(len(labels)), labels] = 1.0 - eps_ls
    return t


@dataclass
class TrainConfig:
    """Hyperparameters for offline training of the base network."""

    step_size: float = 0.1
    epochs: int = 200
    batch_size: int = 64
    seed: int = 0
    momentum: float = 0.9
    mode: str = "standard"  # standard | fgsm-adversarial | label-smooth
    lam: float = 0.5  # adversarial mix: (1 - lam) perturbed + lam clean
    eps_ls: float = 0.1  # label-smoothing mass moved off the true class
    attack_eps: float = 0.1  # FGSM radius used by fgsm-adversarial mode

    def __post_init__(self):
        if self.step_size <= 0:
            raise ConfigError("step size must be positive")
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError("lambda must lie in [0, 1]")
        if not 0.0 <= self.eps_ls < 1.0:
            raise ConfigError("smoothing must lie in [0, 1)")
        if self.mode not in ("standard", "fgsm-adversarial", "label-smooth"):
            raise ConfigError(f"unknown training mode {self.mode!r}")


def _unpack_dataset(dataset) -> tuple[FloatArray, np.ndarray]:
    if hasattr(dataset, "inputs") and hasattr(dataset, "labels"):
        xs, ys = dataset.inputs, dataset.labels
    else:
        xs, ys = dataset
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys)
    if xs.ndim != 2 or len(xs) != len(ys):
        raise DataError("dataset must provide matching inputs (n, d) and labels (n,)")
    if len(xs) == 0:
        raise DataError("dataset is empty")
    return xs, ys


def _batch_states(net: LayeredNetwork, xs: FloatArray) -> list[FloatArray]:
    """Row-wise forward pass over an (n, d) batch; returns states per boundary."""
    states = [xs]
    for layer in net.layers:
        pre = states[-1] @ layer.weight.T + layer.bias
        if layer.kind == "classifier":
            out = pre
        else:
            out = _act(layer.activation, pre)
            if layer.kind == "residual":
                out = states[-1] + out
        states.append(out)
    return states


def _batch_grads(net: LayeredNetwork, xs: FloatArray, targets: FloatArray):
    """Summed cross-entropy parameter gradients and per-row input gradients."""
    states = _batch_states(net, xs)
    logits = states[-1]
    shifted = logits - logits.max(axis=1, keepdims=True)
    probs = np.exp(shifted)
    probs /= probs.sum(axis=1, keepdims=True)
    g = probs - targets
    param_grads: list[tuple[FloatArray, FloatArray]] = [None] * net.T  # type: ignore
    for t in range(net.T - 1, -1, -1):
        layer = net.layers[t]
        z = states[t]
        if layer.kind == "classifier":
            s = g
            g_prev = s @ layer.weight
        else:
            pre = z @ layer.weight.T + layer.bias
            s = _act_deriv(layer.activation, pre) * g
            g_prev = s @ layer.weight
            if layer.kind == "residual":
                g_prev = g_prev + g
        param_grads[t] = (s.T @ z, s.sum(axis=0))
        g = g_prev
    return param_grads, g


def dataset_loss(net: LayeredNetwork, dataset) -> float:
    """Mean cross-entropy of the uncontrolled network over a labelled dataset."""
    xs, ys = _unpack_dataset(dataset)
    logits = _batch_states(net, xs)[-1]
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    true_logit = shifted[np.arange(len(xs)), ys.astype(int)]
    return float(np.mean(log_norm - true_logit))


def train(net: LayeredNetwork, dataset, cfg: TrainConfig) -> LayeredNetwork:
    """Mini-batch gradient descent with momentum; returns a new trained network.

    Modes: ``standard`` plain cross-entropy; ``fgsm-adversarial`` mixes the
    loss on sign-gradient-perturbed inputs (weight 1 - lambda) with the
    clean loss (weight lambda); ``label-smooth`` trains against smoothed
    targets.  Deterministic for a fixed seed.
    """
    xs, ys = _unpack_dataset(dataset)
    model = net.copy()
    n_classes = model.out_dim
    if np.any(ys < 0) or np.any(ys >= n_classes):
        raise DataError("labels out of class range")
    if cfg.mode == "label-smooth":
        targets = smooth_labels(ys, n_classes, cfg.eps_ls)
    else:
        targets = smooth_labels(ys, n_classes, 0.0)

    rng = np.random.default_rng(cfg.seed)
    velocity = [(np.zeros_like(l.weight), np.zeros_like(l.bias)) for l in model.layers]
    n = len(xs)
    bs = min(cfg.batch_size, n)

    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, bs):
            idx = order[start : start + bs]
            xb, tb = xs[idx], targets[idx]
            if cfg.mode == "fgsm-adversarial":
                acc = [(np.zeros_like(l.weight), np.zeros_like(l.bias))
                       for l in model.layers]
                if cfg.lam < 1.0:
                    _, x_grads = _batch_grads(model, xb, tb)
                    xb_adv = xb + cfg.attack_eps * np.sign(x_grads)
                    g_adv, _ = _batch_grads(model, xb_adv, tb)
                    for t, (dw, db) in enumerate(g_adv):
                        w = 1.0 - cfg.lam
                        acc[t] = (acc[t][0] + w * dw, acc[t][1] + w * db)
                if cfg.lam > 0.0:
                    g_clean, _ = _batch_grads(model, xb, tb)
                    for t, (dw, db) in enumerate(g_clean):
                        acc[t] = (acc[t][0] + cfg.lam * dw, acc[t][1] + cfg.lam * db)
            else:
                acc, _ = _batch_grads(model, xb, tb)
            scale = 1.0 / len(idx)
            for t, layer in enumerate(model.layers):
                vw = cfg.momentum * velocity[t][0] - cfg.step_size * scale * acc[t][0]
                vb = cfg.momentum * velocity[t][1] - cfg.step_size * scale * acc[t][1]
                velocity[t] = (vw, vb)
                layer.weight = layer.weight + vw
                layer.bias = layer.bias + vb
    return model


def random_network(layer_specs: list[tuple], seed: int) -> LayeredNetwork:
    """Build a network with Glorot-scaled random weights.

    ``layer_specs`` is a list of (kind, in_dim, out_dim, activation).
    """
    rng = np.random.default_rng(seed)
    layers = []
    for kind, d_in, d_out, act in layer_specs:
        scale = math.sqrt(2.0 / (d_in + d_out))
        w = rng.standard_normal((d_out, d_in)) * scale
        b = np.zeros(d_out)
        layers.append(LayerSpec(kind=kind, weight=w, bias=b, activation=act))
    return LayeredNetwork(layers)


def predict_label(net: LayeredNetwork, x) -> int:
    return int(np.argmax(forward(net, x).logits))


def accuracy(net: LayeredNetwork, dataset) -> float:
    xs, ys = _unpack_dataset(dataset)
    logits = _batch_states(net, xs)[-1]
    return float(np.mean(np.argmax(logits, axis=1) == ys.astype(int)))
