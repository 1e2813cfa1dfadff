"""Comparison defenses against the trajectory-control solver.

Two cheaper strategies over the same embeddings: projecting the input
once and running the network unchanged (reactive), and applying the
closed-form greedy control independently at every layer (layer-wise).
Both return the full trajectory so callers can read predictions from the
logits and score the applied controls under the global objective.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError
from .linalg import as_vector
from .network import LayeredNetwork, Trajectory, forward
from .embedding import PcaEmbedding
from .theory import greedy_control


def _require_pca(e, where: str) -> PcaEmbedding:
    if not isinstance(e, PcaEmbedding):
        raise ConfigError(f"{where} requires a PCA embedding, got {type(e).__name__}")
    return e


def reactive_defense(net: LayeredNetwork, x_eps, embedding0) -> Trajectory:
    """Project the input onto the layer-0 subspace, then run uncontrolled.

    The prediction is the argmax of the returned logits.
    """
    e0 = _require_pca(embedding0, "reactive defense")
    if e0.layer_index != 0:
        raise ConfigError("reactive defense needs the layer-0 embedding")
    x_bar = e0.reconstruct(as_vector(x_eps, "x_eps"))
    return forward(net, x_bar)


def layerwise_projection(net: LayeredNetwork, x_eps, embeddings, c: float) -> Trajectory:
    """Apply the greedy analytic control independently at every layer.

    Each u_t minimizes that layer's local index
    0.5 ||Q_t (x_t + u_t)||^2 + 0.5 c ||u_t||^2 against the layer's PCA
    basis; the controls ride along in the returned trajectory.
    """
    x = as_vector(x_eps, "x_eps")
    es = list(embeddings)
    if len(es) != net.T:
        raise ConfigError(f"need one embedding per layer 0..{net.T - 1}")
    states = [x]
    controls = []
    for t, layer in enumerate(net.layers):
        e = _require_pca(es[t], "layer-wise projection")
        x_t = states[t]
        centered = x_t if e.mean is None else x_t - e.mean
        u_t = greedy_control(centered, e.basis, c)
        controls.append(u_t)
        states.append(layer.apply(x_t + u_t))
    return Trajectory(states=states, controls=controls)
