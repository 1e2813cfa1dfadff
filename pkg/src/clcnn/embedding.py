"""Per-layer manifold embeddings and their reconstruction losses.

An embedding maps a hidden state onto the low-dimensional region the
clean data occupies at that layer and back to the full state space; the
squared residual of that round trip measures how far a state has been
pushed off the clean manifold.  Two families are provided: an orthogonal
projection onto the leading principal subspace (the workhorse, and the
form the linear error theory assumes), and a small dense autoencoder for
the nonlinear variant.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, ShapeError
from .linalg import FloatArray, as_vector, check_orthonormal, sym_eig
from .network import LayeredNetwork, forward

#: default truncation: keep the smallest r capturing >= 1 - delta of the
#: second-moment spectrum
DEFAULT_DELTA = 0.1


@dataclass
class PcaEmbedding:
    """Orthogonal projection onto the span of the leading principal directions.

    The default is the uncentered form E(x) = V V^T x; an optional mean
    turns it into the affine projection E(x) = mean + V V^T (x - mean).
    """

    basis: FloatArray  # (d, r), orthonormal columns
    mean: FloatArray | None = None
    retained_ratio: float = 1.0
    layer_index: int = 0

    def __post_init__(self):
        self.basis = check_orthonormal(self.basis, tol=1e-8, name="PCA basis")
        if self.mean is not None:
            self.mean = as_vector(self.mean, "mean")
            if self.mean.shape[0] != self.basis.shape[0]:
                raise ShapeError("mean dimension does not match basis")
        if not 0.0 < self.retained_ratio <= 1.0 + 1e-12:
            raise ConfigError("retained ratio must lie in (0, 1]")

    @property
    def dim(self) -> int:
        return self.basis.shape[0]

    @property
    def rank(self) -> int:
        return self.basis.shape[1]

    def _centered(self, x: FloatArray) -> FloatArray:
        return x if self.mean is None else x - self.mean

    def reconstruct(self, x) -> FloatArray:
        x = as_vector(x)
        if x.shape[0] != self.dim:
            raise ShapeError(f"state dim {x.shape[0]} != embedding dim {self.dim}")
        c = self._centered(x)
        proj = self.basis @ (self.basis.T @ c)
        return proj if self.mean is None else self.mean + proj

    def loss(self, x) -> float:
        r = self.reconstruct(x) - as_vector(x)
        return float(np.dot(r, r))

    def loss_gradient(self, x) -> FloatArray:
        # loss = ||Q (x - mean)||^2 with Q = I - V V^T, so grad = 2 Q (x - mean)
        x = as_vector(x)
        c = self._centered(x)
        return 2.0 * (c - self.basis @ (self.basis.T @ c))


def pca_fit(states, delta: float = DEFAULT_DELTA, *, center: bool = False,
            layer_index: int = 0) -> PcaEmbedding:
    """Fit a principal-subspace projection to a collection of state vectors.

    The rank r is the smallest i whose leading eigenvalues of the (by
    default uncentered) second-moment matrix capture at least 1 - delta
    of the total spectrum.
    """
    xs = np.asarray(states, dtype=np.float64)
    if xs.ndim != 2:
        raise ShapeError("states must form an (n, d) collection")
    n, d = xs.shape
    if n < 2:
        raise DataError(f"need at least 2 samples to fit, got {n}")
    if not 0.0 < delta < 1.0:
        raise ConfigError(f"delta must lie in (0, 1), got {delta}")
    mean = xs.mean(axis=0) if center else None
    centered = xs - mean if center else xs
    moment = centered.T @ centered / n
    evals, evecs = sym_eig(moment)
    evals = np.clip(evals, 0.0, None)
    total = float(np.sum(evals))
    if total <= 0.0:
        raise DataError("states have zero second moment; nothing to embed")
    ratios = np.cumsum(evals) / total
    r = int(np.searchsorted(ratios, 1.0 - delta - 1e-15) + 1)
    r = min(r, d)
    return PcaEmbedding(
        basis=evecs[:, :r],
        mean=mean,
        retained_ratio=float(ratios[r - 1]),
        layer_index=layer_index,
    )


# --------------------------------------------------------------------------
# dense autoencoder (nonlinear variant)


def _elu(z: FloatArray) -> FloatArray:
    return np.where(z > 0.0, z, np.expm1(z))


def _elu_deriv(z: FloatArray) -> FloatArray:
    return np.where(z > 0.0, 1.0, np.exp(z))


@dataclass
class _Dense:
    weight: FloatArray
    bias: FloatArray
    activation: str  # elu | identity

    def apply(self, z: FloatArray) -> FloatArray:
        pre = self.weight @ z + self.bias
        return _elu(pre) if self.activation == "elu" else pre

    def vjp(self, z: FloatArray, g: FloatArray):
        pre = self.weight @ z + self.bias
        s = _elu_deriv(pre) * g if self.activation == "elu" else g
        return self.weight.T @ s, np.outer(s, z), s


@dataclass
class AutoencoderEmbedding:
    """Dense encoder/decoder pair; reconstruct(x) = decoder(encoder(x))."""

    encoder: list[_Dense]
    decoder: list[_Dense]
    layer_index: int = 0

    def __post_init__(self):
        if self.decoder[-1].weight.shape[0] != self.encoder[0].weight.shape[1]:
            raise ShapeError("decoder output dim must equal encoder input dim")

    @property
    def dim(self) -> int:
        return self.encoder[0].weight.shape[1]

    def _stack(self) -> list[_Dense]:
        return self.encoder + self.decoder

    def reconstruct(self, x) -> FloatArray:
        z = as_vector(x)
        if z.shape[0] != self.dim:
            raise ShapeError(f"state dim {z.shape[0]} != embedding dim {self.dim}")
        for layer in self._stack():
            z = layer.apply(z)
        return z

    def loss(self, x) -> float:
        r = self.reconstruct(x) - as_vector(x)
        return float(np.dot(r, r))

    def loss_gradient(self, x) -> FloatArray:
        x = as_vector(x)
        layers = self._stack()
        zs = [x]
        for layer in layers:
            zs.append(layer.apply(zs[-1]))
        resid = zs[-1] - x
        g = 2.0 * resid
        for layer, z in zip(reversed(layers), reversed(zs[:-1])):
            g, _, _ = layer.vjp(z, g)
        return g - 2.0 * resid

    def _param_grads(self, x: FloatArray):
        layers = self._stack()
        zs = [x]
        for layer in layers:
            zs.append(layer.apply(zs[-1]))
        resid = zs[-1] - x
        g = 2.0 * resid
        grads = [None] * len(layers)
        for i in range(len(layers) - 1, -1, -1):
            g, dw, db = layers[i].vjp(zs[i], g)
            grads[i] = (dw, db)
        return float(np.dot(resid, resid)), grads


def autoencoder_fit(states, widths=(8, 2), *, step_size: float = 0.05,
                    epochs: int = 500, seed: int = 0, momentum: float = 0.9,
                    activation: str = "elu", layer_index: int = 0) -> AutoencoderEmbedding:
    """Train a dense autoencoder to minimize mean squared reconstruction loss.

    ``widths`` lists the encoder layer widths after the input, ending at
    the bottleneck; the decoder mirrors them back.  Full-batch gradient
    descent with momentum, deterministic for a fixed seed.
    """
    xs = np.asarray(states, dtype=np.float64)
    if xs.ndim != 2 or len(xs) < 2:
        raise DataError("need an (n >= 2, d) collection of states")
    d = xs.shape[1]
    widths = tuple(int(w) for w in widths)
    if widths[-1] >= d:
        raise ConfigError(f"bottleneck {widths[-1]} must be smaller than dim {d}")
    if activation not in ("elu", "identity"):
        raise ConfigError(f"unknown activation {activation!r}")

    rng = np.random.default_rng(seed)

    def make(dims_in, dims_out, act):
        scale = np.sqrt(2.0 / (dims_in + dims_out))
        return _Dense(
            weight=rng.standard_normal((dims_out, dims_in)) * scale,
            bias=np.zeros(dims_out),
            activation=act,
        )

    enc_dims = (d,) + widths
    encoder = [make(a, b, activation) for a, b in zip(enc_dims, enc_dims[1:])]
    dec_dims = tuple(reversed(enc_dims))
    decoder = [make(a, b, activation) for a, b in zip(dec_dims, dec_dims[1:-1] + (d,))]
    decoder[-1].activation = "identity"  # open output range
    ae = AutoencoderEmbedding(encoder=encoder, decoder=decoder, layer_index=layer_index)

    layers = ae._stack()
    velocity = [(np.zeros_like(l.weight), np.zeros_like(l.bias)) for l in layers]
    n = len(xs)
    for _ in range(epochs):
        acc = [(np.zeros_like(l.weight), np.zeros_like(l.bias)) for l in layers]
        for x in xs:
            _, grads = ae._param_grads(x)
            for i, (dw, db) in enumerate(grads):
                acc[i] = (acc[i][0] + dw, acc[i][1] + db)
        for i, layer in enumerate(layers):
            vw = momentum * velocity[i][0] - step_size * acc[i][0] / n
            vb = momentum * velocity[i][1] - step_size * acc[i][1] / n
            velocity[i] = (vw, vb)
            layer.weight = layer.weight + vw
            layer.bias = layer.bias + vb
    return ae


# --------------------------------------------------------------------------
# generic entry points and per-network sets

Embedding = PcaEmbedding | AutoencoderEmbedding


def reconstruct(e: Embedding, x) -> FloatArray:
    return e.reconstruct(x)


def reconstruction_loss(e: Embedding, x) -> float:
    return e.loss(x)


def reconstruction_loss_gradient(e: Embedding, x) -> FloatArray:
    return e.loss_gradient(x)


@dataclass
class EmbeddingSet:
    """One embedding per controlled layer, indexed 0 .. T-1."""

    embeddings: list[Embedding]

    def __post_init__(self):
        idx = sorted(e.layer_index for e in self.embeddings)
        if idx != list(range(len(self.embeddings))):
            raise ConfigError(f"layer indices must be 0..T-1 exactly once, got {idx}")
        self.embeddings = sorted(self.embeddings, key=lambda e: e.layer_index)

    def __len__(self) -> int:
        return len(self.embeddings)

    def __iter__(self):
        return iter(self.embeddings)

    def for_layer(self, t: int) -> Embedding:
        return self.embeddings[t]


def collect_states(net: LayeredNetwork, inputs) -> list[FloatArray]:
    """Stack uncontrolled hidden states per layer boundary t = 0 .. T-1."""
    xs = np.asarray(inputs, dtype=np.float64)
    if xs.ndim != 2 or len(xs) == 0:
        raise DataError("inputs must form a nonempty (n, d) collection")
    per_layer = [[] for _ in range(net.T)]
    for x in xs:
        traj = forward(net, x)
        for t in range(net.T):
            per_layer[t].append(traj.states[t])
    return [np.vstack(states) for states in per_layer]


def fit_embedding_set(net: LayeredNetwork, clean_inputs, delta: float = DEFAULT_DELTA,
                      kind: str = "pca", *, center: bool = False,
                      ae_hidden: int | None = None, ae_epochs: int = 500,
                      seed: int = 0) -> EmbeddingSet:
    """Fit one embedding per layer boundary from clean forward trajectories.

    For ``kind="autoencoder"`` the bottleneck width at each layer is taken
    from the PCA truncation rule at the same delta, so the two variants
    compress to comparable ranks.
    """
    if kind not in ("pca", "autoencoder"):
        raise ConfigError(f"unknown embedding kind {kind!r}")
    per_layer = collect_states(net, clean_inputs)
    embeddings: list[Embedding] = []
    for t, states in enumerate(per_layer):
        pca = pca_fit(states, delta, center=center, layer_index=t)
        if kind == "pca":
            embeddings.append(pca)
            continue
        d = states.shape[1]
        bottleneck = min(pca.rank, d - 1) if d > 1 else 1
        hidden = ae_hidden if ae_hidden is not None else max(d, 2 * bottleneck)
        embeddings.append(
            autoencoder_fit(states, (hidden, bottleneck), epochs=ae_epochs,
                            seed=seed + t, layer_index=t)
        )
    return EmbeddingSet(embeddings)
