"""Small encoders with hand-written backprop, plus their optimizer and IO.

Two architectures: a linear map and a one-hidden-layer tanh MLP. Both end
in row-wise unit normalization so embeddings live on the unit sphere; the
backward pass therefore includes the normalization Jacobian.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ENCODER_MAGIC = "subtail-enc v1"

# Pre-normalization rows with norm below this are treated as a collapsed
# encoder and rejected rather than silently regularized.
_COLLAPSE_NORM = 1e-12

ARCHS = ("linear", "mlp1")


class EncoderFormatError(ValueError):
    """Raised for malformed encoder checkpoint files."""


class EncoderCollapseError(FloatingPointError):
    """Raised when a pre-normalization output row has a vanishing norm."""


@dataclass(frozen=True)
class AugmentationConfig:
    """Input-space Gaussian noise standing in for view augmentation."""

    sigma: float = 0.5

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")


def augment(inputs, config: AugmentationConfig, rng: np.random.Generator) -> np.ndarray:
    """Additive i.i.d. Gaussian perturbation of the raw inputs."""
    inputs = np.asarray(inputs, dtype=np.float64)
    if config.sigma == 0:
        return inputs.copy()
    return inputs + config.sigma * rng.standard_normal(inputs.shape)


@dataclass(frozen=True)
class EncoderConfig:
    arch: str
    input_dim: int
    embed_dim: int
    hidden_dim: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise ValueError(f"arch must be one of {ARCHS}")
        if self.input_dim < 1 or self.embed_dim < 1:
            raise ValueError("input_dim and embed_dim must be >= 1")
        if self.arch == "mlp1" and self.hidden_dim < 1:
            raise ValueError("mlp1 needs hidden_dim >= 1")
        if self.arch == "linear" and self.hidden_dim != 0:
            raise ValueError("linear encoder takes hidden_dim=0")

    @property
    def dims(self) -> tuple[int, ...]:
        if self.arch == "linear":
            return (self.input_dim, self.embed_dim)
        return (self.input_dim, self.hidden_dim, self.embed_dim)


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class Encoder:
    """Parametric map from inputs to unit-norm embeddings.

    Parameters are a flat list of arrays in a fixed order: (W, b) for
    linear, (W1, b1, W2, b2) for mlp1. `forward` returns a cache that
    `backward` consumes; `backward` takes the gradient w.r.t. the
    normalized embeddings and returns per-parameter gradients.
    """

    def __init__(self, config: EncoderConfig, params: list[np.ndarray]):
        self.config = config
        self.params = params
        shapes = [p.shape for p in params]
        if shapes != self.param_shapes(config):
            raise ValueError(f"parameter shapes {shapes} do not match {config}")

    @staticmethod
    def param_shapes(config: EncoderConfig) -> list[tuple[int, ...]]:
        if config.arch == "linear":
            return [(config.input_dim, config.embed_dim), (config.embed_dim,)]
        return [
            (config.input_dim, config.hidden_dim),
            (config.hidden_dim,),
            (config.hidden_dim, config.embed_dim),
            (config.embed_dim,),
        ]

    @classmethod
    def init(cls, config: EncoderConfig) -> "Encoder":
        rng = np.random.default_rng(np.random.SeedSequence(config.seed))
        if config.arch == "linear":
            params = [
                _glorot(rng, config.input_dim, config.embed_dim),
                np.zeros(config.embed_dim),
            ]
        else:
            params = [
                _glorot(rng, config.input_dim, config.hidden_dim),
                np.zeros(config.hidden_dim),
                _glorot(rng, config.hidden_dim, config.embed_dim),
                np.zeros(config.embed_dim),
            ]
        return cls(config, params)

    def num_params(self) -> int:
        return int(sum(p.size for p in self.params))

    def forward(self, x: np.ndarray):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.config.input_dim:
            raise ValueError(f"inputs must be 2d with width {self.config.input_dim}")
        if self.config.arch == "linear":
            w, b = self.params
            u = x @ w + b
            hidden = None
        else:
            w1, b1, w2, b2 = self.params
            hidden = np.tanh(x @ w1 + b1)
            u = hidden @ w2 + b2
        norms = np.linalg.norm(u, axis=1, keepdims=True)
        if np.any(norms < _COLLAPSE_NORM):
            raise EncoderCollapseError(
                "encoder output collapsed: a pre-normalization row has near-zero norm"
            )
        z = u / norms
        return z, (x, hidden, z, norms)

    def embed(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, cache, dz: np.ndarray):
        """Map a gradient w.r.t. the unit embeddings back to parameters
        and inputs. Returns (param_grads, input_grads)."""
        x, hidden, z, norms = cache
        # unit-norm Jacobian: du = (g - (g.z) z) / ||u||
        du = (dz - (dz * z).sum(axis=1, keepdims=True) * z) / norms
        if self.config.arch == "linear":
            w, _ = self.params
            return [x.T @ du, du.sum(axis=0)], du @ w.T
        w1, _, w2, _ = self.params
        dpre = (du @ w2.T) * (1.0 - hidden * hidden)
        grads = [x.T @ dpre, dpre.sum(axis=0), hidden.T @ du, du.sum(axis=0)]
        return grads, dpre @ w1.T


class MomentumSGD:
    """SGD with classical momentum and a cosine-decayed learning rate.

    lr(t) = base * 0.5 * (1 + cos(pi * t / total_epochs)), t in [0, T].
    Velocity update v <- mu v + g, then theta <- theta - lr v.
    """

    def __init__(self, encoder: Encoder, base_lr: float, momentum: float, total_epochs: int):
        if base_lr <= 0 or not 0 <= momentum < 1 or total_epochs < 1:
            raise ValueError("need base_lr > 0, 0 <= momentum < 1, total_epochs >= 1")
        self.encoder = encoder
        self.base_lr = base_lr
        self.momentum = momentum
        self.total_epochs = total_epochs
        self.velocity = [np.zeros_like(p) for p in encoder.params]

    def lr_at(self, epoch: int) -> float:
        frac = min(max(epoch, 0), self.total_epochs) / self.total_epochs
        return self.base_lr * 0.5 * (1.0 + np.cos(np.pi * frac))

    def step(self, grads: list[np.ndarray], epoch: int) -> None:
        lr = self.lr_at(epoch)
        for p, v, g in zip(self.encoder.params, self.velocity, grads):
            v *= self.momentum
            v += g
            p -= lr * v


def save_encoder(enc: Encoder, path) -> None:
    dims = ",".join(str(d) for d in enc.config.dims)
    header = f"{ENCODER_MAGIC} arch={enc.config.arch} dims={dims}\n"
    with open(path, "wb") as f:
        f.write(header.encode("ascii"))
        for p in enc.params:
            f.write(np.ascontiguousarray(p, dtype="<f8").tobytes())


def load_encoder(path, seed: int = 0) -> Encoder:
    with open(path, "rb") as f:
        header = f.readline().decode("ascii", errors="replace").rstrip("\n")
        payload = f.read()
    fields = {}
    parts = header.split()
    if " ".join(parts[:2]) != ENCODER_MAGIC:
        raise EncoderFormatError(f"malformed header: unrecognized magic in {header!r}")
    for tok in parts[2:]:
        key, _, val = tok.partition("=")
        fields[key] = val
    try:
        arch = fields["arch"]
        dims = tuple(int(v) for v in fields["dims"].split(","))
    except (KeyError, ValueError) as exc:
        raise EncoderFormatError(f"malformed header: {header!r}") from exc
    if arch == "linear" and len(dims) == 2:
        config = EncoderConfig("linear", dims[0], dims[1], seed=seed)
    elif arch == "mlp1" and len(dims) == 3:
        config = EncoderConfig("mlp1", dims[0], dims[2], hidden_dim=dims[1], seed=seed)
    else:
        raise EncoderFormatError(f"malformed header: arch/dims mismatch in {header!r}")
    shapes = Encoder.param_shapes(config)
    expected = sum(int(np.prod(s)) for s in shapes) * 8
    if len(payload) != expected:
        raise EncoderFormatError(
            f"parameter payload is {len(payload)} bytes, expected {expected}"
        )
    params = []
    offset = 0
    for shape in shapes:
        size = int(np.prod(shape))
        block = np.frombuffer(payload, dtype="<f8", count=size, offset=offset * 8)
        params.append(block.astype(np.float64).reshape(shape))
        offset += size
    return Encoder(config, params)
