"""Neural surrogate for the functional: a small MLP that maps 1RDM features to a frame.

The network outputs skew coordinates; the frame is the trivialization of that
output, so every prediction is orthonormal no matter what the weights are.
Training minimizes the summed functional over a grid of 1RDMs.  Gradients are
written out by hand (dense layers, ELU, the exponential's Frechet adjoint,
the bilinear interaction form).  ``dF/deta`` uses forward mode in the scalar
``eta``.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import __version__, manifold
from .functional import SubspaceBasis, _fixed_basis_derivative, full_subspace, mott_subspace
from .optim import AdamW
from .rdm import OneBodyRDM, spectral

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1

# default network and optimizer settings keyed by (sites, particles)
_DEFAULTS = {
    (2, 2): dict(hidden=(20, 20), lr=3e-5, epochs=10000),
    (4, 4): dict(hidden=(400, 400), lr=1e-5, epochs=20000),
}


class TrainingDivergence(ArithmeticError):
    """Non-finite loss during training; ``history`` holds the losses up to that epoch."""

    def __init__(self, message: str, history: list[float]):
        super().__init__(message)
        self.history = history


@dataclass(frozen=True)
class NetworkConfig:
    hidden: tuple[int, int] = (20, 20)
    lr: float = 3e-5
    epochs: int = 10000
    momentum: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if len(self.hidden) != 2 or min(self.hidden) < 1:
            raise ValueError(f"need two positive hidden sizes, got {self.hidden}")
        # lr = 0 is allowed as a no-op; the CLI insists on lr > 0
        if not (self.lr >= 0 and math.isfinite(self.lr)):
            raise ValueError(f"learning rate must be finite and nonnegative, got {self.lr}")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not (0 <= self.momentum < 1 and 0 <= self.beta2 < 1 and self.eps > 0 and self.weight_decay >= 0):
            raise ValueError("invalid optimizer constants")

    @classmethod
    def defaults(cls, sites: int, particles: int, **overrides) -> "NetworkConfig":
        base = dict(_DEFAULTS.get((sites, particles), _DEFAULTS[(2, 2)]))
        base.update(overrides)
        return cls(**base)


def featurize(gamma: OneBodyRDM) -> np.ndarray:
    """``(eta, eta^2, flatten(U diag(n)))`` with ``eta = gamma_01``."""
    spec = spectral(gamma)
    eta = float(np.asarray(gamma.matrix)[0, 1])
    us = spec.vectors * spec.values
    return np.concatenate([[eta, eta * eta], us.ravel()])


def elu(z: np.ndarray) -> np.ndarray:
    return np.where(z > 0, z, np.expm1(np.minimum(z, 0.0)))


def elu_grad(z: np.ndarray) -> np.ndarray:
    return np.where(z > 0, 1.0, np.exp(np.minimum(z, 0.0)))


@dataclass
class SurrogateModel:
    sites: int
    particles: int
    subspace: str
    config: NetworkConfig
    params: np.ndarray
    epochs_trained: int = 0
    history: list = field(default_factory=list)

    @classmethod
    def create(cls, sites: int, particles: int, subspace: str = "full",
               config: NetworkConfig | None = None) -> "SurrogateModel":
        cfg = config or NetworkConfig.defaults(sites, particles)
        model = cls(sites, particles, subspace, cfg, np.zeros(0))
        rng = np.random.default_rng(cfg.seed)
        chunks = []
        for fan_out, fan_in in model.layer_shapes:
            bound = 1.0 / math.sqrt(fan_in)
            chunks.append(rng.uniform(-bound, bound, fan_out * fan_in))
            chunks.append(rng.uniform(-bound, bound, fan_out))
        model.params = np.concatenate(chunks)
        return model

    @property
    def sub(self) -> SubspaceBasis:
        key = (self.sites, self.particles, self.subspace)
        if getattr(self, "_sub_key", None) != key:
            if self.subspace == "full":
                self._sub = full_subspace(self.sites, self.particles)
            elif self.subspace == "mott":
                self._sub = mott_subspace(self.sites, self.particles // self.sites)
            else:
                raise ValueError(f"unknown subspace {self.subspace!r}")
            self._sub_key = key
        return self._sub

    @property
    def frame_dim(self) -> int:
        return self.sub.dim

    @property
    def input_width(self) -> int:
        return 2 + self.sites**2

    @property
    def output_width(self) -> int:
        return manifold.n_coords(self.frame_dim)

    @property
    def layer_shapes(self) -> list[tuple[int, int]]:
        h1, h2 = self.config.hidden
        return [(h1, self.input_width), (h2, h1), (self.output_width, h2)]

    def layers(self, params: np.ndarray | None = None) -> list[tuple[np.ndarray, np.ndarray]]:
        """Views ``(W, b)`` into the flat parameter vector."""
        p = self.params if params is None else params
        out, pos = [], 0
        for fan_out, fan_in in self.layer_shapes:
            w = p[pos:pos + fan_out * fan_in].reshape(fan_out, fan_in)
            pos += fan_out * fan_in
            b = p[pos:pos + fan_out]
            pos += fan_out
            out.append((w, b))
        if pos != p.size:
            raise ValueError(f"parameter vector has {p.size} entries, architecture needs {pos}")
        return out

    def _network(self, x: np.ndarray, params=None):
        (w1, b1), (w2, b2), (w3, b3) = self.layers(params)
        z1 = x @ w1.T + b1
        h1 = elu(z1)
        z2 = h1 @ w2.T + b2
        h2 = elu(z2)
        return h2 @ w3.T + b3, (x, z1, h1, z2, h2)

    def skew_output(self, features) -> np.ndarray:
        x = np.atleast_2d(np.asarray(features, dtype=np.float64))
        if x.shape[-1] != self.input_width:
            raise ValueError(f"feature width {x.shape[-1]} does not match model input {self.input_width}")
        return self._network(x)[0]

    def forward(self, features) -> np.ndarray:
        """Frame ``V`` (``K x M``) for one feature vector, or a stack for a batch."""
        x = np.asarray(features, dtype=np.float64)
        v = manifold.trivialize(self.skew_output(x), self.frame_dim, self.sites)
        return v[0] if x.ndim == 1 else v


def _weight_stack(spectra) -> np.ndarray:
    return np.stack([s.vectors * np.sqrt(np.clip(s.values, 0.0, None)) for s in spectra])


def _apply_number_batch(d: np.ndarray, sub: SubspaceBasis) -> np.ndarray:
    if sub.diagonal:
        return sub.occupations.T[None] * d
    return np.einsum("imk,bik->bim", sub.number_matrices, d)


def _loss_and_grad(model: SurrogateModel, x: np.ndarray, w: np.ndarray, params: np.ndarray):
    """Summed functional over the batch and its gradient w.r.t. the flat parameters."""
    sub = model.sub
    k, m = model.frame_dim, model.sites
    with np.errstate(invalid="ignore", over="ignore"):
        out, (x, z1, h1, z2, h2) = model._network(x, params)
    if not np.all(np.isfinite(out)):
        nan = np.full(x.shape[0], np.nan)
        return math.nan, np.full(params.size, np.nan), nan
    v = manifold.trivialize(out, k, m)
    d = w @ np.swapaxes(v, -1, -2)
    p = _apply_number_batch(d, sub)
    values = np.sum(d * p, axis=(1, 2))
    gv = 2.0 * np.swapaxes(p, -1, -2) @ w
    g_out = manifold.pullback_gradient(out, k, m, gv)

    (w1, _), (w2, _), (w3, _) = model.layers(params)
    g_z2 = (g_out @ w3) * elu_grad(z2)
    g_z1 = (g_z2 @ w2) * elu_grad(z1)
    grad = np.concatenate([
        (g_z1.T @ x).ravel(), g_z1.sum(0),
        (g_z2.T @ h1).ravel(), g_z2.sum(0),
        (g_out.T @ h2).ravel(), g_out.sum(0),
    ])
    return float(values.sum()), grad, values


def prepare_batch(family, etas: Sequence[float]):
    gammas = [family(float(e)) for e in etas]
    x = np.stack([featurize(g) for g in gammas])
    w = _weight_stack([spectral(g) for g in gammas])
    return x, w


def loss_and_gradient(model: SurrogateModel, family, etas: Sequence[float], params=None):
    x, w = prepare_batch(family, etas)
    return _loss_and_grad(model, x, w, model.params if params is None else np.asarray(params))[:2]


def default_training_grid() -> np.ndarray:
    return np.round(np.arange(1, 200) * 0.005, 10)


def default_eval_grid() -> np.ndarray:
    return np.round(0.0025 + np.arange(199) * 0.005, 10)


def train(model: SurrogateModel, family, eta_grid: Sequence[float] | None = None,
          config: NetworkConfig | None = None, log_every: int = 0, callback=None) -> SurrogateModel:
    """Full-batch AdamW on ``sum_eta F(gamma(eta), V_model(eta))``; updates ``model`` in place.

    ``callback(epoch, params, loss)`` is called after every update.
    """
    cfg = config or model.config
    etas = default_training_grid() if eta_grid is None else np.asarray(eta_grid, dtype=np.float64)
    if etas.size == 0 or etas.min() < 0 or etas.max() > 1:
        raise ValueError("training grid must be nonempty and inside [0, 1]")
    x, w = prepare_batch(family, etas)
    opt = AdamW(model.params.size, cfg.lr, cfg.momentum, cfg.beta2, cfg.eps, cfg.weight_decay)
    params = model.params.copy()
    history = []
    for epoch in range(cfg.epochs):
        loss, grad, _ = _loss_and_grad(model, x, w, params)
        if not (math.isfinite(loss) and np.all(np.isfinite(grad))):
            model.history.extend(history)
            raise TrainingDivergence(f"non-finite loss at epoch {epoch}", model.history)
        history.append(loss)
        params = opt.step(params, grad)
        if callback is not None:
            callback(epoch, params, loss)
        if log_every and epoch % log_every == 0:
            log.info("epoch %d loss %.12g", epoch, loss)
    model.params = params
    model.epochs_trained += cfg.epochs
    model.history.extend(history)
    return model


def predict(model: SurrogateModel, family, etas: Sequence[float]) -> np.ndarray:
    """``F`` evaluated at the model's frames."""
    x, w = prepare_batch(family, etas)
    return _loss_and_grad(model, x, w, model.params)[2]


def derivative(model: SurrogateModel, family, eta: float, require_trained: bool = True) -> float:
    """Total ``dF/deta`` of ``F(gamma(eta), V_model(features(eta)))``.

    The family must keep its eigenvectors fixed (circulant families), so the
    feature derivative is ``(deta, 2 eta deta, flatten(U diag(dn)))``.
    """
    if require_trained and model.epochs_trained == 0:
        raise ValueError("model has not been trained")
    if not np.all(np.isfinite(model.params)):
        raise ArithmeticError("model parameters are not finite")
    gamma = family(float(eta))
    dgamma = np.asarray(family.derivative(float(eta)), dtype=np.float64)
    spec = spectral(gamma)
    u = spec.vectors
    dsqrt = _fixed_basis_derivative(spec, dgamma)
    dn = np.diag(u.T @ dgamma @ u)
    e1 = float(gamma.matrix[0, 1])
    de = float(dgamma[0, 1])
    x = featurize(gamma)
    dx = np.concatenate([[de, 2.0 * e1 * de], (u * dn).ravel()])

    # forward-mode sweep through the network
    (w1, b1), (w2, b2), (w3, b3) = model.layers()
    z1 = w1 @ x + b1
    dz1 = w1 @ dx
    z2 = w2 @ elu(z1) + b2
    dz2 = w2 @ (elu_grad(z1) * dz1)
    out = w3 @ elu(z2) + b3
    dout = w3 @ (elu_grad(z2) * dz2)

    k, m = model.frame_dim, model.sites
    a = manifold.skew_embed(out, k)
    q = manifold.matrix_exponential(a)
    dq = manifold.expm_frechet(a, manifold.skew_embed(dout, k))
    v, dv = q[:, :m], dq[:, :m]
    wts = u * np.sqrt(np.clip(spec.values, 0.0, None))
    d = wts @ v.T
    dd = (u * dsqrt) @ v.T + wts @ dv.T
    p = _apply_number_batch(d[None], model.sub)[0]
    return 2.0 * float(np.sum(p * dd))


def save_checkpoint(model: SurrogateModel, path) -> None:
    payload = {
        "format": "bosefunc-surrogate",
        "version": CHECKPOINT_VERSION,
        "artifact_version": __version__,
        "sites": model.sites,
        "particles": model.particles,
        "subspace": model.subspace,
        "config": {**asdict(model.config), "hidden": list(model.config.hidden)},
        "epochs_trained": model.epochs_trained,
        "params": model.params.tolist(),
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)


def load_checkpoint(path) -> SurrogateModel:
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("format") != "bosefunc-surrogate":
        raise ValueError(f"{path} is not a surrogate checkpoint")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {payload.get('version')}")
    cfg = NetworkConfig(**payload["config"])
    model = SurrogateModel(payload["sites"], payload["particles"], payload["subspace"], cfg,
                           np.array(payload["params"], dtype=np.float64), payload["epochs_trained"])
    model.layers()  # shape check
    return model
