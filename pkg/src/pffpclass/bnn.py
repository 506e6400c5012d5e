"""Bayesian 1D convolutional network with mean-field Gaussian weights.

Every weight and bias has a Gaussian posterior ``N(mu, softplus(rho)^2)``.
A forward pass draws one weight set through the reparameterization
``w = mu + softplus(rho) * eps`` and runs a deterministic network:

    conv(8, k=7, same) -> ReLU -> maxpool 2 -> conv(16, k=5, same) -> ReLU
    -> maxpool 2 -> flatten -> dense 64 -> ReLU -> dense 32 -> ReLU
    -> dense 4 -> softmax

Training minimizes mean cross-entropy plus a weighted KL divergence from the
posterior to a zero-mean Gaussian prior, with gradients from hand-written
backpropagation and Adam updates. Everything is float64 numpy.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from . import N_BINS, N_CLASSES
from .errors import Diverged

log = logging.getLogger(__name__)

LAYERS = ("conv1", "conv2", "fc1", "fc2", "out")


@dataclass(frozen=True)
class NetworkArch:
    input_length: int = N_BINS
    conv1_filters: int = 8
    conv1_kernel: int = 7
    conv2_filters: int = 16
    conv2_kernel: int = 5
    pool: int = 2
    fc1_units: int = 64
    fc2_units: int = 32
    n_classes: int = N_CLASSES

    @property
    def flatten_dim(self) -> int:
        return self.conv2_filters * (self.input_length // self.pool // self.pool)

    def shapes(self) -> dict:
        """Parameter name -> shape, in canonical order. Dense weights are (in, out)."""
        return {
            "conv1.w": (self.conv1_filters, 1, self.conv1_kernel),
            "conv1.b": (self.conv1_filters,),
            "conv2.w": (self.conv2_filters, self.conv1_filters, self.conv2_kernel),
            "conv2.b": (self.conv2_filters,),
            "fc1.w": (self.flatten_dim, self.fc1_units),
            "fc1.b": (self.fc1_units,),
            "fc2.w": (self.fc1_units, self.fc2_units),
            "fc2.b": (self.fc2_units,),
            "out.w": (self.fc2_units, self.n_classes),
            "out.b": (self.n_classes,),
        }

    def n_parameters(self) -> int:
        return sum(math.prod(s) for s in self.shapes().values())


@dataclass
class BayesianCNN:
    arch: NetworkArch
    mu: dict
    rho: dict

    def sigma(self) -> dict:
        return {k: softplus(v) for k, v in self.rho.items()}

    def copy(self) -> BayesianCNN:
        return BayesianCNN(
            self.arch,
            {k: v.copy() for k, v in self.mu.items()},
            {k: v.copy() for k, v in self.rho.items()},
        )


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    max_epochs: int = 200
    patience: int = 20
    batch_size: int = 32
    prior_variance: float = 0.1
    # None: 1 / n_train. Equals 1/batches on a batch-summed NLL, rescaled to the mean.
    kl_weight: float | None = None
    seed: int = 0
    validation_draws: int = 10


@dataclass
class TrainHistory:
    epochs: list = field(default_factory=list)
    best_epoch: int = -1

    def __len__(self):
        return len(self.epochs)


def softplus(x):
    return np.logaddexp(0.0, x)


def inverse_softplus(y: float) -> float:
    return float(np.log(np.expm1(y)))


def init_network(arch: NetworkArch = NetworkArch(), seed: int = 0, init_std: float = 0.05):
    """Fresh network: He-uniform weight means, fan-in uniform bias means,
    every posterior standard deviation equal to ``init_std``."""
    rng = np.random.default_rng(seed)
    rho0 = inverse_softplus(init_std)
    mu, rho = {}, {}
    shapes = arch.shapes()
    for name in LAYERS:
        w_shape = shapes[f"{name}.w"]
        fan_in = math.prod(w_shape[1:]) if name.startswith("conv") else w_shape[0]
        w_bound = math.sqrt(6.0 / fan_in)
        b_bound = 1.0 / math.sqrt(fan_in)
        mu[f"{name}.w"] = rng.uniform(-w_bound, w_bound, size=w_shape)
        mu[f"{name}.b"] = rng.uniform(-b_bound, b_bound, size=shapes[f"{name}.b"])
    for key, shape in shapes.items():
        rho[key] = np.full(shape, rho0)
    return BayesianCNN(arch, mu, rho)


# -- layers ------------------------------------------------------------------


def _conv_forward(x, w, b):
    """Same-padded stride-1 1D convolution. x (B, C, L), w (O, C, K)."""
    B, C, L = x.shape
    O, _, K = w.shape
    pad = K // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pad, K - 1 - pad)))
    cols = sliding_window_view(xp, K, axis=2)  # (B, C, L, K)
    cols = cols.transpose(0, 2, 1, 3).reshape(B * L, C * K)
    out = cols @ w.reshape(O, C * K).T + b
    return out.reshape(B, L, O).transpose(0, 2, 1), cols


def _conv_backward(dout, cols, x_shape, w, need_dx=True):
    B, C, L = x_shape
    O, _, K = w.shape
    d2 = dout.transpose(0, 2, 1).reshape(B * L, O)
    dw = (d2.T @ cols).reshape(O, C, K)
    db = d2.sum(axis=0)
    if not need_dx:
        return None, dw, db
    dcols = (d2 @ w.reshape(O, C * K)).reshape(B, L, C, K)
    pad = K // 2
    dxp = np.zeros((B, C, L + K - 1))
    for k in range(K):
        dxp[:, :, k : k + L] += dcols[:, :, :, k].transpose(0, 2, 1)
    return dxp[:, :, pad : pad + L], dw, db


def _pool_forward(x, size):
    B, C, L = x.shape
    Lp = L // size
    xr = x[:, :, : Lp * size].reshape(B, C, Lp, size)
    arg = xr.argmax(axis=3)
    return np.take_along_axis(xr, arg[..., None], axis=3)[..., 0], arg


def _pool_backward(dout, arg, x_shape, size):
    B, C, L = x_shape
    Lp = dout.shape[2]
    dxr = np.zeros((B, C, Lp, size))
    np.put_along_axis(dxr, arg[..., None], dout[..., None], axis=3)
    dx = np.zeros(x_shape)
    dx[:, :, : Lp * size] = dxr.reshape(B, C, Lp * size)
    return dx


def _softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def forward(arch: NetworkArch, w: dict, X):
    """Class probabilities (B, 4) for inputs X (B, L) under fixed weights ``w``."""
    x0 = np.asarray(X, dtype=float).reshape(-1, 1, arch.input_length)
    c1, cols1 = _conv_forward(x0, w["conv1.w"], w["conv1.b"])
    r1 = np.maximum(c1, 0.0)
    p1, arg1 = _pool_forward(r1, arch.pool)
    c2, cols2 = _conv_forward(p1, w["conv2.w"], w["conv2.b"])
    r2 = np.maximum(c2, 0.0)
    p2, arg2 = _pool_forward(r2, arch.pool)
    flat = p2.reshape(p2.shape[0], -1)
    h1 = np.maximum(flat @ w["fc1.w"] + w["fc1.b"], 0.0)
    h2 = np.maximum(h1 @ w["fc2.w"] + w["fc2.b"], 0.0)
    logits = h2 @ w["out.w"] + w["out.b"]
    cache = dict(
        x0=x0, cols1=cols1, c1=c1, r1=r1, arg1=arg1, p1=p1, cols2=cols2, c2=c2,
        r2=r2, arg2=arg2, p2=p2, flat=flat, h1=h1, h2=h2,
    )
    return _softmax(logits), cache


def backward(arch: NetworkArch, w: dict, cache: dict, dlogits) -> dict:
    """Gradients of a scalar loss w.r.t. every weight, given d loss / d logits."""
    g = {}
    g["out.w"] = cache["h2"].T @ dlogits
    g["out.b"] = dlogits.sum(axis=0)
    dh2 = (dlogits @ w["out.w"].T) * (cache["h2"] > 0)
    g["fc2.w"] = cache["h1"].T @ dh2
    g["fc2.b"] = dh2.sum(axis=0)
    dh1 = (dh2 @ w["fc2.w"].T) * (cache["h1"] > 0)
    g["fc1.w"] = cache["flat"].T @ dh1
    g["fc1.b"] = dh1.sum(axis=0)
    dp2 = (dh1 @ w["fc1.w"].T).reshape(cache["p2"].shape)
    dr2 = _pool_backward(dp2, cache["arg2"], cache["r2"].shape, arch.pool)
    dc2 = dr2 * (cache["c2"] > 0)
    dp1, g["conv2.w"], g["conv2.b"] = _conv_backward(
        dc2, cache["cols2"], cache["p1"].shape, w["conv2.w"]
    )
    dr1 = _pool_backward(dp1, cache["arg1"], cache["r1"].shape, arch.pool)
    dc1 = dr1 * (cache["c1"] > 0)
    _, g["conv1.w"], g["conv1.b"] = _conv_backward(
        dc1, cache["cols1"], cache["x0"].shape, w["conv1.w"], need_dx=False
    )
    return g


# -- variational pieces ------------------------------------------------------


def draw_noise(net: BayesianCNN, rng) -> dict:
    return {k: rng.standard_normal(v.shape) for k, v in net.mu.items()}


def sample_weights(net: BayesianCNN, eps: dict, sigma: dict | None = None) -> dict:
    sigma = net.sigma() if sigma is None else sigma
    return {k: net.mu[k] + sigma[k] * eps[k] for k in net.mu}


def kl_divergence(net: BayesianCNN, prior_variance: float = 0.1, sigma: dict | None = None) -> float:
    """Closed-form KL(q || p) summed over all parameters, p = N(0, prior_variance)."""
    sigma = net.sigma() if sigma is None else sigma
    log_prior_sd = 0.5 * math.log(prior_variance)
    total = 0.0
    for k, m in net.mu.items():
        s = sigma[k]
        total += float(
            np.sum(log_prior_sd - np.log(s) + (s * s + m * m) / (2.0 * prior_variance) - 0.5)
        )
    return total


def forward_sample(net: BayesianCNN, features, rng) -> np.ndarray:
    """One posterior weight draw and forward pass. Returns (4,) or (B, 4)."""
    x = np.asarray(features, dtype=float)
    probs, _ = forward(net.arch, sample_weights(net, draw_noise(net, rng)), x)
    return probs[0] if x.ndim == 1 else probs


def predict_mc(net: BayesianCNN, features, n: int, rng) -> np.ndarray:
    """``n`` independent forward samples: (n, 4) for one input, (n, B, 4) for a batch.

    Each draw uses one weight sample for the whole batch, so a given input
    receives the same draws whether predicted alone or with others.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    x = np.asarray(features, dtype=float)
    out = np.stack([forward_sample(net, x, rng) for _ in range(n)])
    return out


@dataclass
class LossResult:
    loss: float
    nll: float
    kl: float
    grad_mu: dict
    grad_rho: dict


def elbo_loss(
    net: BayesianCNN,
    X,
    y,
    rng=None,
    kl_weight: float = 1.0,
    prior_variance: float = 0.1,
    eps: dict | None = None,
) -> LossResult:
    """Negative ELBO estimate for one mini-batch and its gradient.

    ``loss = mean cross-entropy + kl_weight * KL(q || p)`` with one weight
    sample. Pass ``eps`` to freeze the noise (gradient checks).
    """
    X = np.asarray(X, dtype=float).reshape(-1, net.arch.input_length)
    y0 = np.asarray(y, dtype=int).reshape(-1) - 1
    if X.shape[0] == 0:
        raise ValueError("empty batch")
    if eps is None:
        eps = draw_noise(net, rng)
    sigma = net.sigma()
    w = sample_weights(net, eps, sigma)
    probs, cache = forward(net.arch, w, X)
    B = X.shape[0]
    rows = np.arange(B)
    nll = float(-np.mean(np.log(probs[rows, y0])))
    dlogits = probs.copy()
    dlogits[rows, y0] -= 1.0
    dlogits /= B
    gw = backward(net.arch, w, cache, dlogits)

    kl = kl_divergence(net, prior_variance, sigma)
    grad_mu, grad_rho = {}, {}
    for k in net.mu:
        s = sigma[k]
        ds_drho = expit(net.rho[k])
        grad_mu[k] = gw[k] + kl_weight * net.mu[k] / prior_variance
        dkl_ds = -1.0 / s + s / prior_variance
        grad_rho[k] = (gw[k] * eps[k] + kl_weight * dkl_ds) * ds_drho
    return LossResult(nll + kl_weight * kl, nll, kl, grad_mu, grad_rho)


# -- training ----------------------------------------------------------------


class _Adam:
    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {}
        self.v = {}

    def step(self, params: dict, grads: dict):
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for k, g in grads.items():
            m = self.m.get(k)
            if m is None:
                m = self.m[k] = np.zeros_like(g)
                self.v[k] = np.zeros_like(g)
            v = self.v[k]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            params[k] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def predictive_nll(net: BayesianCNN, X, y, draws: int, seed: int) -> tuple:
    """(NLL of the MC-averaged predictive distribution, its accuracy)."""
    y0 = np.asarray(y, dtype=int) - 1
    probs = predict_mc(net, X, draws, np.random.default_rng(seed)).mean(axis=0)
    probs = probs.reshape(-1, N_CLASSES)
    nll = float(-np.mean(np.log(np.maximum(probs[np.arange(y0.size), y0], 1e-300))))
    acc = float(np.mean(np.argmax(probs, axis=1) == y0))
    return nll, acc


def train(net: BayesianCNN, X, y, X_val=None, y_val=None, config: TrainConfig = TrainConfig()):
    """Mini-batch Adam on the negative ELBO with early stopping.

    Validation loss is the NLL of the predictive mean over
    ``config.validation_draws`` draws with a fixed seed, so epochs are
    compared under identical noise. The parameters of the best validation
    epoch are restored. Returns ``(trained_copy, history)``.
    """
    X = np.asarray(X, dtype=float).reshape(-1, net.arch.input_length)
    y = np.asarray(y, dtype=int)
    net = net.copy()
    history = TrainHistory()
    if config.max_epochs <= 0:
        return net, history
    rng = np.random.default_rng(config.seed)
    n = X.shape[0]
    n_batches = max(1, math.ceil(n / config.batch_size))
    kl_weight = 1.0 / n if config.kl_weight is None else config.kl_weight
    opt_mu = _Adam(config.learning_rate)
    opt_rho = _Adam(config.learning_rate)
    have_val = X_val is not None and len(X_val) > 0
    val_seed = config.seed + 7919

    best_loss = np.inf
    best = net.copy()
    wait = 0
    for epoch in range(config.max_epochs):
        order = rng.permutation(n)
        losses, nlls = [], []
        for b in range(n_batches):
            idx = order[b * config.batch_size : (b + 1) * config.batch_size]
            res = elbo_loss(net, X[idx], y[idx], rng, kl_weight, config.prior_variance)
            if not np.isfinite(res.loss):
                raise Diverged(f"non-finite loss at epoch {epoch}, batch {b}")
            opt_mu.step(net.mu, res.grad_mu)
            opt_rho.step(net.rho, res.grad_rho)
            losses.append(res.loss)
            nlls.append(res.nll)
        record = dict(
            epoch=epoch,
            train_loss=float(np.mean(losses)),
            train_nll=float(np.mean(nlls)),
            kl=res.kl,
        )
        if have_val:
            monitor, acc = predictive_nll(net, X_val, y_val, config.validation_draws, val_seed)
            record.update(val_loss=monitor, val_accuracy=acc)
        else:
            monitor = record["train_loss"]
        if not np.isfinite(monitor):
            raise Diverged(f"non-finite monitored loss at epoch {epoch}")
        history.epochs.append(record)
        if monitor < best_loss:
            best_loss = monitor
            best = net.copy()
            history.best_epoch = epoch
            wait = 0
        else:
            wait += 1
            if wait >= config.patience:
                log.info("early stop at epoch %d (best %d)", epoch, history.best_epoch)
                break
    return best, history
