"""Invertible transform stack over R^N with exact log-density and maximum-likelihood training.

The model composes an elementwise affine normalization layer with a stack of
affine coupling layers (alternating masks). Each coupling layer conditions a
bounded log-scale and a shift for half the coordinates on the other half via a
small tanh MLP, so the inverse and the log-determinant are analytic. Gradients
of the negative log-likelihood are computed by hand-rolled backpropagation
through the inverse pass.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"FLOWMDL\x00"
FORMAT_VERSION = 1

LOG_2PI = float(np.log(2.0 * np.pi))


class FlowError(Exception):
    pass


class FlowFormatError(FlowError):
    """Raised when a model file is malformed or incompatible."""


class FlowTrainingError(FlowError):
    """Raised when training encounters a non-finite loss."""


class Normalization:
    """Trainable per-coordinate affine layer, data-initializable (ActNorm-style)."""

    def __init__(self, dim: int):
        self.dim = dim
        self.log_scale = np.zeros(dim)
        self.shift = np.zeros(dim)

    def init_from_data(self, data: np.ndarray) -> None:
        std = data.std(axis=0)
        std = np.maximum(std, 1e-6)
        self.log_scale = np.log(std)
        self.shift = data.mean(axis=0).copy()

    def parameters(self) -> list[np.ndarray]:
        return [self.log_scale, self.shift]

    def forward(self, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        x = z * np.exp(self.log_scale) + self.shift
        logdet = np.full(z.shape[0], self.log_scale.sum())
        return x, logdet

    def inverse(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        z = (x - self.shift) * np.exp(-self.log_scale)
        logdet = np.full(x.shape[0], -self.log_scale.sum())
        return z, logdet

    def inverse_cached(self, x):
        z, _ = self.inverse(x)
        return z, {"z": z}

    def backward_through_inverse(self, cache, g, grads, inv_batch):
        # NLL terms: sum(log_scale) per sample (direct) and z = (x-shift)*exp(-log_scale).
        z = cache["z"]
        grads[0] += -(g * z).sum(axis=0) + 1.0
        grads[1] += -(g * np.exp(-self.log_scale)).sum(axis=0)
        return g * np.exp(-self.log_scale)

    def spec(self) -> dict:
        return {"type": "norm"}


class Coupling:
    """Affine coupling layer with a bounded log-scale conditioner."""

    def __init__(self, dim: int, parity: int, hidden: int = 128, s_max: float = 2.0):
        if dim < 2:
            raise FlowError("coupling layers need dim >= 2")
        self.dim = dim
        self.parity = parity
        self.hidden = hidden
        self.s_max = s_max
        self.mask = (np.arange(dim) % 2) == parity  # passive coordinates
        d_p = int(self.mask.sum())
        d_a = dim - d_p
        self.d_p = d_p
        self.d_a = d_a
        self.W1 = np.zeros((d_p, hidden))
        self.b1 = np.zeros(hidden)
        self.W2 = np.zeros((hidden, hidden))
        self.b2 = np.zeros(hidden)
        self.W3 = np.zeros((hidden, 2 * d_a))
        self.b3 = np.zeros(2 * d_a)

    def init_hidden(self, rng: np.random.Generator, last_layer_scale: float = 0.0) -> None:
        self.W1 = rng.standard_normal((self.d_p, self.hidden)) / np.sqrt(self.d_p)
        self.b1 = np.zeros(self.hidden)
        self.W2 = rng.standard_normal((self.hidden, self.hidden)) / np.sqrt(self.hidden)
        self.b2 = np.zeros(self.hidden)
        self.W3 = last_layer_scale * rng.standard_normal((self.hidden, 2 * self.d_a))
        self.b3 = last_layer_scale * rng.standard_normal(2 * self.d_a)

    def parameters(self) -> list[np.ndarray]:
        return [self.W1, self.b1, self.W2, self.b2, self.W3, self.b3]

    def _conditioner(self, p: np.ndarray):
        h1 = np.tanh(p @ self.W1 + self.b1)
        h2 = np.tanh(h1 @ self.W2 + self.b2)
        raw = h2 @ self.W3 + self.b3
        raw_s = raw[:, : self.d_a]
        t = raw[:, self.d_a :]
        s = self.s_max * np.tanh(raw_s / self.s_max)
        return s, t, h1, h2

    def forward(self, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        p = z[:, self.mask]
        a = z[:, ~self.mask]
        s, t, _, _ = self._conditioner(p)
        out = np.empty_like(z)
        out[:, self.mask] = p
        out[:, ~self.mask] = a * np.exp(s) + t
        return out, s.sum(axis=1)

    def inverse(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        z, cache = self.inverse_cached(x)
        return z, -cache["s"].sum(axis=1)

    def inverse_cached(self, x):
        p = x[:, self.mask]
        a = x[:, ~self.mask]
        s, t, h1, h2 = self._conditioner(p)
        z_a = (a - t) * np.exp(-s)
        z = np.empty_like(x)
        z[:, self.mask] = p
        z[:, ~self.mask] = z_a
        return z, {"p": p, "s": s, "h1": h1, "h2": h2, "z_a": z_a}

    def backward_through_inverse(self, cache, g, grads, inv_batch):
        """Accumulate NLL parameter gradients; return the gradient w.r.t. the layer input.

        g is the gradient w.r.t. this layer's inverse output; inv_batch is 1/B,
        the weight of the per-sample sum-of-log-scales term in the mean NLL.
        """
        p = cache["p"]
        s = cache["s"]
        h1 = cache["h1"]
        h2 = cache["h2"]
        z_a = cache["z_a"]
        g_p = g[:, self.mask]
        g_za = g[:, ~self.mask]
        exp_neg_s = np.exp(-s)
        grad_a = g_za * exp_neg_s
        grad_t = -grad_a
        grad_s = -g_za * z_a + inv_batch
        grad_raw_s = grad_s * (1.0 - (s / self.s_max) ** 2)
        grad_raw = np.concatenate([grad_raw_s, grad_t], axis=1)
        grads[4] += h2.T @ grad_raw
        grads[5] += grad_raw.sum(axis=0)
        g_h2 = grad_raw @ self.W3.T
        g_pre2 = g_h2 * (1.0 - h2**2)
        grads[2] += h1.T @ g_pre2
        grads[3] += g_pre2.sum(axis=0)
        g_h1 = g_pre2 @ self.W2.T
        g_pre1 = g_h1 * (1.0 - h1**2)
        grads[0] += p.T @ g_pre1
        grads[1] += g_pre1.sum(axis=0)
        g_x = np.empty_like(g)
        g_x[:, self.mask] = g_p + g_pre1 @ self.W1.T
        g_x[:, ~self.mask] = grad_a
        return g_x

    def spec(self) -> dict:
        return {"type": "coupling", "parity": self.parity, "hidden": self.hidden, "s_max": self.s_max}


class FlowModel:
    """Composition of invertible transforms with a standard-normal base over R^dim."""

    def __init__(self, dim: int, layers: list, metadata: dict | None = None):
        self.dim = dim
        self.layers = layers
        self.metadata = dict(metadata or {})

    @staticmethod
    def create(
        dim: int,
        n_layers: int = 16,
        hidden: int = 128,
        rng: np.random.Generator | None = None,
        last_layer_scale: float = 0.0,
        with_normalization: bool = True,
        metadata: dict | None = None,
    ) -> "FlowModel":
        rng = rng or np.random.default_rng(0)
        layers: list = []
        if with_normalization:
            layers.append(Normalization(dim))
        for l in range(n_layers):
            c = Coupling(dim, parity=l % 2, hidden=hidden)
            c.init_hidden(rng, last_layer_scale)
            layers.append(c)
        return FlowModel(dim, layers, metadata)

    # -- shape handling -------------------------------------------------

    def _as_batch(self, x: np.ndarray) -> tuple[np.ndarray, bool]:
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            if x.shape[0] != self.dim:
                raise FlowError(f"expected dim {self.dim}, got {x.shape[0]}")
            return x[None, :], True
        if x.ndim != 2 or x.shape[1] != self.dim:
            raise FlowError(f"expected shape (B, {self.dim}), got {x.shape}")
        return x, False

    # -- inference ------------------------------------------------------

    def forward(self, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Push base-side vectors to the data side; returns (x, logdet)."""
        x, single = self._as_batch(z)
        logdet = np.zeros(x.shape[0])
        for layer in self.layers:
            x, ld = layer.forward(x)
            logdet += ld
        if single:
            return x[0], float(logdet[0])
        return x, logdet

    def inverse(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Pull data-side vectors back to the base; returns (z, logdet of the inverse map)."""
        z, single = self._as_batch(x)
        logdet = np.zeros(z.shape[0])
        for layer in reversed(self.layers):
            z, ld = layer.inverse(z)
            logdet += ld
        if single:
            return z[0], float(logdet[0])
        return z, logdet

    def log_prob(self, x: np.ndarray) -> np.ndarray | float:
        xb, single = self._as_batch(x)
        z, logdet = self.inverse(xb)
        lp = -0.5 * np.sum(z**2, axis=1) - 0.5 * self.dim * LOG_2PI + logdet
        if single:
            return float(lp[0])
        return lp

    def sample(self, K: int, rng: np.random.Generator) -> np.ndarray:
        z = rng.standard_normal((K, self.dim))
        x, _ = self.forward(z)
        return x

    # -- training support -----------------------------------------------

    def parameters(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out.extend(layer.parameters())
        return out

    def set_parameters(self, values: list[np.ndarray]) -> None:
        params = self.parameters()
        if len(values) != len(params):
            raise FlowError("parameter count mismatch")
        for p, v in zip(params, values):
            p[...] = v

    def nll_and_grads(self, X: np.ndarray) -> tuple[float, list[list[np.ndarray]]]:
        """Mean NLL of a batch and its gradient, grouped per layer."""
        X, _ = self._as_batch(np.atleast_2d(X))
        B = X.shape[0]
        inv_batch = 1.0 / B
        caches = []
        y = X
        logdet_fwd_sum = 0.0
        for layer in reversed(self.layers):
            y, cache = layer.inverse_cached(y)
            caches.append(cache)
            if isinstance(layer, Coupling):
                logdet_fwd_sum += cache["s"].sum() * inv_batch
            else:
                logdet_fwd_sum += layer.log_scale.sum()
        z = y
        nll = 0.5 * np.mean(np.sum(z**2, axis=1)) + 0.5 * self.dim * LOG_2PI + logdet_fwd_sum
        caches.reverse()  # now aligned with self.layers (base -> data order)
        grads = [[np.zeros_like(p) for p in layer.parameters()] for layer in self.layers]
        g = z * inv_batch
        for layer, cache, lg in zip(self.layers, caches, grads):
            g = layer.backward_through_inverse(cache, g, lg, inv_batch)
        return float(nll), grads

    def nll(self, X: np.ndarray) -> float:
        X, _ = self._as_batch(np.atleast_2d(X))
        return float(-np.mean(self.log_prob(X)))


# -- training ------------------------------------------------------------


@dataclass
class TrainConfig:
    steps: int = 650
    patience: int = 200
    split: float = 0.6
    batch_size: int | None = 64  # None = full batch
    lr: float = 3e-4
    jitter: float = 0.5  # training-batch noise, relative to per-coordinate std
    weight_decay: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.split < 1.0):
            raise ValueError(f"split ratio must be in (0, 1), got {self.split}")
        if self.jitter < 0 or self.weight_decay < 0:
            raise ValueError("jitter and weight_decay must be non-negative")

    def config_hash(self) -> str:
        payload = json.dumps(
            {
                "steps": self.steps,
                "patience": self.patience,
                "split": self.split,
                "batch_size": self.batch_size,
                "lr": self.lr,
                "jitter": self.jitter,
                "weight_decay": self.weight_decay,
                "seed": self.seed,
            },
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


@dataclass
class LossCurve:
    steps: np.ndarray
    train_nll: np.ndarray
    test_nll: np.ndarray

    def to_csv(self, path) -> None:
        with open(path, "w") as f:
            f.write("step,train_nll,test_nll\n")
            for s, tr, te in zip(self.steps, self.train_nll, self.test_nll):
                f.write(f"{int(s)},{float(tr)!r},{float(te)!r}\n")


class _Adam:
    def __init__(self, params: list[np.ndarray], lr: float):
        self.lr = lr
        self.beta1 = 0.9
        self.beta2 = 0.999
        self.eps = 1e-8
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g**2
            p -= self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)


def train(
    data: np.ndarray,
    cfg: TrainConfig,
    n_layers: int = 16,
    hidden: int = 128,
    metadata: dict | None = None,
) -> tuple[FlowModel, LossCurve]:
    """Fit a flow to rows of `data` by gradient descent on the mean NLL.

    The rows are shuffled and split into train/test per cfg.split. Minibatches
    are perturbed with Gaussian noise of cfg.jitter times the per-coordinate
    training std (smoothing regularization for the small-data regime), and
    parameter gradients carry cfg.weight_decay. Training stops when the test
    NLL has not improved for cfg.patience steps or at cfg.steps; the
    best-test-loss parameters are returned. The loss curve's first row (step 0)
    is the pre-update state of the initialized model.
    """
    data = np.asarray(data, dtype=float)
    if data.ndim != 2 or data.shape[0] < 2:
        raise ValueError(f"training data must be (B>=2, N), got {data.shape}")
    if not np.all(np.isfinite(data)):
        raise ValueError("training data contains non-finite values")
    rng = np.random.default_rng(cfg.seed)
    perm = rng.permutation(data.shape[0])
    n_train = max(1, int(round(cfg.split * data.shape[0])))
    train_rows = data[perm[:n_train]]
    test_rows = data[perm[n_train:]]
    if test_rows.shape[0] == 0:
        raise ValueError("split leaves no test rows")

    meta = dict(metadata or {})
    meta["train_config_hash"] = cfg.config_hash()
    model = FlowModel.create(data.shape[1], n_layers=n_layers, hidden=hidden, rng=rng, metadata=meta)
    model.layers[0].init_from_data(train_rows)
    jitter_std = cfg.jitter * train_rows.std(axis=0)

    params = model.parameters()
    opt = _Adam(params, cfg.lr)
    best_test = model.nll(test_rows)
    best_params = [p.copy() for p in params]
    since_best = 0
    steps_log = [0]
    train_log = [model.nll(train_rows)]
    test_log = [best_test]
    for step_i in range(1, cfg.steps + 1):
        if cfg.batch_size is None or cfg.batch_size >= train_rows.shape[0]:
            batch = train_rows
        else:
            idx = rng.choice(train_rows.shape[0], size=cfg.batch_size, replace=False)
            batch = train_rows[idx]
        if cfg.jitter > 0:
            batch = batch + jitter_std * rng.standard_normal(batch.shape)
        nll, grads = model.nll_and_grads(batch)
        if not np.isfinite(nll):
            raise FlowTrainingError(f"non-finite training loss at step {step_i}")
        flat_grads = [g for lg in grads for g in lg]
        if cfg.weight_decay > 0:
            for g, p in zip(flat_grads, params):
                g += cfg.weight_decay * p
        opt.step(params, flat_grads)
        test_nll = model.nll(test_rows)
        if not np.isfinite(test_nll):
            raise FlowTrainingError(f"non-finite test loss at step {step_i}")
        steps_log.append(step_i)
        train_log.append(nll)
        test_log.append(test_nll)
        if test_nll < best_test:
            best_test = test_nll
            best_params = [p.copy() for p in params]
            since_best = 0
        else:
            since_best += 1
            if since_best > cfg.patience:
                break
    model.set_parameters(best_params)
    curve = LossCurve(np.array(steps_log), np.array(train_log), np.array(test_log))
    return model, curve


# -- serialization -------------------------------------------------------


def save(model: FlowModel, path) -> None:
    """Write a versioned self-describing binary model file."""
    header = {
        "dim": model.dim,
        "layers": [layer.spec() for layer in model.layers],
        "metadata": model.metadata,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", FORMAT_VERSION))
        f.write(struct.pack("<I", len(header_bytes)))
        f.write(header_bytes)
        for p in model.parameters():
            np.save(f, p, allow_pickle=False)


def load(path) -> FlowModel:
    """Load a model written by `save`; validates magic, version, and dimensions."""
    with open(path, "rb") as f:
        magic = f.read(len(MAGIC))
        if magic != MAGIC:
            raise FlowFormatError(f"bad magic bytes in {path}")
        (version,) = struct.unpack("<I", f.read(4))
        if version != FORMAT_VERSION:
            raise FlowFormatError(f"unsupported format version {version}")
        (hlen,) = struct.unpack("<I", f.read(4))
        try:
            header = json.loads(f.read(hlen).decode())
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise FlowFormatError(f"corrupt header in {path}") from e
        dim = header["dim"]
        layers: list = []
        for spec in header["layers"]:
            if spec["type"] == "norm":
                layers.append(Normalization(dim))
            elif spec["type"] == "coupling":
                layers.append(Coupling(dim, spec["parity"], spec["hidden"], spec.get("s_max", 2.0)))
            else:
                raise FlowFormatError(f"unknown layer type {spec['type']!r}")
        model = FlowModel(dim, layers, header.get("metadata", {}))
        for p in model.parameters():
            arr = np.load(f, allow_pickle=False)
            if arr.shape != p.shape:
                raise FlowFormatError(f"parameter shape mismatch: {arr.shape} vs {p.shape}")
            p[...] = arr
    return model
