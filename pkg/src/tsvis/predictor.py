"""Numpy networks for transient-instability classification and first-swing regression.

Classifier (per window X of shape rows x time):

    C   = relu(conv_rows(X))            5 filters of length 7 along the feature axis
    U   = [X ; C]                       6 channels
    H_t = relu(W_p U[:, :, t] + b_p)    per-time projection to d = 32
    Z   = H + softmax(Q K^T / sqrt(d)) V
    p   = softmax(W_o mean_t(Z) + b_o)

Regressor: time average-pooling to 25 columns, then dense 400-300-300-1.

Inputs are standardised per row with training-set statistics kept in the model.
Gradients are written out by hand and verified against finite differences.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

GATE = 0.90


class TrainingError(ValueError):
    pass


class TrainingDiverged(TrainingError):
    def __init__(self, epoch: int, batch: int):
        self.epoch, self.batch = epoch, batch
        super().__init__(f"loss became non-finite at epoch {epoch}, batch {batch}")


@dataclass(frozen=True)
class TrainConfig:
    seed: int = 0
    epochs: int = 30
    learning_rate: float = 1e-3
    batch_size: int = 16
    holdout_fraction: float = 0.2
    weight_decay: float = 0.0
    min_records: int = 100


def _adam_state(params):
    return {k: (np.zeros_like(v), np.zeros_like(v)) for k, v in params.items()}


def _adam_step(params, grads, state, t, lr, wd=0.0, b1=0.9, b2=0.999, eps=1e-8):
    for k, g in grads.items():
        if wd and params[k].ndim > 1:
            g = g + wd * params[k]
        m, v = state[k]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        mh = m / (1 - b1 ** t)
        vh = v / (1 - b2 ** t)
        params[k] -= lr * mh / (np.sqrt(vh) + eps)


def _softmax(z, axis=-1):
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def _row_stats(X):
    mu = X.mean(axis=(0, 2))
    sd = X.std(axis=(0, 2))
    return mu, np.where(sd > 1e-12, sd, 1.0)


def _split(n, frac, rng):
    perm = rng.permutation(n)
    n_hold = int(round(frac * n))
    return perm[n_hold:], perm[:n_hold]


def _check_dataset(X, y=None, min_records=100):
    if X.shape[0] == 0:
        raise TrainingError("empty dataset")
    if X.shape[0] < min_records:
        raise TrainingError(f"dataset has {X.shape[0]} records, at least {min_records} required")
    if y is not None:
        if np.unique(y).size < 2:
            raise TrainingError("dataset holds a single class")
        seen: dict[bytes, int] = {}
        for xi, yi in zip(X, y):
            key = hashlib.sha1(np.ascontiguousarray(xi).tobytes()).digest()
            if seen.setdefault(key, int(yi)) != int(yi):
                raise TrainingError("degenerate dataset: identical windows carry different labels")


class _Model:
    kind = ""

    def __init__(self, params: dict, config: dict, norm: dict):
        self.params = params
        self.config = config
        self.norm = norm

    def standardize(self, X):
        X = np.asarray(X, dtype=float)
        if X.ndim == 2:
            X = X[None]
        shape = tuple(self.config["input_shape"])
        if X.shape[1:] != shape:
            raise ValueError(f"window shape {X.shape[1:]} does not match the model input {shape}")
        return (X - self.norm["mu"][None, :, None]) / self.norm["sd"][None, :, None]

    def finalize(self):
        """Round parameters to float32 storage precision so that save/load is bit-exact."""
        for k in self.params:
            self.params[k] = self.params[k].astype(np.float32).astype(np.float64)

    # ------------------------------------------------------------ persistence
    def save(self, path) -> Path:
        """Write ``<path>`` (JSON description) and ``<path>.npz`` (float32 row-major weights)."""
        path = Path(path)
        side = path.with_name(path.name + ".npz")
        arrays = {k: v.astype("<f4") for k, v in self.params.items()}
        arrays["norm_mu"] = self.norm["mu"].astype("<f8")
        arrays["norm_sd"] = self.norm["sd"].astype("<f8")
        np.savez(side, **arrays)
        digest = hashlib.sha256(side.read_bytes()).hexdigest()
        doc = {
            "kind": self.kind,
            "config": self.config,
            "layers": {k: list(v.shape) for k, v in self.params.items()},
            "order": "row-major",
            "dtype": "float32-le",
            "target": {k: v for k, v in self.norm.items() if k not in ("mu", "sd")},
            "weights": side.name,
            "sha256": digest,
        }
        path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
        return side

    @classmethod
    def load(cls, path):
        path = Path(path)
        doc = json.loads(path.read_text())
        side = path.with_name(doc["weights"])
        raw = side.read_bytes()
        if hashlib.sha256(raw).hexdigest() != doc["sha256"]:
            raise ValueError(f"{side}: weight file does not match its recorded checksum")
        kinds = {c.kind: c for c in (Classifier, Regressor)}
        if doc["kind"] not in kinds:
            raise ValueError(f"unknown model kind {doc['kind']!r}")
        with np.load(side) as z:
            params = {k: z[k].astype(np.float64) for k in doc["layers"]}
            norm = {"mu": z["norm_mu"].astype(np.float64), "sd": z["norm_sd"].astype(np.float64)}
        for k, shape in doc["layers"].items():
            if list(params[k].shape) != shape:
                raise ValueError(f"layer {k} has shape {params[k].shape}, expected {shape}")
        norm.update(doc.get("target", {}))
        return kinds[doc["kind"]](params, doc["config"], norm)


# ================================================================ classifier

class Classifier(_Model):
    kind = "classifier"

    @staticmethod
    def init(rows, cols, seed=0, filters=5, kernel=7, dim=32):
        rng = np.random.default_rng(seed)
        ch = filters + 1
        p = {
            "conv_w": rng.normal(0, np.sqrt(2.0 / kernel), (filters, kernel)),
            "conv_b": np.zeros(filters),
            "proj_w": rng.normal(0, np.sqrt(2.0 / (ch * rows)), (dim, ch * rows)),
            "proj_b": np.zeros(dim),
            "wq": rng.normal(0, np.sqrt(1.0 / dim), (dim, dim)),
            "wk": rng.normal(0, np.sqrt(1.0 / dim), (dim, dim)),
            "wv": rng.normal(0, np.sqrt(1.0 / dim), (dim, dim)),
            "out_w": rng.normal(0, np.sqrt(1.0 / dim), (dim, 2)),
            "out_b": np.zeros(2),
        }
        cfg = {"input_shape": [rows, cols], "filters": filters, "kernel": kernel, "dim": dim, "seed": seed}
        return p, cfg

    def forward(self, Xn, cache=False):
        p = self.params
        B, R, T = Xn.shape
        F, K = p["conv_w"].shape
        half = K // 2
        Xp = np.zeros((B, R + 2 * half, T))
        Xp[:, half:half + R] = Xn
        Cpre = np.empty((B, F, R, T))
        for f in range(F):
            acc = np.full((B, R, T), p["conv_b"][f])
            for j in range(K):
                acc += p["conv_w"][f, j] * Xp[:, j:j + R]
            Cpre[:, f] = acc
        C = np.maximum(Cpre, 0.0)
        U = np.concatenate([Xn[:, None], C], axis=1).reshape(B, (F + 1) * R, T)
        Hpre = np.einsum("bit,ki->btk", U, p["proj_w"], optimize=True) + p["proj_b"]
        H = np.maximum(Hpre, 0.0)
        d = H.shape[-1]
        Q, Kt, V = H @ p["wq"], H @ p["wk"], H @ p["wv"]
        S = Q @ Kt.transpose(0, 2, 1) / np.sqrt(d)
        A = _softmax(S)
        Z = H + A @ V
        z = Z.mean(axis=1)
        logits = z @ p["out_w"] + p["out_b"]
        if not cache:
            return logits
        return logits, dict(Xp=Xp, Cpre=Cpre, U=U, Hpre=Hpre, H=H, Q=Q, K=Kt, V=V, A=A, z=z)

    def loss_and_grads(self, Xn, y):
        p = self.params
        logits, c = self.forward(Xn, cache=True)
        B, R, T = Xn.shape
        prob = _softmax(logits)
        loss = -np.mean(np.log(prob[np.arange(B), y] + 1e-300))
        dlog = prob.copy()
        dlog[np.arange(B), y] -= 1.0
        dlog /= B
        g = {"out_w": c["z"].T @ dlog, "out_b": dlog.sum(0)}
        dz = dlog @ p["out_w"].T
        dZ = np.repeat(dz[:, None, :] / T, T, axis=1)
        A, H, Q, K, V = c["A"], c["H"], c["Q"], c["K"], c["V"]
        d = H.shape[-1]
        dH = dZ.copy()
        dA = dZ @ V.transpose(0, 2, 1)
        dV = A.transpose(0, 2, 1) @ dZ
        dS = A * (dA - (dA * A).sum(-1, keepdims=True))
        dQ = dS @ K / np.sqrt(d)
        dK = dS.transpose(0, 2, 1) @ Q / np.sqrt(d)
        g["wq"] = np.einsum("btk,btj->kj", H, dQ, optimize=True)
        g["wk"] = np.einsum("btk,btj->kj", H, dK, optimize=True)
        g["wv"] = np.einsum("btk,btj->kj", H, dV, optimize=True)
        dH += dQ @ p["wq"].T + dK @ p["wk"].T + dV @ p["wv"].T
        dHpre = dH * (c["Hpre"] > 0)
        g["proj_w"] = np.einsum("btk,bit->ki", dHpre, c["U"], optimize=True)
        g["proj_b"] = dHpre.sum((0, 1))
        dU = np.einsum("btk,ki->bit", dHpre, p["proj_w"], optimize=True)
        F, Kk = p["conv_w"].shape
        dC = dU.reshape(B, F + 1, R, T)[:, 1:] * (c["Cpre"] > 0)
        Xp = c["Xp"]
        gw = np.empty((F, Kk))
        for j in range(Kk):
            gw[:, j] = np.einsum("bfrt,brt->f", dC, Xp[:, j:j + R], optimize=True)
        g["conv_w"] = gw
        g["conv_b"] = dC.sum((0, 2, 3))
        return loss, g

    def activation_pattern(self, Xn) -> bytes:
        _, c = self.forward(Xn, cache=True)
        return np.packbits(c["Cpre"] > 0).tobytes() + np.packbits(c["Hpre"] > 0).tobytes()

    def predict_proba(self, X):
        Xn = self.standardize(X)
        out = []
        for i in range(0, Xn.shape[0], 32):
            out.append(_softmax(self.forward(Xn[i:i + 32])))
        return np.vstack(out)


# ================================================================ regressor

class Regressor(_Model):
    kind = "regressor"

    @staticmethod
    def init(rows, cols, seed=0, hidden=(400, 300, 300), pool=25):
        if cols % pool:
            raise ValueError(f"window width {cols} is not divisible into {pool} pooled columns")
        rng = np.random.default_rng(seed)
        sizes = [rows * pool, *hidden, 1]
        p = {}
        for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
            scale = np.sqrt(2.0 / a) if i < len(hidden) else np.sqrt(1.0 / a)
            p[f"w{i}"] = rng.normal(0, scale, (a, b))
            p[f"b{i}"] = np.zeros(b)
        cfg = {"input_shape": [rows, cols], "hidden": list(hidden), "pool": pool, "seed": seed}
        return p, cfg

    def pooled(self, Xn):
        B, R, T = Xn.shape
        P = self.config["pool"]
        return Xn.reshape(B, R, P, T // P).mean(-1).reshape(B, R * P)

    def forward(self, Xn, cache=False):
        h = self.pooled(Xn)
        acts, pres = [h], []
        n = len(self.config["hidden"]) + 1
        for i in range(n):
            z = h @ self.params[f"w{i}"] + self.params[f"b{i}"]
            pres.append(z)
            h = np.maximum(z, 0.0) if i < n - 1 else z
            acts.append(h)
        out = h[:, 0]
        return (out, (acts, pres)) if cache else out

    def loss_and_grads(self, Xn, y):
        out, (acts, pres) = self.forward(Xn, cache=True)
        B = Xn.shape[0]
        r = out - y
        loss = 0.5 * np.mean(r * r)
        d = (r / B)[:, None]
        g = {}
        n = len(self.config["hidden"]) + 1
        for i in range(n - 1, -1, -1):
            g[f"w{i}"] = acts[i].T @ d
            g[f"b{i}"] = d.sum(0)
            if i:
                d = (d @ self.params[f"w{i}"].T) * (pres[i - 1] > 0)
        return loss, g

    def activation_pattern(self, Xn) -> bytes:
        _, (_, pres) = self.forward(Xn, cache=True)
        return b"".join(np.packbits(z > 0).tobytes() for z in pres[:-1])

    def predict(self, X):
        Xn = self.standardize(X)
        ys = self.forward(Xn)
        return ys * self.norm["y_sd"] + self.norm["y_mu"]


# ================================================================ training

@dataclass
class TrainReport:
    holdout_metric: float  # accuracy (classifier) or RMSE in target units (regressor)
    train_metric: float
    losses: list[float] = field(default_factory=list)
    holdout_index: np.ndarray | None = None


def _fit(model, Xn, target, cfg: TrainConfig, rng):
    state = _adam_state(model.params)
    n = Xn.shape[0]
    losses = []
    step = 0
    for ep in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for bi, i in enumerate(range(0, n, cfg.batch_size)):
            idx = order[i:i + cfg.batch_size]
            loss, g = model.loss_and_grads(Xn[idx], target[idx])
            if not np.isfinite(loss) or not all(np.all(np.isfinite(v)) for v in g.values()):
                raise TrainingDiverged(ep, bi)
            step += 1
            _adam_step(model.params, g, state, step, cfg.learning_rate, cfg.weight_decay)
            total += loss * idx.size
        losses.append(total / n)
    return losses


def train_classifier(X, y, cfg: TrainConfig = TrainConfig(), **arch) -> tuple[Classifier, TrainReport]:
    """Train the attention classifier; returns the model and its holdout accuracy."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    _check_dataset(X, y, cfg.min_records)
    rng = np.random.default_rng(cfg.seed)
    tr, ho = _split(X.shape[0], cfg.holdout_fraction, rng)
    if np.unique(y[tr]).size < 2:
        raise TrainingError("training split holds a single class")
    mu, sd = _row_stats(X[tr])
    params, conf = Classifier.init(X.shape[1], X.shape[2], seed=cfg.seed, **arch)
    model = Classifier(params, conf, {"mu": mu, "sd": sd})
    Xn = model.standardize(X)
    losses = _fit(model, Xn[tr], y[tr], cfg, rng)
    model.finalize()
    acc = lambda idx: float(np.mean(np.argmax(model.predict_proba(X[idx]), 1) == y[idx])) if idx.size else float("nan")
    return model, TrainReport(acc(ho), acc(tr), losses, ho)


def train_regressor(X, target, cfg: TrainConfig = TrainConfig(), **arch) -> tuple[Regressor, TrainReport]:
    """Train the dense regressor; returns the model and its holdout RMSE."""
    X = np.asarray(X, dtype=float)
    t = np.asarray(target, dtype=float)
    _check_dataset(X, None, cfg.min_records)
    if not np.all(np.isfinite(t)):
        raise TrainingError("regression targets must be finite")
    rng = np.random.default_rng(cfg.seed)
    tr, ho = _split(X.shape[0], cfg.holdout_fraction, rng)
    mu, sd = _row_stats(X[tr])
    y_mu = float(t[tr].mean())
    y_sd = float(t[tr].std()) or 1.0
    params, conf = Regressor.init(X.shape[1], X.shape[2], seed=cfg.seed, **arch)
    model = Regressor(params, conf, {"mu": mu, "sd": sd, "y_mu": y_mu, "y_sd": y_sd})
    Xn = model.standardize(X)
    losses = _fit(model, Xn[tr], (t[tr] - y_mu) / y_sd, cfg, rng)
    model.finalize()
    rmse = lambda idx: float(np.sqrt(np.mean((model.predict(X[idx]) - t[idx]) ** 2))) if idx.size else float("nan")
    return model, TrainReport(rmse(ho), rmse(tr), losses, ho)


# ================================================================ inference

def predict_tis(model: Classifier, window) -> tuple[int, float]:
    """Predicted class and its softmax probability."""
    X = getattr(window, "values", window)
    pr = model.predict_proba(X)[0]
    k = int(np.argmax(pr))
    return k, float(pr[k])


@dataclass(frozen=True)
class FrequencyPrediction:
    delta_f: float | None  # Hz; None when the classifier is not confident enough
    tis_class: int
    confidence: float

    @property
    def gated(self) -> bool:
        return self.delta_f is None


def predict_frequency_deviation(model: Regressor, window, classifier: Classifier | None = None,
                                gate: float = GATE) -> FrequencyPrediction:
    """First-swing deviation (Hz), withheld when classifier confidence is below ``gate``."""
    X = getattr(window, "values", window)
    if classifier is not None:
        cls, conf = predict_tis(classifier, X)
        if conf < gate:
            return FrequencyPrediction(None, cls, conf)
    else:
        cls, conf = -1, 1.0
    return FrequencyPrediction(float(model.predict(X)[0]), cls, conf)


def majority_baseline(y_train, y_test) -> float:
    """Holdout accuracy of always predicting the training majority class."""
    y_train = np.asarray(y_train, dtype=int)
    major = int(np.bincount(y_train, minlength=2).argmax())
    return float(np.mean(np.asarray(y_test) == major))


# ================================================================ gradient check

def flat_params(model) -> np.ndarray:
    return np.concatenate([v.ravel() for v in model.params.values()])


def gradient_check(model, Xn, target, probes: int = 10, h: float = 1e-5, seed: int = 0):
    """Relative errors between analytic and central-difference gradients at random entries.

    A probe whose +-h perturbation flips any ReLU (the loss has a kink inside
    the difference stencil) is redrawn, since central differences are not a
    derivative estimate there.
    """
    rng = np.random.default_rng(seed)
    _, g = model.loss_and_grads(Xn, target)
    base = model.activation_pattern(Xn)
    keys = list(model.params)
    errs = []
    draws = 0
    while len(errs) < probes:
        draws += 1
        if draws > 100 * probes:
            raise RuntimeError("could not find probes away from activation kinks")
        k = keys[rng.integers(len(keys))]
        idx = tuple(rng.integers(s) for s in model.params[k].shape)
        old = model.params[k][idx]
        model.params[k][idx] = old + h
        lp, _ = model.loss_and_grads(Xn, target)
        same = model.activation_pattern(Xn) == base
        model.params[k][idx] = old - h
        lm, _ = model.loss_and_grads(Xn, target)
        same = same and model.activation_pattern(Xn) == base
        model.params[k][idx] = old
        if not same:
            continue
        fd = (lp - lm) / (2 * h)
        an = g[k][idx]
        errs.append((k, idx, an, fd, abs(an - fd) / max(abs(an), abs(fd), 1e-8)))
    return errs
