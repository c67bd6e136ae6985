"""From-scratch single-layer LSTM with MLP head, BPTT, Adam, and a
finite-difference gradient checker. Everything is float64 numpy.

Gate layout in the stacked weight matrices is (input, forget, cell, output),
each block of size ``hidden_dim``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyBatch, ShapeMismatch

PARAM_NAMES = ("wx", "wh", "b", "w1", "b1", "w2", "b2")


@dataclass
class LstmModel:
    wx: np.ndarray  # (4H, D)
    wh: np.ndarray  # (4H, H)
    b: np.ndarray  # (4H,)
    w1: np.ndarray  # (h1, H)
    b1: np.ndarray  # (h1,)
    w2: np.ndarray  # (1, h1)
    b2: np.ndarray  # (1,)

    @property
    def input_dim(self) -> int:
        return self.wx.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.wh.shape[1]

    def params(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def copy(self) -> "LstmModel":
        return LstmModel(**{name: getattr(self, name).copy() for name in PARAM_NAMES})


@dataclass
class Gradients:
    wx: np.ndarray
    wh: np.ndarray
    b: np.ndarray
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    def params(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def for_model(cls, model: LstmModel) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p) for k, p in model.params().items()},
            v={k: np.zeros_like(p) for k, p in model.params().items()},
            t=0,
        )


def init_model(input_dim: int, hidden_dim: int = 12, mlp_hidden: int = 12, seed: int = 0) -> LstmModel:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) init with forget-gate bias +1."""
    rng = np.random.default_rng(seed)

    def uni(shape, fan_in):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    h = hidden_dim
    model = LstmModel(
        wx=uni((4 * h, input_dim), input_dim),
        wh=uni((4 * h, h), h),
        b=np.zeros(4 * h),
        w1=uni((mlp_hidden, h), h),
        b1=np.zeros(mlp_hidden),
        w2=uni((1, mlp_hidden), mlp_hidden),
        b2=np.zeros(1),
    )
    model.b[h : 2 * h] = 1.0
    return model


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def forward(model: LstmModel, windows: np.ndarray):
    """Run the recurrence over a (B, T, D) batch (a single (T, D) window is
    promoted). Returns scalar predictions (B,) and the cache for backward."""
    windows = np.asarray(windows, dtype=np.float64)
    if windows.ndim == 2:
        windows = windows[None]
    if windows.ndim != 3 or windows.shape[2] != model.input_dim:
        raise ShapeMismatch(f"expected (B, T, {model.input_dim}) windows, got {windows.shape}")
    batch, steps, _ = windows.shape
    hd = model.hidden_dim

    h = np.zeros((batch, hd))
    c = np.zeros((batch, hd))
    cache = {"x": windows, "steps": []}
    for t in range(steps):
        x = windows[:, t, :]
        z = x @ model.wx.T + h @ model.wh.T + model.b
        i = _sigmoid(z[:, :hd])
        f = _sigmoid(z[:, hd : 2 * hd])
        g = np.tanh(z[:, 2 * hd : 3 * hd])
        o = _sigmoid(z[:, 3 * hd :])
        c_new = f * c + i * g
        tanh_c = np.tanh(c_new)
        h_new = o * tanh_c
        cache["steps"].append((h, c, i, f, g, o, tanh_c))
        h, c = h_new, c_new

    z1 = h @ model.w1.T + model.b1
    a1 = np.tanh(z1)
    preds = (a1 @ model.w2.T + model.b2)[:, 0]
    cache["h_last"] = h
    cache["a1"] = a1
    return preds, cache


def mse_loss(preds, targets) -> float:
    preds = np.asarray(preds, dtype=np.float64).ravel()
    targets = np.asarray(targets, dtype=np.float64).ravel()
    if len(preds) == 0:
        raise EmptyBatch("empty batch")
    if len(preds) != len(targets):
        raise ShapeMismatch("preds and targets differ in length")
    return float(np.mean((preds - targets) ** 2))


def backward(model: LstmModel, windows: np.ndarray, targets: np.ndarray):
    """Exact gradients of the batch-mean squared error via BPTT.

    Returns (loss, Gradients); gradients are averaged over the batch.
    """
    targets = np.asarray(targets, dtype=np.float64).ravel()
    if len(targets) == 0:
        raise EmptyBatch("empty batch")
    preds, cache = forward(model, windows)
    if len(preds) != len(targets):
        raise ShapeMismatch("batch size mismatch between windows and targets")
    batch = len(preds)
    hd = model.hidden_dim
    loss = mse_loss(preds, targets)

    dpred = (2.0 / batch) * (preds - targets)  # (B,)
    a1 = cache["a1"]
    h_last = cache["h_last"]
    d_w2 = dpred[None, :] @ a1  # (1, h1)
    d_b2 = np.array([dpred.sum()])
    da1 = dpred[:, None] * model.w2  # (B, h1)
    dz1 = da1 * (1.0 - a1**2)
    d_w1 = dz1.T @ h_last
    d_b1 = dz1.sum(axis=0)
    dh = dz1 @ model.w1  # (B, H)
    dc = np.zeros_like(dh)

    d_wx = np.zeros_like(model.wx)
    d_wh = np.zeros_like(model.wh)
    d_b = np.zeros_like(model.b)
    x = cache["x"]
    for t in range(len(cache["steps"]) - 1, -1, -1):
        h_prev, c_prev, i, f, g, o, tanh_c = cache["steps"][t]
        do = dh * tanh_c
        dc = dc + dh * o * (1.0 - tanh_c**2)
        di = dc * g
        df = dc * c_prev
        dg = dc * i
        dz = np.concatenate(
            [
                di * i * (1.0 - i),
                df * f * (1.0 - f),
                dg * (1.0 - g**2),
                do * o * (1.0 - o),
            ],
            axis=1,
        )  # (B, 4H)
        d_wx += dz.T @ x[:, t, :]
        d_wh += dz.T @ h_prev
        d_b += dz.sum(axis=0)
        dh = dz @ model.wh
        dc = dc * f

    grads = Gradients(wx=d_wx, wh=d_wh, b=d_b, w1=d_w1, b1=d_b1, w2=d_w2, b2=d_b2)
    return loss, grads


def adam_step(
    model: LstmModel,
    grads: Gradients,
    state: AdamState,
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    grad_clip: float | None = None,
) -> None:
    """Standard Adam with bias correction; updates model and state in place."""
    state.t += 1
    t = state.t
    for name, p in model.params().items():
        g = getattr(grads, name)
        if g.shape != p.shape:
            raise ShapeMismatch(f"gradient shape mismatch for {name}")
        if grad_clip is not None:
            g = np.clip(g, -grad_clip, grad_clip)
        m = state.m[name]
        v = state.v[name]
        m[:] = beta1 * m + (1.0 - beta1) * g
        v[:] = beta2 * v + (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        p -= lr * m_hat / (np.sqrt(v_hat) + eps)


def grad_check(model: LstmModel, windows, targets, fd_step: float = 1e-5) -> float:
    """Max relative error of BPTT gradients against central finite differences
    of the loss, over every parameter entry."""
    if fd_step <= 0:
        raise ValueError("fd_step must be positive")
    _, grads = backward(model, windows, targets)
    worst = 0.0
    for name, p in model.params().items():
        analytic = getattr(grads, name)
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = p[idx]
            p[idx] = orig + fd_step
            lo_plus = mse_loss(forward(model, windows)[0], targets)
            p[idx] = orig - fd_step
            lo_minus = mse_loss(forward(model, windows)[0], targets)
            p[idx] = orig
            numeric = (lo_plus - lo_minus) / (2.0 * fd_step)
            a = analytic[idx]
            # denominator floored so FD roundoff (~1e-11 here) on vanishing
            # entries does not register as a large relative error
            rel = abs(a - numeric) / max(abs(a) + abs(numeric), 1e-4)
            worst = max(worst, rel)
    return worst


def save_checkpoint(path, model: LstmModel, state: AdamState, meta: dict) -> None:
    import json

    arrays = {f"param_{k}": v for k, v in model.params().items()}
    arrays.update({f"adam_m_{k}": v for k, v in state.m.items()})
    arrays.update({f"adam_v_{k}": v for k, v in state.v.items()})
    np.savez(path, adam_t=np.int64(state.t), meta=np.asarray(json.dumps(meta)), **arrays)


def load_checkpoint(path):
    import json

    with np.load(path, allow_pickle=False) as data:
        model = LstmModel(**{k: data[f"param_{k}"] for k in PARAM_NAMES})
        state = AdamState(
            m={k: data[f"adam_m_{k}"] for k in PARAM_NAMES},
            v={k: data[f"adam_v_{k}"] for k in PARAM_NAMES},
            t=int(data["adam_t"]),
        )
        meta = json.loads(str(data["meta"]))
    return model, state, meta
