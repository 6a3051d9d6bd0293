"""Small tanh MLPs with hand-written backpropagation and Adam."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# odd [5/4] rational fitted to tanh on [0, 4] (minimax, |err| < 6e-5)
RATIONAL_TANH = (1.00012669, 0.107572336, 8.50205223e-4, 0.440978692, 1.44824301e-2)
RATIONAL_CLAMP = 4.0


def tanh_rational(x):
    """Fast tanh: odd rational approximation, clamped to +-1 for |x| > 4."""
    a, b, c, d, e = RATIONAL_TANH
    x = np.asarray(x)
    x2 = x * x
    y = x * (a + x2 * (b + c * x2)) / (1.0 + x2 * (d + e * x2))
    return np.where(np.abs(x) > RATIONAL_CLAMP, np.sign(x), np.clip(y, -1.0, 1.0)).astype(x.dtype)


def _tanh_rational_inplace(h):
    a, b, c, d, e = RATIONAL_TANH
    x2 = h * h
    num = x2 * c
    num += b
    num *= x2
    num += a
    num *= h
    den = x2 * e
    den += d
    den *= x2
    den += 1.0
    np.divide(num, den, out=h)
    np.clip(h, -1.0, 1.0, out=h)
    return h


ACTIVATIONS = {
    "tanh": (np.tanh, lambda y, z: 1.0 - y * y),
    "relu": (lambda z: np.maximum(z, 0.0), lambda y, z: (z > 0).astype(z.dtype)),
}


@dataclass
class Mlp:
    """Dense network: tanh hidden layers, affine output.

    ``weights[i]`` has shape (fan_in, fan_out), so a batch ``x`` of shape
    (N, fan_in) maps through ``x @ W + b``.
    """

    weights: list
    biases: list
    activation: str = "tanh"

    @classmethod
    def init(cls, sizes, rng: np.random.Generator, dtype=np.float32, activation="tanh"):
        ws, bs = [], []
        for fi, fo in zip(sizes[:-1], sizes[1:]):
            lim = np.sqrt(6.0 / (fi + fo))
            ws.append(rng.uniform(-lim, lim, size=(fi, fo)).astype(dtype))
            bs.append(np.zeros(fo, dtype=dtype))
        return cls(ws, bs, activation)

    @property
    def sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def params(self) -> list[np.ndarray]:
        return [p for wb in zip(self.weights, self.biases) for p in wb]

    def astype(self, dtype) -> "Mlp":
        return Mlp([w.astype(dtype) for w in self.weights], [b.astype(dtype) for b in self.biases],
                   self.activation)

    def copy(self) -> "Mlp":
        return self.astype(self.weights[0].dtype)

    def check(self):
        sizes = self.sizes
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (sizes[i], sizes[i + 1]) or b.shape != (sizes[i + 1],):
                raise ValueError(f"layer {i}: inconsistent shapes {w.shape}, {b.shape}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError(f"layer {i}: non-finite parameters")


def mlp_forward(m: Mlp, x, fast: bool = False):
    """Evaluate the network on a batch ``x`` of shape (N, fan_in).

    With ``fast`` the hidden activations use :func:`tanh_rational` in place.
    """
    x = np.asarray(x, dtype=m.weights[0].dtype)
    if x.ndim != 2 or x.shape[1] != m.weights[0].shape[0]:
        raise ValueError(f"expected input of shape (N, {m.weights[0].shape[0]}), got {x.shape}")
    act = ACTIVATIONS[m.activation][0]
    h = x
    last = len(m.weights) - 1
    for i, (w, b) in enumerate(zip(m.weights, m.biases)):
        h = h @ w
        h += b
        if i < last:
            if fast and m.activation == "tanh":
                _tanh_rational_inplace(h)
            else:
                h = act(h)
    return h


def forward_cache(m: Mlp, x):
    """Forward pass keeping (inputs, pre-activations, activations) per layer."""
    x = np.asarray(x, dtype=m.weights[0].dtype)
    act = ACTIVATIONS[m.activation][0]
    acts = [x]
    pres = []
    h = x
    last = len(m.weights) - 1
    for i, (w, b) in enumerate(zip(m.weights, m.biases)):
        z = h @ w + b
        pres.append(z)
        h = act(z) if i < last else z
        acts.append(h)
    return h, (acts, pres)


def backprop(m: Mlp, cache, grad_out):
    """Parameter gradients given dL/d(output); returns (dW list, db list)."""
    acts, pres = cache
    dact = ACTIVATIONS[m.activation][1]
    g = grad_out
    dws = [None] * len(m.weights)
    dbs = [None] * len(m.weights)
    for i in range(len(m.weights) - 1, -1, -1):
        if i < len(m.weights) - 1:
            g = g * dact(acts[i + 1], pres[i])
        dws[i] = acts[i].T @ g
        dbs[i] = g.sum(axis=0)
        if i:
            g = g @ m.weights[i].T
    return dws, dbs


# -------------------------------------------------------------------- losses

@dataclass
class RegressorTargets:
    """How the 5 regressor outputs map to physical quantities.

    Output ``k`` is ``raw * scale[k] + offset[k]``; columns are
    (px, py, wx, wy, intensity).  ``axial_sign`` fixes the sign of the
    reconstructed axial direction component.
    """

    offset: np.ndarray
    scale: np.ndarray
    axial_sign: float = 1.0


DIR_FLOOR = 1e-6


def direction_from_transverse(t, axial_sign):
    q = 1.0 - t[:, 0] ** 2 - t[:, 1] ** 2
    z = axial_sign * np.sqrt(np.maximum(q, DIR_FLOOR))
    return np.column_stack([t[:, 0], t[:, 1], z]), q > DIR_FLOOR


def loss_regressor(pred, target, spec: RegressorTargets, want_grad: bool = False,
                   direction_weight: float = 1.0):
    """Position MSE + intensity MSE + (1 - cosine) direction loss.

    ``pred`` holds raw network outputs (N, 5); ``target`` holds physical
    targets (N, 6): px, py, direction (3), intensity.  Position and
    intensity errors are measured in normalized units.  A zero-length
    predicted direction scores the worst case 2 on the direction term.
    ``direction_weight`` scales the direction term in the total; the
    reported ``terms`` are unweighted.
    Returns ``(total, terms)`` or ``(total, terms, dL/dpred)``.
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    off = np.asarray(spec.offset, dtype=np.float64)
    sc = np.asarray(spec.scale, dtype=np.float64)
    n = len(pred)
    tp = (target[:, 0:2] - off[0:2]) / sc[0:2]
    ti = (target[:, 5] - off[4]) / sc[4]
    dp = pred[:, 0:2] - tp
    di = pred[:, 4] - ti
    l_pos = np.mean(dp * dp)
    l_int = np.mean(di * di)
    tw = pred[:, 2:4] * sc[2:4] + off[2:4]
    v, inside = direction_from_transverse(tw, spec.axial_sign)
    vn = np.linalg.norm(v, axis=1)
    tgt = target[:, 2:5]
    tn = np.linalg.norm(tgt, axis=1)
    dot = np.sum(v * tgt, axis=1)
    degenerate = (vn == 0.0) | (tn == 0.0)
    safe = np.where(degenerate, 1.0, vn * tn)
    cos = np.where(degenerate, -1.0, dot / safe)
    l_dir = np.mean(1.0 - cos)
    total = l_pos + l_int + direction_weight * l_dir
    terms = {"position": l_pos, "direction": l_dir, "intensity": l_int}
    if not want_grad:
        return total, terms
    g = np.zeros_like(pred)
    g[:, 0:2] = 2.0 * dp / (2 * n)
    g[:, 4] = 2.0 * di / n
    vn_s = np.where(degenerate, 1.0, vn)
    tn_s = np.where(degenerate, 1.0, tn)
    dcos_dv = tgt / (vn_s * tn_s)[:, None] - (dot / (vn_s ** 3 * tn_s))[:, None] * v
    dcos_dv[degenerate] = 0.0
    dz_dt = np.where(inside[:, None], -tw / v[:, 2:3], 0.0)
    dcos_dt = dcos_dv[:, 0:2] + dcos_dv[:, 2:3] * dz_dt
    g[:, 2:4] = -direction_weight * dcos_dt * sc[2:4] / n
    return total, terms, g


def loss_classifier(logit, label, want_grad: bool = False):
    """Mean binary cross-entropy on logits (stable form)."""
    z = np.asarray(logit, dtype=np.float64).reshape(-1)
    y = np.asarray(label, dtype=np.float64).reshape(-1)
    loss = np.mean(np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z))))
    if not want_grad:
        return loss
    return loss, ((_sigmoid(z) - y) / len(z)).reshape(-1, 1)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def sigmoid(z):
    return _sigmoid(np.asarray(z, dtype=np.float64))


def mse_loss(pred, target, want_grad: bool = False):
    pred = np.asarray(pred, dtype=np.float64)
    d = pred - np.asarray(target, dtype=np.float64)
    loss = np.mean(d * d)
    if not want_grad:
        return loss
    return loss, 2.0 * d / d.size


def mlp_backward(m: Mlp, x, target, loss: str = "mse", spec: RegressorTargets | None = None):
    """Loss and exact parameter gradients for one batch.

    ``loss`` is ``"mse"``, ``"bce"`` (target = labels) or ``"regressor"``
    (needs ``spec``).  Returns ``(loss value, dW list, db list)``.
    """
    x = np.asarray(x)
    if len(x) == 0:
        raise ValueError("empty batch")
    out, cache = forward_cache(m, x)
    if loss == "mse":
        val, g = mse_loss(out, target, want_grad=True)
    elif loss == "bce":
        val, g = loss_classifier(out, target, want_grad=True)
    elif loss == "regressor":
        val, _, g = loss_regressor(out, target, spec, want_grad=True)
    else:
        raise ValueError(f"unknown loss {loss!r}")
    dws, dbs = backprop(m, cache, g.astype(out.dtype))
    return val, dws, dbs


class Adam:
    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads, lr):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        step = lr * np.sqrt(c2) / c1
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            p -= (step * m / (np.sqrt(v) + self.eps * np.sqrt(c2))).astype(p.dtype)
