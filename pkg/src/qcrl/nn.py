"""Small dense networks in plain numpy.

All weights and biases of a network live in one flat ``theta`` vector; the
per-layer ``weights``/``biases`` arrays are views into it.  Gradients use the
same flat layout, so Adam, soft target updates and the shared-prefix merge
are single vectorized operations.  Layer ``i`` occupies a contiguous block
and blocks are laid out in layer order, so the parameters of the first ``k``
layers are exactly ``theta[:prefix_size(k)]``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

ACTIVATIONS = ("relu", "tanh", "linear")
CHECKPOINT_VERSION = 1


class ShapeMismatch(ValueError):
    pass


class ArchitectureMismatch(ValueError):
    pass


@dataclass(frozen=True)
class LayerSpec:
    in_width: int
    out_width: int
    activation: str = "relu"

    def __post_init__(self):
        if self.in_width < 1 or self.out_width < 1:
            raise ValueError("layer widths must be >= 1")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def n_params(self) -> int:
        return self.in_width * self.out_width + self.out_width


class MlpParams:
    """Layer list plus flat parameter vector.

    ``shared_prefix`` counts the leading layers that another network (the
    reward predictor) reuses.  ``share_mask``, when set, is a 0/1 vector over
    the shared parameters; ``None`` means every shared parameter is shared.
    """

    def __init__(self, layers, theta=None, shared_prefix: int = 0, share_mask=None):
        layers = list(layers)
        if not layers:
            raise ValueError("a network needs at least one layer")
        for a, b in zip(layers, layers[1:]):
            if a.out_width != b.in_width:
                raise ArchitectureMismatch(f"width mismatch between layers: {a} -> {b}")
        if not 0 <= shared_prefix <= len(layers):
            raise ValueError("shared_prefix exceeds layer count")
        self.layers = layers
        self.shared_prefix = shared_prefix
        self.offsets = np.cumsum([0] + [ly.n_params for ly in layers]).tolist()
        size = self.offsets[-1]
        if theta is None:
            theta = np.zeros(size)
        theta = np.array(theta, dtype=float)
        if theta.shape != (size,):
            raise ShapeMismatch(f"theta has shape {theta.shape}, expected ({size},)")
        self.theta = theta
        self.share_mask = None if share_mask is None else np.asarray(share_mask, dtype=float)
        self._bind()

    def _bind(self):
        self.weights, self.biases = [], []
        for ly, off in zip(self.layers, self.offsets):
            nw = ly.in_width * ly.out_width
            self.weights.append(self.theta[off:off + nw].reshape(ly.in_width, ly.out_width))
            self.biases.append(self.theta[off + nw:off + nw + ly.out_width])

    @property
    def size(self) -> int:
        return self.theta.size

    @property
    def in_width(self) -> int:
        return self.layers[0].in_width

    @property
    def out_width(self) -> int:
        return self.layers[-1].out_width

    def prefix_size(self, n_layers: int | None = None) -> int:
        n = self.shared_prefix if n_layers is None else n_layers
        return self.offsets[n]

    def copy(self) -> "MlpParams":
        return MlpParams(self.layers, self.theta.copy(), self.shared_prefix, self.share_mask)

    def same_architecture(self, other: "MlpParams") -> bool:
        return self.layers == other.layers

    def __repr__(self):
        widths = [self.in_width] + [ly.out_width for ly in self.layers]
        return f"MlpParams(widths={widths}, shared_prefix={self.shared_prefix})"


def make_mlp(in_width: int, hidden, out_width: int, rng: np.random.Generator,
             hidden_activation: str = "relu", out_activation: str = "linear",
             final_scale: float = 1.0, shared_prefix: int = 0) -> MlpParams:
    """Uniform fan-in initialization, ``U(-1/sqrt(fan_in), 1/sqrt(fan_in))``.

    The output layer's weights and biases are multiplied by ``final_scale``.
    """
    widths = [in_width, *hidden, out_width]
    layers = [
        LayerSpec(a, b, hidden_activation if i < len(widths) - 2 else out_activation)
        for i, (a, b) in enumerate(zip(widths, widths[1:]))
    ]
    params = MlpParams(layers, shared_prefix=shared_prefix)
    for i, ly in enumerate(layers):
        bound = 1.0 / np.sqrt(ly.in_width)
        scale = final_scale if i == len(layers) - 1 else 1.0
        params.weights[i][...] = rng.uniform(-bound, bound, size=(ly.in_width, ly.out_width)) * scale
        params.biases[i][...] = rng.uniform(-bound, bound, size=ly.out_width) * scale
    return params


def _act(name, z):
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    return z


def _act_grad(name, z, a):
    if name == "relu":
        return (z > 0.0).astype(z.dtype)
    if name == "tanh":
        return 1.0 - a * a
    return None


@dataclass
class Cache:
    inputs: list = field(default_factory=list)
    pre: list = field(default_factory=list)
    post: list = field(default_factory=list)
    squeeze: bool = False


def forward(params: MlpParams, x, n_layers: int | None = None):
    """Evaluate the first ``n_layers`` layers (all by default).

    Accepts one input vector or a batch (rows).  Returns ``(output, cache)``.
    """
    x = np.asarray(x, dtype=float)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    if x.shape[1] != params.in_width:
        raise ShapeMismatch(f"input width {x.shape[1]} != {params.in_width}")
    n = len(params.layers) if n_layers is None else n_layers
    cache = Cache(squeeze=squeeze)
    a = x
    for ly, w, b in zip(params.layers[:n], params.weights, params.biases):
        z = a @ w + b
        cache.inputs.append(a)
        cache.pre.append(z)
        a = _act(ly.activation, z)
        cache.post.append(a)
    return (a[0] if squeeze else a), cache


def backprop(params: MlpParams, cache: Cache, output_gradient, need_params: bool = True,
             need_input: bool = True):
    """Return ``(dtheta, dinput)`` for the layers recorded in ``cache``.

    Parameter gradients are summed over the batch.  Layers beyond those in
    the cache get zero gradient.
    """
    g = np.asarray(output_gradient, dtype=float)
    if g.ndim == 1:
        g = g[None, :]
    n = len(cache.pre)
    if n == 0:
        raise ShapeMismatch("empty cache")
    if g.shape != cache.post[-1].shape:
        raise ShapeMismatch(f"output gradient {g.shape} vs output {cache.post[-1].shape}")
    grad = np.zeros(params.size) if need_params else None
    for i in range(n - 1, -1, -1):
        ly = params.layers[i]
        d = _act_grad(ly.activation, cache.pre[i], cache.post[i])
        if d is not None:
            g = g * d
        if need_params:
            off = params.offsets[i]
            nw = ly.in_width * ly.out_width
            grad[off:off + nw] = (cache.inputs[i].T @ g).ravel()
            grad[off + nw:off + nw + ly.out_width] = g.sum(axis=0)
        if i > 0 or need_input:
            g = g @ params.weights[i].T
    din = None
    if need_input:
        din = g[0] if cache.squeeze else g
    return grad, din


def backward(params: MlpParams, cache: Cache, output_gradient) -> np.ndarray:
    grad, _ = backprop(params, cache, output_gradient, need_input=False)
    return grad


def input_gradient(params: MlpParams, cache: Cache, output_gradient, start: int = 0,
                   stop: int | None = None) -> np.ndarray:
    """Gradient with respect to input columns ``start:stop``."""
    _, din = backprop(params, cache, output_gradient, need_params=False)
    return din[..., start:stop]


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0

    @classmethod
    def for_params(cls, params: MlpParams, lr: float, **kw) -> "AdamState":
        return cls(np.zeros(params.size), np.zeros(params.size), lr, **kw)


def adam_step(params: MlpParams, grads, state: AdamState):
    """In-place bias-corrected Adam update; returns ``(params, state)``."""
    grads = np.asarray(grads, dtype=float)
    if grads.shape != params.theta.shape or state.m.shape != params.theta.shape:
        raise ShapeMismatch("gradient/optimizer shapes do not match parameters")
    state.t += 1
    state.m *= state.beta1
    state.m += (1.0 - state.beta1) * grads
    state.v *= state.beta2
    state.v += (1.0 - state.beta2) * grads * grads
    m_hat = state.m / (1.0 - state.beta1**state.t)
    v_hat = state.v / (1.0 - state.beta2**state.t)
    params.theta -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params, state


def soft_update(target: MlpParams, online: MlpParams, tau: float) -> MlpParams:
    """``target <- tau * online + (1 - tau) * target``, in place."""
    if not target.same_architecture(online):
        raise ArchitectureMismatch("target and online networks differ")
    if not 0.0 <= tau <= 1.0:
        raise ValueError("tau must lie in [0, 1]")
    target.theta[...] = tau * online.theta + (1.0 - tau) * target.theta
    return target


def shared_gradient_merge(params: MlpParams, main_grads, aux_grads, aux_weight: float = 1.0,
                          shared_prefix: int | None = None) -> np.ndarray:
    """Add auxiliary gradients onto the shared leading layers of ``params``.

    ``aux_grads`` may cover just the shared block or the whole network; only
    its shared block is used.  Parameters outside the prefix keep their main
    gradient untouched.
    """
    main_grads = np.asarray(main_grads, dtype=float)
    aux_grads = np.asarray(aux_grads, dtype=float)
    n = params.prefix_size(shared_prefix)
    if main_grads.shape != (params.size,) or aux_grads.ndim != 1 or aux_grads.size < n:
        raise ArchitectureMismatch("gradient vectors do not match the shared architecture")
    if aux_grads.size not in (n, params.size):
        raise ArchitectureMismatch("auxiliary gradients must cover the prefix or the full network")
    merged = main_grads.copy()
    extra = aux_weight * aux_grads[:n]
    if params.share_mask is not None:
        extra = extra * params.share_mask[:n]
    merged[:n] += extra
    return merged


def numerical_gradients(params: MlpParams, x, weight, h: float = 1e-5):
    """Central differences of ``sum(weight * forward(x))``; slow, for checks."""
    def f(p, xx):
        out, _ = forward(p, xx)
        return float(np.sum(weight * out))

    p = params.copy()
    gtheta = np.zeros(p.size)
    for i in range(p.size):
        old = p.theta[i]
        p.theta[i] = old + h
        fp = f(p, x)
        p.theta[i] = old - h
        fm = f(p, x)
        p.theta[i] = old
        gtheta[i] = (fp - fm) / (2 * h)
    x = np.array(x, dtype=float)
    gx = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + h
        fp = f(p, x)
        x[idx] = old - h
        fm = f(p, x)
        x[idx] = old
        gx[idx] = (fp - fm) / (2 * h)
    return gtheta, gx


def gradient_check(rng: np.random.Generator, n_checks: int = 50, tol: float = 1e-5,
                   max_layers: int = 3, max_width: int = 8) -> dict:
    """Randomized finite-difference check of :func:`backprop`.

    Relative error per check is ``|g - g_fd| / max(|g| + |g_fd|, 1e-8)`` in
    the Euclidean norm, taken separately for parameter and input gradients.
    Inputs are redrawn until no rectifier pre-activation sits within 1e-3 of
    its kink, where central differences are meaningless.
    """
    worst = 0.0
    failures = 0
    for _ in range(n_checks):
        n_layers = int(rng.integers(1, max_layers + 1))
        widths = [int(w) for w in rng.integers(1, max_width + 1, size=n_layers + 1)]
        acts = [str(rng.choice(ACTIVATIONS)) for _ in range(n_layers)]
        layers = [LayerSpec(a, b, act) for a, b, act in zip(widths, widths[1:], acts)]
        params = MlpParams(layers, rng.normal(0.0, 0.7, size=sum(ly.n_params for ly in layers)))
        batch = int(rng.integers(1, 4))
        while True:
            x = rng.normal(size=(batch, widths[0]))
            _, cache = forward(params, x)
            if all(np.min(np.abs(z)) >= 1e-3 for z, ly in zip(cache.pre, layers) if ly.activation == "relu"):
                break
        weight = rng.normal(size=(batch, widths[-1]))
        g, gx = backprop(params, cache, weight)
        ng, ngx = numerical_gradients(params, x, weight)
        err = max(rel_error(g, ng), rel_error(gx, ngx))
        worst = max(worst, err)
        failures += err >= tol
    return {"checks": n_checks, "max_rel_error": worst, "failures": int(failures), "passed": failures == 0}


def rel_error(a, b) -> float:
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-8))


# -- checkpoint container ------------------------------------------------------


def params_to_dict(params: MlpParams) -> dict:
    return {
        "layers": [[ly.in_width, ly.out_width, ly.activation] for ly in params.layers],
        "shared_prefix": params.shared_prefix,
    }


def params_from_dict(meta: dict, theta, share_mask=None) -> MlpParams:
    layers = [LayerSpec(a, b, act) for a, b, act in meta["layers"]]
    return MlpParams(layers, theta, meta["shared_prefix"], share_mask)


def save_arrays(path, meta: dict, arrays: dict) -> Path:
    """Write an ``.npz`` holding ``arrays`` plus a JSON metadata record."""
    path = Path(path)
    payload = dict(arrays)
    payload["__meta__"] = np.frombuffer(
        json.dumps({"version": CHECKPOINT_VERSION, **meta}, sort_keys=True).encode(), dtype=np.uint8
    )
    with path.open("wb") as fh:
        np.savez(fh, **payload)
    return path


def load_arrays(path) -> tuple[dict, dict]:
    with np.load(Path(path), allow_pickle=False) as data:
        arrays = {k: data[k] for k in data.files if k != "__meta__"}
        meta = json.loads(bytes(data["__meta__"]).decode())
    if meta.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
    return meta, arrays


def save_params(path, params: MlpParams, adam: AdamState | None = None) -> Path:
    meta = {"net": params_to_dict(params)}
    arrays = {"theta": params.theta}
    if adam is not None:
        meta["adam"] = {"lr": adam.lr, "beta1": adam.beta1, "beta2": adam.beta2, "eps": adam.eps, "t": adam.t}
        arrays["adam_m"] = adam.m
        arrays["adam_v"] = adam.v
    return save_arrays(path, meta, arrays)


def load_params(path):
    meta, arrays = load_arrays(path)
    params = params_from_dict(meta["net"], arrays["theta"])
    adam = None
    if "adam" in meta:
        adam = AdamState(arrays["adam_m"], arrays["adam_v"], **meta["adam"])
    return params, adam
