"""Feed-forward networks with hand-written backprop, Adam, and checkpoint I/O."""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

CKPT_HEADER = "SINGAIT-CKPT-v1"
LOG_STD_MIN, LOG_STD_MAX = -5.0, 2.0


class ShapeError(ValueError):
    pass


class CheckpointError(ValueError):
    pass


def orthogonal(shape, gain, rng):
    rows, cols = shape
    a = rng.normal(size=(max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return np.ascontiguousarray(gain * q[:rows, :cols])


class Mlp:
    """ReLU hidden layers, linear output.  Weights are (fan_in, fan_out)."""

    def __init__(self, sizes, prefix: str, params: dict | None = None):
        self.sizes = list(sizes)
        self.prefix = prefix
        self.params = params if params is not None else {}

    def names(self):
        out = []
        for i in range(len(self.sizes) - 1):
            out += [f"{self.prefix}.W{i}", f"{self.prefix}.b{i}"]
        return out

    def init(self, rng, hidden_gain=math.sqrt(2), out_gain=1.0):
        n = len(self.sizes) - 1
        for i in range(n):
            gain = out_gain if i == n - 1 else hidden_gain
            self.params[f"{self.prefix}.W{i}"] = orthogonal((self.sizes[i], self.sizes[i + 1]), gain, rng)
            self.params[f"{self.prefix}.b{i}"] = np.zeros(self.sizes[i + 1])
        return self

    def layers(self):
        n = len(self.sizes) - 1
        return [(self.params[f"{self.prefix}.W{i}"], self.params[f"{self.prefix}.b{i}"]) for i in range(n)]

    def forward(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.sizes[0]:
            raise ShapeError(f"{self.prefix}: expected input width {self.sizes[0]}, got {x.shape[-1]}")
        acts = [x]
        layers = self.layers()
        for i, (W, b) in enumerate(layers):
            x = x @ W + b
            if i < len(layers) - 1:
                x = np.maximum(x, 0.0)
            acts.append(x)
        return x, acts

    def backward(self, dout, acts):
        """Gradients of sum(dout * output) w.r.t. every parameter (batched input)."""
        grads = {}
        layers = self.layers()
        g = np.asarray(dout, dtype=float)
        for i in range(len(layers) - 1, -1, -1):
            W, _ = layers[i]
            x = acts[i]
            grads[f"{self.prefix}.W{i}"] = x.T @ g
            grads[f"{self.prefix}.b{i}"] = g.sum(axis=0)
            if i > 0:
                g = (g @ W.T) * (acts[i] > 0.0)
        return grads


class ActorCritic:
    """Separate policy and value MLPs plus a state-independent log std."""

    def __init__(self, obs_dim, act_dim, hidden=(64, 64), params=None):
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self.hidden = tuple(hidden)
        self.params = params if params is not None else {}
        self.pi = Mlp([obs_dim, *hidden, act_dim], "pi", self.params)
        self.vf = Mlp([obs_dim, *hidden, 1], "vf", self.params)

    @classmethod
    def create(cls, obs_dim, act_dim, hidden=(64, 64), seed=0, log_std_init=0.0, action_bias=None):
        net = cls(obs_dim, act_dim, hidden)
        rng = np.random.default_rng(seed)
        net.pi.init(rng, out_gain=0.01)
        net.vf.init(rng, out_gain=1.0)
        if action_bias is not None:
            net.params[f"pi.b{len(hidden)}"] = np.array(action_bias, dtype=float)
        net.params["pi.log_std"] = np.full(act_dim, float(log_std_init))
        return net

    def names(self):
        return self.pi.names() + ["pi.log_std"] + self.vf.names()

    def n_params(self):
        return sum(self.params[k].size for k in self.names())

    def log_std(self):
        return np.clip(self.params["pi.log_std"], LOG_STD_MIN, LOG_STD_MAX)

    def forward_policy(self, obs):
        mean, acts = self.pi.forward(obs)
        return mean, self.log_std(), acts

    def forward_value(self, obs):
        v, acts = self.vf.forward(obs)
        return v[..., 0], acts

    def clamp(self):
        np.clip(self.params["pi.log_std"], LOG_STD_MIN, LOG_STD_MAX, out=self.params["pi.log_std"])

    def copy(self):
        return ActorCritic(self.obs_dim, self.act_dim, self.hidden, {k: v.copy() for k, v in self.params.items()})


def gaussian_log_prob(mean, log_std, action):
    z = (action - mean) * np.exp(-log_std)
    return np.sum(-0.5 * z * z - log_std - 0.5 * math.log(2.0 * math.pi), axis=-1)


class Adam:
    def __init__(self, lr=3e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params, grads, lr=None):
        lr = self.lr if lr is None else lr
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for k, g in grads.items():
            if k not in self.m:
                self.m[k] = np.zeros_like(params[k])
                self.v[k] = np.zeros_like(params[k])
            m = self.m[k]
            v = self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            params[k] -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


# -- checkpoints --------------------------------------------------------------


def _write_tensor(fh, name, arr):
    arr = np.asarray(arr, dtype=float)
    shape = "x".join(str(d) for d in arr.shape) if arr.ndim else "scalar"
    fh.write(f"tensor {name} {shape}\n")
    rows = arr.reshape(1, -1) if arr.ndim <= 1 else arr.reshape(arr.shape[0], -1)
    for row in rows:
        fh.write(" ".join(repr(float(x)) for x in row) + "\n")
    fh.write("end\n")


def save_checkpoint(path, net: ActorCritic, opt: Adam | None = None, meta: dict | None = None):
    meta = dict(meta or {})
    meta.update(obs_dim=net.obs_dim, act_dim=net.act_dim, hidden=",".join(map(str, net.hidden)))
    with open(path, "w") as fh:
        fh.write(CKPT_HEADER + "\n")
        for k in sorted(meta):
            fh.write(f"meta {k} {meta[k]}\n")
        for name in net.names():
            _write_tensor(fh, name, net.params[name])
        if opt is not None:
            fh.write(f"optimizer adam {opt.t} {opt.lr!r} {opt.beta1!r} {opt.beta2!r} {opt.eps!r}\n")
            for name in sorted(opt.m):
                _write_tensor(fh, f"adam.m/{name}", opt.m[name])
                _write_tensor(fh, f"adam.v/{name}", opt.v[name])


def load_checkpoint(path):
    """Returns (ActorCritic, Adam or None, meta dict)."""
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != CKPT_HEADER:
        raise CheckpointError(f"{path}: missing {CKPT_HEADER} header")
    meta, tensors, opt = {}, {}, None
    i = 1
    while i < len(lines):
        parts = lines[i].split()
        i += 1
        if not parts:
            continue
        if parts[0] == "meta":
            meta[parts[1]] = " ".join(parts[2:])
        elif parts[0] == "optimizer":
            t, lr, b1, b2, eps = parts[2:7]
            opt = Adam(float(lr), float(b1), float(b2), float(eps))
            opt.t = int(t)
        elif parts[0] == "tensor":
            name, shape = parts[1], parts[2]
            dims = () if shape == "scalar" else tuple(int(d) for d in shape.split("x"))
            vals = []
            while lines[i] != "end":
                vals += [float(x) for x in lines[i].split()]
                i += 1
            i += 1
            arr = np.array(vals, dtype=float).reshape(dims)
            tensors[name] = arr
        else:
            raise CheckpointError(f"{path}:{i}: unexpected record {parts[0]!r}")
    hidden = tuple(int(h) for h in meta["hidden"].split(",") if h)
    net = ActorCritic(int(meta["obs_dim"]), int(meta["act_dim"]), hidden)
    for name in net.names():
        if name not in tensors:
            raise CheckpointError(f"{path}: tensor {name} missing")
        net.params[name] = tensors[name]
    if opt is not None:
        for name, arr in tensors.items():
            if name.startswith("adam.m/"):
                opt.m[name[7:]] = arr
            elif name.startswith("adam.v/"):
                opt.v[name[7:]] = arr
    return net, opt, meta
