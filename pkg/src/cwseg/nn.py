"""Numeric core: activations, Adam, gradient checking, RNG, model container.

Tensors are plain float64 numpy arrays.  Parameters live in a ParamStore and
are updated in place, which is what lets asynchronous trainers share one
parameter set across threads without locks: aligned 8-byte stores are
indivisible on the platforms we run on, so concurrent readers see either the
old or the new value of each scalar, never a torn one.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field

import numpy as np

CONTAINER_MAGIC = b"CWSEG-MODEL 1\n"


def make_rng(seed, *streams):
    """Deterministic counter-based generator for a named stream.

    Distinct stream names under one seed give statistically independent
    generators, so e.g. shuffling and initialization never share state.
    """
    spawn_key = tuple(zlib.crc32(name.encode("utf-8")) for name in streams)
    seq = np.random.SeedSequence(entropy=int(seed), spawn_key=spawn_key)
    return np.random.Generator(np.random.Philox(seq))


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax(x, axis=-1):
    x = np.asarray(x, dtype=np.float64)
    shifted = x - np.max(x, axis=axis, keepdims=True)
    ex = np.exp(shifted)
    return ex / np.sum(ex, axis=axis, keepdims=True)


def log_softmax(x, axis=-1):
    x = np.asarray(x, dtype=np.float64)
    shifted = x - np.max(x, axis=axis, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))


def xavier_uniform(rng, shape):
    """Uniform(+-sqrt(6/(fan_in+fan_out))) init for an (out, in) matrix."""
    fan_out, fan_in = shape[0], shape[-1]
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


@dataclass
class AdamHyper:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError("betas must lie in [0, 1)")
        if self.eps <= 0:
            raise ValueError("eps must be positive")


@dataclass
class AdamState:
    """First/second moment estimates and a shared step counter.

    Each asynchronous worker owns a private AdamState over the shared
    parameter dict; serial and synchronous training use the store's own.
    """

    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0

    def ensure(self, name, shape):
        if name not in self.m:
            self.m[name] = np.zeros(shape, dtype=np.float64)
            self.v[name] = np.zeros(shape, dtype=np.float64)


def adam_step(params, grads, hyper, state):
    """One Adam update, in place, over the entries named in `grads`.

    The step counter advances once per call.  Entries without a gradient are
    untouched, moments included.  Non-finite gradients are rejected.
    """
    for name, g in grads.items():
        if name not in params:
            raise KeyError("gradient for unknown parameter %r" % name)
        if not np.all(np.isfinite(g)):
            raise ValueError("non-finite gradient for parameter %r" % name)
    state.t += 1
    t = state.t
    b1, b2 = hyper.beta1, hyper.beta2
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t
    for name, g in grads.items():
        state.ensure(name, params[name].shape)
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * np.square(g)
        update = (hyper.lr / bc1) * m / (np.sqrt(v / bc2) + hyper.eps)
        np.subtract(params[name], update, out=params[name])


def clip_global_norm(grads, max_norm):
    """Scale all gradients in place so their joint L2 norm is <= max_norm.

    A max_norm of 0 (or None) disables clipping.  Returns the pre-clip norm.
    """
    total = 0.0
    for g in grads.values():
        total += float(np.sum(np.square(g)))
    norm = float(np.sqrt(total))
    if max_norm and norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


class ParamStore:
    """Named float64 parameter tensors plus their Adam moments.

    Insertion order is preserved and determines serialization order.  The
    arrays themselves may be shared across threads; see the module docstring
    for the concurrency contract.
    """

    def __init__(self):
        self.params = {}
        self.state = AdamState()

    def add(self, name, value):
        if name in self.params:
            raise ValueError("duplicate parameter %r" % name)
        arr = np.array(value, dtype=np.float64)
        self.params[name] = arr
        self.state.ensure(name, arr.shape)
        return arr

    def __getitem__(self, name):
        return self.params[name]

    def __contains__(self, name):
        return name in self.params

    def names(self):
        return list(self.params)

    def adam_step(self, grads, hyper):
        adam_step(self.params, grads, hyper, self.state)

    def copy(self):
        other = ParamStore()
        for name, arr in self.params.items():
            other.add(name, arr.copy())
        return other


def grad_check(loss_fn, analytic, store, h=1e-5, names=None):
    """Max relative error between analytic gradients and central differences.

    `loss_fn(store)` must be a deterministic scalar; `analytic` maps
    parameter names to gradients computed at the current point.  Every
    coordinate of every checked parameter is perturbed by +-h.  Relative
    error is |a - n| / max(|a|, |n|, 1e-8).
    """
    base = float(loss_fn(store))
    if not np.isfinite(base):
        raise ValueError("loss is not finite at the evaluation point")
    worst = 0.0
    for name in names if names is not None else analytic:
        p = store.params[name]
        g = analytic[name]
        if g.shape != p.shape:
            raise ValueError("gradient shape mismatch for %r" % name)
        it = np.nditer(p, flags=["multi_index"])
        while not it.finished:
            idx = it.multi_index
            orig = p[idx]
            p[idx] = orig + h
            lp = float(loss_fn(store))
            p[idx] = orig - h
            lm = float(loss_fn(store))
            p[idx] = orig
            if not (np.isfinite(lp) and np.isfinite(lm)):
                raise ValueError("loss not finite while perturbing %r" % name)
            numeric = (lp - lm) / (2.0 * h)
            a = float(g[idx])
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, err)
            it.iternext()
    return worst


def save_container(path, params, meta):
    """Write named tensors plus a JSON metadata dict to one file.

    Layout: a magic/version line, a `meta` line, one `tensor name dtype
    dims..` line per entry, an `end` line, then the raw little-endian
    float32 payloads in manifest order.  Output bytes are a pure function of
    the inputs, so identical runs produce identical files.
    """
    with open(path, "wb") as f:
        f.write(CONTAINER_MAGIC)
        blob = json.dumps(meta, sort_keys=True, ensure_ascii=True)
        f.write(("meta %s\n" % blob).encode("ascii"))
        for name, arr in params.items():
            dims = " ".join(str(d) for d in arr.shape)
            f.write(("tensor %s f4 %s\n" % (name, dims)).rstrip().encode("utf-8") + b"\n")
        f.write(b"end\n")
        for arr in params.values():
            f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_container(path):
    """Read a container written by save_container.

    Returns (params, meta) with tensors widened back to float64.
    """
    with open(path, "rb") as f:
        data = f.read()
    if not data.startswith(CONTAINER_MAGIC):
        raise ValueError("not a model container (starts with %r)" % bytes(data[:16]))
    pos = len(CONTAINER_MAGIC)
    meta = None
    manifest = []
    while True:
        nl = data.find(b"\n", pos)
        if nl < 0:
            raise ValueError("truncated container: manifest has no end marker")
        line = data[pos : nl].decode("utf-8")
        pos = nl + 1
        if line == "end":
            break
        if line.startswith("meta "):
            meta = json.loads(line[5:])
            continue
        fields = line.split(" ")
        if fields[0] != "tensor" or len(fields) < 3 or fields[2] != "f4":
            raise ValueError("bad manifest line: %r" % line)
        name = fields[1]
        shape = tuple(int(d) for d in fields[3:])
        manifest.append((name, shape))
    params = {}
    for name, shape in manifest:
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        nbytes = count * 4
        chunk = data[pos : pos + nbytes]
        if len(chunk) != nbytes:
            raise ValueError("truncated payload for tensor %r" % name)
        pos += nbytes
        arr = np.frombuffer(chunk, dtype="<f4").reshape(shape).astype(np.float64)
        params[name] = arr
    if pos != len(data):
        raise ValueError("trailing bytes after tensor payload")
    return params, (meta or {})
