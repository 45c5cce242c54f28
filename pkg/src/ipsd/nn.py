"""Small layer library with hand-written reverse-mode gradients.

Layers cache what their backward pass needs during ``forward``; calling
``backward`` consumes the cache and *accumulates* into ``grads``. Only
the pieces the denoiser and the partition policy need are here:
same-padded 1D convolution, LeakyReLU/ReLU, dense layers and a
(bidirectional) GRU, plus Adam and a finite-difference gradient checker.

Convolutions accept several independent segments packed along the time
axis (``lengths``); zero padding is applied at every segment edge, so a
packed forward equals separate forwards on each segment.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import InvalidArgumentError, SignalFileError, StateError


def _uniform(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    bound = np.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def sigmoid(x):
    # split by sign to avoid overflow in exp
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class Module:
    """Parameter bookkeeping shared by layers and containers."""

    def children(self) -> Iterator[tuple[str, "Module"]]:
        return iter(())

    def named_parameters(self, prefix: str = "") -> list[tuple[str, np.ndarray, np.ndarray]]:
        out = []
        for name, p in getattr(self, "params", {}).items():
            out.append((prefix + name, p, self.grads[name]))
        for cname, child in self.children():
            out.extend(child.named_parameters(f"{prefix}{cname}."))
        return out

    def parameters(self) -> list[np.ndarray]:
        return [p for _, p, _ in self.named_parameters()]

    def gradients(self) -> list[np.ndarray]:
        return [g for _, _, g in self.named_parameters()]

    def zero_grad(self) -> None:
        for _, _, g in self.named_parameters():
            g.fill(0.0)

    def n_params(self) -> int:
        return sum(p.size for p in self.parameters())

    def clone(self):
        return copy.deepcopy(self)

    def astype(self, dtype):
        for m in self._modules():
            if hasattr(m, "params"):
                m.params = {k: v.astype(dtype) for k, v in m.params.items()}
                m.grads = {k: np.zeros_like(v) for k, v in m.params.items()}
                m.dtype = np.dtype(dtype)
        return self

    def _modules(self):
        yield self
        for _, c in self.children():
            yield from c._modules()

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def _take_cache(self):
        cache = getattr(self, "_cache", None)
        if cache is None:
            raise StateError(f"{type(self).__name__}.backward called without a recorded forward pass")
        self._cache = None
        return cache


class Layer(Module):
    def __init__(self, dtype=np.float64):
        self.dtype = np.dtype(dtype)
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self._cache = None

    def _register(self, name: str, value: np.ndarray) -> None:
        self.params[name] = value
        self.grads[name] = np.zeros_like(value)


# --- convolution -------------------------------------------------------------

def _inner_starts(lengths: Sequence[int], T: int) -> np.ndarray:
    """Start offsets of every segment after the first."""
    lengths = np.asarray(lengths, dtype=np.intp)
    if lengths.sum() != T or lengths.min() < 1:
        raise InvalidArgumentError(f"segment lengths {lengths.tolist()} do not tile {T} samples")
    return np.cumsum(lengths)[:-1]


class Conv1d(Layer):
    """Kernel-3, stride-1, same-padded convolution on ``[channels, time]``.

    ``out[o, t] = bias[o] + sum_{i,k} weight[o, i, k] * x[i, t + k - 1]``

    Each tap is one matmul over a shifted view of the input; taps that
    would reach across a segment boundary are subtracted back out.
    """

    kernel_size = 3
    padding = 1

    def __init__(self, in_ch: int, out_ch: int, rng: np.random.Generator | None = None, dtype=np.float64):
        super().__init__(dtype)
        self.in_ch, self.out_ch = in_ch, out_ch
        rng = rng if rng is not None else np.random.default_rng(0)
        fan_in = in_ch * self.kernel_size
        self._register("weight", _uniform(rng, (out_ch, in_ch, self.kernel_size), fan_in, self.dtype))
        self._register("bias", _uniform(rng, (out_ch,), fan_in, self.dtype))

    def _taps(self) -> list[np.ndarray]:
        w = self.params["weight"]
        return [np.ascontiguousarray(w[:, :, k]) for k in range(self.kernel_size)]

    def forward(self, x: np.ndarray, lengths: Sequence[int] | None = None) -> np.ndarray:
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim != 2 or x.shape[0] != self.in_ch:
            raise InvalidArgumentError(f"expected input [{self.in_ch}, T], got {x.shape}")
        T = x.shape[1]
        if T < 1:
            raise InvalidArgumentError("input must have at least one time step")
        inner = _inner_starts(lengths or [T], T)
        w0, w1, w2 = self._taps()
        out = w1 @ x
        if T > 1:
            out[:, 1:] += w0 @ x[:, :-1]
            out[:, :-1] += w2 @ x[:, 1:]
        if inner.size:
            out[:, inner] -= w0 @ x[:, inner - 1]
            out[:, inner - 1] -= w2 @ x[:, inner]
        out += self.params["bias"][:, None]
        self._cache = (x, inner)
        return out

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        x, inner = self._take_cache()
        g = np.asarray(grad_out, dtype=self.dtype)
        w = self.params["weight"]
        gw = self.grads["weight"]
        gw[:, :, 1] += g @ x.T
        w0t, w1t, w2t = (np.ascontiguousarray(w[:, :, k].T) for k in range(self.kernel_size))
        dx = w1t @ g
        if x.shape[1] > 1:
            gw[:, :, 0] += g[:, 1:] @ x[:, :-1].T
            gw[:, :, 2] += g[:, :-1] @ x[:, 1:].T
            dx[:, :-1] += w0t @ g[:, 1:]
            dx[:, 1:] += w2t @ g[:, :-1]
        if inner.size:
            gw[:, :, 0] -= g[:, inner] @ x[:, inner - 1].T
            gw[:, :, 2] -= g[:, inner - 1] @ x[:, inner].T
            dx[:, inner - 1] -= w0t @ g[:, inner]
            dx[:, inner] -= w2t @ g[:, inner - 1]
        self.grads["bias"] += g.sum(axis=1)
        return dx


def conv1d_forward(layer: Conv1d, x: np.ndarray) -> np.ndarray:
    return layer.forward(x)


# --- pointwise ---------------------------------------------------------------

def leaky_relu(x, slope: float = 0.01):
    x = np.asarray(x, dtype=float)
    return np.where(x >= 0, x, slope * x)


class LeakyReLU(Layer):
    """``inplace`` overwrites the incoming activations and gradients (saves two passes)."""

    def __init__(self, slope: float = 0.01, inplace: bool = False):
        super().__init__()
        self.slope = slope
        self.inplace = inplace

    def forward(self, x, lengths=None):
        neg = x < 0
        self._cache = neg
        if self.inplace:
            return np.multiply(x, self.slope, out=x, where=neg)
        # valid for 0 <= slope <= 1
        return np.maximum(x, self.slope * x)

    def backward(self, grad_out):
        neg = self._take_cache()
        out = grad_out if self.inplace else grad_out.copy()
        return np.multiply(out, self.slope, out=out, where=neg)


class ReLU(Layer):
    def forward(self, x, lengths=None):
        pos = x > 0
        self._cache = pos
        return np.where(pos, x, 0.0)

    def backward(self, grad_out):
        return np.where(self._take_cache(), grad_out, 0.0)


class Linear(Layer):
    """Dense layer on ``[N, in]`` rows."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator | None = None, dtype=np.float64):
        super().__init__(dtype)
        self.in_dim, self.out_dim = in_dim, out_dim
        rng = rng if rng is not None else np.random.default_rng(0)
        self._register("weight", _uniform(rng, (out_dim, in_dim), in_dim, self.dtype))
        self._register("bias", _uniform(rng, (out_dim,), in_dim, self.dtype))

    def forward(self, x, lengths=None):
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise InvalidArgumentError(f"expected input [N, {self.in_dim}], got {x.shape}")
        self._cache = x
        return x @ self.params["weight"].T + self.params["bias"]

    def backward(self, grad_out):
        x = self._take_cache()
        self.grads["weight"] += grad_out.T @ x
        self.grads["bias"] += grad_out.sum(axis=0)
        return grad_out @ self.params["weight"]


# --- recurrent ---------------------------------------------------------------

class GRU(Layer):
    """Single-direction GRU over a ``[T, input_dim]`` sequence.

    z = sigmoid(W_z x + U_z h + b_z)
    r = sigmoid(W_r x + U_r h + b_r)
    c = tanh(W_h x + U_h (r * h) + b_h)
    h' = (1 - z) * h + z * c,   h_0 = 0

    With ``reverse=True`` the sequence is consumed back to front and the
    outputs are returned in the original time order.
    """

    GATES = ("z", "r", "h")

    def __init__(self, input_dim: int, hidden_dim: int, reverse: bool = False,
                 rng: np.random.Generator | None = None, dtype=np.float64):
        super().__init__(dtype)
        self.input_dim, self.hidden_dim, self.reverse = input_dim, hidden_dim, reverse
        rng = rng if rng is not None else np.random.default_rng(0)
        H, D = hidden_dim, input_dim
        for g in self.GATES:
            self._register(f"W_{g}", _uniform(rng, (H, D), H, self.dtype))
        for g in self.GATES:
            self._register(f"U_{g}", _uniform(rng, (H, H), H, self.dtype))
        for g in self.GATES:
            self._register(f"b_{g}", _uniform(rng, (H,), H, self.dtype))

    def forward(self, seq, lengths=None):
        seq = np.asarray(seq, dtype=self.dtype)
        if seq.ndim != 2 or seq.shape[1] != self.input_dim or seq.shape[0] < 1:
            raise InvalidArgumentError(f"expected sequence [T>=1, {self.input_dim}], got {seq.shape}")
        p = self.params
        H = self.hidden_dim
        xs = seq[::-1] if self.reverse else seq
        T = xs.shape[0]
        Wx = np.concatenate([p["W_z"], p["W_r"], p["W_h"]])
        bx = np.concatenate([p["b_z"], p["b_r"], p["b_h"]])
        proj = xs @ Wx.T + bx
        Uzr = np.concatenate([p["U_z"], p["U_r"]])
        Uh = p["U_h"]
        hs = np.zeros((T + 1, H), dtype=self.dtype)
        zs = np.empty((T, H), dtype=self.dtype)
        rs = np.empty((T, H), dtype=self.dtype)
        cs = np.empty((T, H), dtype=self.dtype)
        for t in range(T):
            h = hs[t]
            zr = sigmoid(proj[t, : 2 * H] + Uzr @ h)
            z, r = zr[:H], zr[H:]
            c = np.tanh(proj[t, 2 * H:] + Uh @ (r * h))
            hs[t + 1] = h + z * (c - h)
            zs[t], rs[t], cs[t] = z, r, c
        self._cache = (xs, hs, zs, rs, cs)
        out = hs[1:]
        return out[::-1].copy() if self.reverse else out.copy()

    def backward(self, grad_out):
        xs, hs, zs, rs, cs = self._take_cache()
        g = np.asarray(grad_out)
        if self.reverse:
            g = g[::-1]
        p = self.params
        T, H = zs.shape
        Uz, Ur, Uh = p["U_z"], p["U_r"], p["U_h"]
        d_pre = np.empty((T, 3 * H), dtype=self.dtype)
        dUz = np.zeros_like(Uz)
        dUr = np.zeros_like(Ur)
        dUh = np.zeros_like(Uh)
        dh_next = np.zeros(H, dtype=self.dtype)
        for t in range(T - 1, -1, -1):
            h_prev, z, r, c = hs[t], zs[t], rs[t], cs[t]
            dh = g[t] + dh_next
            dc_pre = dh * z * (1.0 - c * c)
            dz_pre = dh * (c - h_prev) * z * (1.0 - z)
            rh = r * h_prev
            d_rh = Uh.T @ dc_pre
            dr_pre = d_rh * h_prev * r * (1.0 - r)
            dh_prev = dh * (1.0 - z) + d_rh * r + Uz.T @ dz_pre + Ur.T @ dr_pre
            dUz += np.outer(dz_pre, h_prev)
            dUr += np.outer(dr_pre, h_prev)
            dUh += np.outer(dc_pre, rh)
            d_pre[t, :H] = dz_pre
            d_pre[t, H:2 * H] = dr_pre
            d_pre[t, 2 * H:] = dc_pre
            dh_next = dh_prev
        for i, gname in enumerate(self.GATES):
            block = d_pre[:, i * H:(i + 1) * H]
            self.grads[f"W_{gname}"] += block.T @ xs
            self.grads[f"b_{gname}"] += block.sum(axis=0)
        self.grads["U_z"] += dUz
        self.grads["U_r"] += dUr
        self.grads["U_h"] += dUh
        Wx = np.concatenate([p["W_z"], p["W_r"], p["W_h"]])
        dx = d_pre @ Wx
        return dx[::-1].copy() if self.reverse else dx


class BiGRU(Module):
    """Forward and backward GRUs; per-step outputs concatenated ``[fwd, bwd]``."""

    def __init__(self, input_dim: int, hidden_dim: int, rng: np.random.Generator | None = None, dtype=np.float64):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.fwd = GRU(input_dim, hidden_dim, reverse=False, rng=rng, dtype=dtype)
        self.bwd = GRU(input_dim, hidden_dim, reverse=True, rng=rng, dtype=dtype)
        self.hidden_dim = hidden_dim

    def children(self):
        yield "fwd", self.fwd
        yield "bwd", self.bwd

    def forward(self, seq, lengths=None):
        return np.concatenate([self.fwd(seq), self.bwd(seq)], axis=1)

    def backward(self, grad_out):
        H = self.hidden_dim
        return self.fwd.backward(grad_out[:, :H]) + self.bwd.backward(grad_out[:, H:])


def gru_bidir_forward(layer: BiGRU, seq: np.ndarray) -> np.ndarray:
    return layer.forward(seq)


class Sequential(Module):
    def __init__(self, *layers: tuple[str, Module]):
        self.layers = list(layers)

    def children(self):
        return iter(self.layers)

    def forward(self, x, lengths=None):
        for _, layer in self.layers:
            x = layer.forward(x, lengths) if lengths is not None else layer.forward(x)
        return x

    def backward(self, grad_out):
        for _, layer in reversed(self.layers):
            grad_out = layer.backward(grad_out)
        return grad_out


def backward(network: Module, grad_out: np.ndarray) -> list[np.ndarray]:
    """Run reverse mode from ``grad_out`` and return fresh parameter gradients."""
    network.zero_grad()
    network.backward(grad_out)
    return [g.copy() for g in network.gradients()]


# --- optimiser ---------------------------------------------------------------

@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], state: AdamState) -> AdamState:
    """In-place Adam update with bias correction."""
    if len(params) != len(grads):
        raise InvalidArgumentError("params and grads differ in length")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    if len(state.m) != len(params):
        raise InvalidArgumentError("optimizer state does not match the parameter list")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape or m.shape != p.shape:
            raise InvalidArgumentError(f"shape mismatch {p.shape} vs {g.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return state


# --- verification ------------------------------------------------------------

def _activation_pattern(network: Module) -> list[np.ndarray]:
    """Sign masks cached by the rectifiers during the last forward pass."""
    return [m._cache.copy() for m in network._modules()
            if isinstance(m, (LeakyReLU, ReLU)) and m._cache is not None]


def grad_check(network: Module, x, eps: float = 1e-5, rng: np.random.Generator | None = None,
               max_coords: int | None = None, forward_kwargs: dict | None = None,
               stats: dict | None = None, wrt_input: bool = False, roundoff_floor: bool = True) -> float:
    """Max relative error between backprop and central differences.

    The scalar probed is ``sum(R * network(x))`` for a fixed random ``R``.
    ``max_coords`` caps the coordinates checked per parameter tensor
    (chosen at random); ``None`` checks every coordinate. A coordinate
    whose +/-eps probe flips the sign of any rectifier input straddles a
    kink, where central differences do not estimate the derivative; such
    coordinates are skipped and counted in ``stats["skipped"]``.
    With ``wrt_input`` the input gradient is checked as well.

    Central differences cannot resolve a derivative below the rounding
    noise of the probe, about ``eps_mach * sum|R * y| / eps``. With
    ``roundoff_floor`` that amount is subtracted from each discrepancy
    before dividing, so near-zero gradients are not reported as errors;
    ``stats["raw"]`` keeps the unfloored maximum.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    kw = forward_kwargs or {}
    out = network.forward(x, **kw)
    R = rng.standard_normal(np.shape(out))
    floor = np.finfo(np.float64).eps * float(np.sum(np.abs(R * out))) / eps if roundoff_floor else 0.0
    network.zero_grad()
    network.forward(x, **kw)
    base_pattern = _activation_pattern(network)
    dx = network.backward(R)

    def probe() -> tuple[float, bool]:
        val = float(np.sum(R * network.forward(x, **kw)))
        same = all(np.array_equal(a, b) for a, b in zip(base_pattern, _activation_pattern(network)))
        return val, same

    targets = [(p, g) for _, p, g in network.named_parameters()]
    if wrt_input:
        x = np.array(x, dtype=np.float64)
        targets.append((x, np.asarray(dx)))
    worst, raw, checked, skipped = 0.0, 0.0, 0, 0
    for p, g in targets:
        flat_p = p.reshape(-1)
        flat_g = g.reshape(-1).copy()
        coords = np.arange(flat_p.size)
        if max_coords is not None and flat_p.size > max_coords:
            coords = np.sort(rng.choice(flat_p.size, size=max_coords, replace=False))
        for i in coords:
            orig = flat_p[i]
            flat_p[i] = orig + eps
            lp, same_p = probe()
            flat_p[i] = orig - eps
            lm, same_m = probe()
            flat_p[i] = orig
            if not (same_p and same_m):
                skipped += 1
                continue
            cd = (lp - lm) / (2 * eps)
            a = flat_g[i]
            scale = max(abs(a), abs(cd), 1e-300)
            raw = max(raw, abs(a - cd) / max(scale, 1e-12))
            worst = max(worst, max(abs(a - cd) - floor, 0.0) / scale)
            checked += 1
    if stats is not None:
        stats.update(checked=checked, skipped=skipped, raw=raw, floor=floor)
    return worst


# --- checkpoints -------------------------------------------------------------
#
# <stem>.bin : all parameters, canonical order, little-endian float64
# <stem>.json: manifest {"layers": [{"name", "shape"}, ...], ...extras}

def save_checkpoint(stem, network: Module, extra: dict | None = None) -> tuple[Path, Path]:
    stem = Path(stem)
    named = network.named_parameters()
    flat = np.concatenate([p.astype("<f8").reshape(-1) for _, p, _ in named]) if named else np.zeros(0)
    manifest = {"layers": [{"name": n, "shape": list(p.shape)} for n, p, _ in named],
                "dtype": "float64le", "n_params": int(flat.size)}
    if extra:
        manifest.update(extra)
    bin_path, json_path = stem.with_suffix(".bin"), stem.with_suffix(".json")
    try:
        stem.parent.mkdir(parents=True, exist_ok=True)
        bin_path.write_bytes(flat.tobytes())
        json_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    except OSError as e:
        raise SignalFileError(f"cannot write checkpoint {stem}: {e}") from e
    return bin_path, json_path


def read_manifest(stem) -> dict:
    path = Path(stem).with_suffix(".json")
    try:
        return json.loads(path.read_text())
    except (OSError, ValueError) as e:
        raise SignalFileError(f"cannot read checkpoint manifest {path}: {e}") from e


def load_checkpoint(stem, network: Module) -> Module:
    stem = Path(stem)
    manifest = read_manifest(stem)
    try:
        flat = np.frombuffer(stem.with_suffix(".bin").read_bytes(), dtype="<f8")
    except OSError as e:
        raise SignalFileError(f"cannot read checkpoint {stem}: {e}") from e
    named = network.named_parameters()
    expected = [{"name": n, "shape": list(p.shape)} for n, p, _ in named]
    if manifest["layers"] != expected:
        raise InvalidArgumentError(f"checkpoint {stem} does not match the network layout")
    if flat.size != sum(p.size for _, p, _ in named):
        raise SignalFileError(f"checkpoint {stem} is truncated")
    pos = 0
    for _, p, _ in named:
        p[...] = flat[pos:pos + p.size].reshape(p.shape)
        pos += p.size
    return network
