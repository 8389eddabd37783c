"""Coordinate network f: R^3 -> R with positional encoding and exact gradients.

Architecture
    An MLP over features ``[x, y, z, encoding(x)]``. The encoding holds, per
    frequency band j < L and per coordinate c, the pair
    ``(w_j sin(2^j pi c), w_j cos(2^j pi c))``, laid out band-major then
    coordinate-major, so the feature vector has length ``3 + 6 L``. Band
    weights ``w_j`` follow a cosine ramp of the scalar progress ``alpha``:
    0 for alpha <= j, 1 for alpha >= j + 1, ``(1 - cos((alpha - j) pi)) / 2``
    in between, so capacity grows smoothly as training advances. The feature
    vector is re-concatenated to the input of layer ``skip_layer``. Hidden
    layers use ``softplus(100 t) / 100``; the output layer is linear.

Gradients
    Everything downstream needs exact derivatives: the value gradient with
    respect to parameters (reverse mode), the input gradient (reverse to the
    inputs through the encoding), and the parameter gradient of the input
    gradient norm (forward-over-reverse), which the Eikonal penalty requires.
    All batched implementations live here; no finite differences anywhere.

Parameter layout (also the checkpoint layout)
    A single flat vector: for each layer i in order, the weight matrix
    ``W_i`` of shape (out_i, in_i) in row-major order, followed by the bias
    ``b_i`` of shape (out_i,). ``in_0 = 3 + 6 L``,
    ``in_skip = hidden + 3 + 6 L``, other ``in_i = hidden``;
    ``out_i = hidden`` except the last layer with ``out = 1``.

Checkpoint file
    ``EBMSURF-CKPT-1\\n`` magic, an 8-byte little-endian header length, a JSON
    header (config fields, pe_progress, dtype, param_count, optional
    normalization transform and extra metadata), then the flat parameter
    vector as raw little-endian bytes.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, asdict

import numpy as np

from ._accel import USE_NUMBA, njit, prange

ACT_SHARPNESS = 100.0
_ACT_CLAMP = 25.0  # exp(-25) ~ 1.4e-11: below fp32 resolution of 1 +/- e

_CKPT_MAGIC = b"EBMSURF-CKPT-1\n"


@dataclass
class NetworkConfig:
    hidden_dim: int = 512
    num_layers: int = 8
    skip_layer: int | None = 5
    pe_dims: int = 6
    sphere_radius: float = 0.5
    dtype: str = "float32"

    def __post_init__(self):
        if self.hidden_dim < 1 or self.num_layers < 1 or self.pe_dims < 0:
            raise ValueError("hidden_dim/num_layers must be >= 1, pe_dims >= 0")
        if self.skip_layer is not None and not (1 <= self.skip_layer < self.num_layers):
            raise ValueError("skip_layer must satisfy 1 <= skip_layer < num_layers (or be None)")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be 'float32' or 'float64'")

    @property
    def feature_dim(self) -> int:
        return 3 + 6 * self.pe_dims

    def layer_dims(self) -> list[tuple[int, int]]:
        """Per-layer (in_dim, out_dim)."""
        dims = []
        for i in range(self.num_layers):
            if i == 0:
                d_in = self.feature_dim
            elif self.skip_layer is not None and i == self.skip_layer:
                d_in = self.hidden_dim + self.feature_dim
            else:
                d_in = self.hidden_dim
            d_out = 1 if i == self.num_layers - 1 else self.hidden_dim
            dims.append((d_in, d_out))
        return dims


@dataclass
class NetworkGradients:
    """Exact derivatives of the network at one point."""

    d_value_d_params: np.ndarray
    d_value_d_input: np.ndarray
    d_gradnorm_d_params: np.ndarray


def pe_band_weights(L: int, alpha: float) -> np.ndarray:
    """Cosine ramp per band: 0 below alpha, 1 above, smooth in between."""
    j = np.arange(L, dtype=np.float64)
    t = np.clip(alpha - j, 0.0, 1.0)
    return 0.5 * (1.0 - np.cos(np.pi * t))


def positional_encode(points, L: int, pe_progress: float) -> np.ndarray:
    """Sinusoidal features of shape (..., 6 L); see the module docstring."""
    pts = np.asarray(points, dtype=np.float64)
    single = pts.ndim == 1
    if single:
        pts = pts[None, :]
    if L == 0:
        out = np.zeros((len(pts), 0))
        return out[0] if single else out
    freqs = (2.0 ** np.arange(L)) * np.pi
    ang = pts[:, None, :] * freqs[None, :, None]  # (B, L, 3)
    w = pe_band_weights(L, pe_progress)
    enc = np.empty((len(pts), L, 3, 2))
    enc[..., 0] = np.sin(ang) * w[None, :, None]
    enc[..., 1] = np.cos(ang) * w[None, :, None]
    out = enc.reshape(len(pts), 6 * L)
    return out[0] if single else out


def _act(z: np.ndarray, out_phi: np.ndarray | None = None, out_sig: np.ndarray | None = None,
         scratch: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Fused softplus(100 z)/100 and its derivative sigmoid(100 z).

    Arithmetic-only (no boolean fancy indexing): one exp and one log1p per
    element; sigma(t) = 0.5 + copysign(sigma(|t|) - 0.5, t). |100 z| is
    clamped at 25 before exp, keeping results inside the normal float range
    (the tail difference is ~1e-11, below fp32 resolution) and off the
    subnormal slow path. Buffers may be supplied to avoid allocation in hot
    loops. numpy's SIMD exp beats compiled scalar loops here, so this is the
    one hot path that stays pure numpy.
    """
    one = z.dtype.type(1.0)
    half = z.dtype.type(0.5)
    sharp = z.dtype.type(ACT_SHARPNESS)
    t = np.multiply(z, sharp, out=scratch)
    a = np.abs(t) if out_sig is None else np.abs(t, out=out_sig)
    np.minimum(a, z.dtype.type(_ACT_CLAMP), out=a)
    np.negative(a, out=a)
    np.exp(a, out=a)  # exp(-min(|t|, clamp))
    phi = np.log1p(a) if out_phi is None else np.log1p(a, out=out_phi)
    phi /= sharp
    phi += np.maximum(z, z.dtype.type(0.0), out=t)
    a += one
    np.reciprocal(a, out=a)  # sigma(|t|)
    a -= half
    np.copysign(a, z, out=a)  # sign(z) == sign(100 z)
    a += half
    return phi, a


class _ForwardCache:
    __slots__ = ("X", "feat", "S", "C", "f", "sigs", "a_ins")

    def __init__(self, X, feat, S, C, f, sigs, a_ins):
        self.X = X
        self.feat = feat
        self.S = S
        self.C = C
        self.f = f
        self.sigs = sigs
        self.a_ins = a_ins


class CoordinateNetwork:
    """MLP over encoded coordinates with a flat parameter vector.

    Evaluation is read-only on ``params`` and safe to run concurrently
    (scratch buffers for the hot paths live in thread-local storage);
    training owns the single mutable instance.
    """

    def __init__(self, config: NetworkConfig, params: np.ndarray | None = None, pe_progress: float = 0.0):
        self.config = config
        self.dtype = np.dtype(config.dtype)
        dims = config.layer_dims()
        self._offsets = []
        off = 0
        for d_in, d_out in dims:
            self._offsets.append((off, d_in, d_out))
            off += d_out * d_in + d_out
        self.n_params = off
        if params is None:
            params = np.zeros(off, dtype=self.dtype)
        params = np.asarray(params, dtype=self.dtype)
        if params.shape != (off,):
            raise ValueError(f"expected {off} parameters, got shape {params.shape}")
        self.params = params
        self._rebuild_views()
        self.pe_progress = float(np.clip(pe_progress, 0.0, config.pe_dims))
        self._tls = threading.local()

    def _buf(self, name: str, shape: tuple[int, ...]) -> np.ndarray:
        """Reusable thread-local scratch; keeps hot loops allocation-free."""
        store = getattr(self._tls, "bufs", None)
        if store is None:
            store = self._tls.bufs = {}
        key = (name, shape)
        arr = store.get(key)
        if arr is None:
            arr = store[key] = np.empty(shape, dtype=self.dtype)
        return arr

    def _rebuild_views(self):
        self._views = []
        for off, d_in, d_out in self._offsets:
            W = self.params[off : off + d_out * d_in].reshape(d_out, d_in)
            b = self.params[off + d_out * d_in : off + d_out * d_in + d_out]
            self._views.append((W, b))

    def weights(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        return self._views[i]

    def copy(self) -> "CoordinateNetwork":
        return CoordinateNetwork(self.config, self.params.copy(), self.pe_progress)

    def set_pe_progress(self, alpha: float) -> None:
        self.pe_progress = float(np.clip(alpha, 0.0, self.config.pe_dims))

    # ----- feature pipeline -------------------------------------------------

    def _pe_state(self):
        L = self.config.pe_dims
        w = pe_band_weights(L, self.pe_progress).astype(self.dtype)
        freqs = ((2.0 ** np.arange(L)) * np.pi).astype(self.dtype)
        return w, freqs

    def _features(self, X: np.ndarray):
        """Feature matrix plus raw trig caches (used again by gradients)."""
        B = len(X)
        L = self.config.pe_dims
        feat = np.empty((B, self.config.feature_dim), dtype=self.dtype)
        feat[:, :3] = X
        if L == 0:
            return feat, None, None
        w, freqs = self._pe_state()
        ang = X[:, None, :] * freqs[:, None]
        S = np.sin(ang)
        C = np.cos(ang)
        enc = np.empty((B, L, 3, 2), dtype=self.dtype)
        np.multiply(S, w[:, None], out=enc[..., 0])
        np.multiply(C, w[:, None], out=enc[..., 1])
        feat[:, 3:] = enc.reshape(B, 6 * L)
        return feat, S, C

    def _pe_pullback(self, gfeat: np.ndarray, S, C) -> np.ndarray:
        """Map a feature cotangent to an input-coordinate cotangent."""
        g = gfeat[:, :3].astype(self.dtype, copy=True)
        L = self.config.pe_dims
        if L:
            w, freqs = self._pe_state()
            wf = (w * freqs)[:, None]
            gpe = gfeat[:, 3:].reshape(len(gfeat), L, 3, 2)
            g += (wf * (C * gpe[..., 0] - S * gpe[..., 1])).sum(axis=1)
        return g

    def _pe_pushforward(self, U: np.ndarray, S, C) -> np.ndarray:
        """Feature-space tangent of the input tangent U."""
        B = len(U)
        L = self.config.pe_dims
        fdot = np.empty((B, self.config.feature_dim), dtype=self.dtype)
        fdot[:, :3] = U
        if L:
            w, freqs = self._pe_state()
            wf = (w * freqs)[:, None]
            dot = np.empty((B, L, 3, 2), dtype=self.dtype)
            np.multiply(C, U[:, None, :], out=dot[..., 0])
            dot[..., 0] *= wf
            np.multiply(S, U[:, None, :], out=dot[..., 1])
            dot[..., 1] *= -wf
            fdot[:, 3:] = dot.reshape(B, 6 * L)
        return fdot

    # ----- evaluation and derivatives --------------------------------------

    def _forward_cache(self, X: np.ndarray) -> _ForwardCache:
        X = np.ascontiguousarray(X, dtype=self.dtype)
        feat, S, C = self._features(X)
        n = self.config.num_layers
        skip = self.config.skip_layer
        sigs, a_ins = [], []
        a = feat
        f = None
        for i in range(n):
            W, b = self._views[i]
            a_ins.append(a)
            z = a @ W.T
            z += b
            if i == n - 1:
                f = z[:, 0]
            else:
                phi, sig = _act(z)
                sigs.append(sig)
                a = np.concatenate([phi, feat], axis=1) if (skip is not None and i + 1 == skip) else phi
        return _ForwardCache(X, feat, S, C, f, sigs, a_ins)

    def forward(self, x) -> np.ndarray | float:
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim == 1:
            return float(self._forward_cache(x[None, :]).f[0])
        return self._forward_cache(x).f

    __call__ = forward

    def _input_grad(self, cache: _ForwardCache) -> np.ndarray:
        n = self.config.num_layers
        H = self.config.hidden_dim
        skip = self.config.skip_layer
        B = len(cache.X)
        delta = np.ones((B, 1), dtype=self.dtype)
        gfeat_skip = None
        for i in range(n - 1, 0, -1):
            gamma = delta @ self._views[i][0]
            if skip is not None and i == skip:
                gfeat_skip = gamma[:, H:]
                gamma = np.ascontiguousarray(gamma[:, :H])
            np.multiply(gamma, cache.sigs[i - 1], out=gamma)
            delta = gamma
        gfeat = delta @ self._views[0][0]
        if gfeat_skip is not None:
            gfeat = gfeat + gfeat_skip
        return self._pe_pullback(gfeat, cache.S, cache.C)

    def value_and_input_grad(self, X) -> tuple[np.ndarray, np.ndarray]:
        """f and its exact input gradient for a batch of points."""
        cache = self._forward_cache(np.asarray(X, dtype=self.dtype))
        return cache.f, self._input_grad(cache)

    def _param_vjp(self, cache: _ForwardCache, cot: np.ndarray) -> np.ndarray:
        """d/d_params of sum_i cot_i f(x_i)."""
        n = self.config.num_layers
        H = self.config.hidden_dim
        skip = self.config.skip_layer
        grad = np.zeros(self.n_params, dtype=self.dtype)
        delta = np.ascontiguousarray(cot, dtype=self.dtype)[:, None]
        for i in range(n - 1, -1, -1):
            off, d_in, d_out = self._offsets[i]
            gW = grad[off : off + d_out * d_in].reshape(d_out, d_in)
            gW += delta.T @ cache.a_ins[i]
            grad[off + d_out * d_in : off + d_out * d_in + d_out] += delta.sum(axis=0)
            if i > 0:
                gamma = delta @ self._views[i][0]
                if skip is not None and i == skip:
                    gamma = np.ascontiguousarray(gamma[:, :H])
                np.multiply(gamma, cache.sigs[i - 1], out=gamma)
                delta = gamma
        return grad

    def _mixed_vjp(self, cache: _ForwardCache, U: np.ndarray, cot_f: np.ndarray, cot_g: np.ndarray) -> np.ndarray:
        """d/d_params of sum_i [cot_f_i f(x_i) + cot_g_i (U_i . grad_x f(x_i))].

        Forward-over-reverse: a forward tangent pass seeded with U, then one
        reverse pass over the joint primal/tangent graph. U is held constant.
        """
        n = self.config.num_layers
        H = self.config.hidden_dim
        skip = self.config.skip_layer
        sharp = self.dtype.type(ACT_SHARPNESS)

        fdot = self._pe_pushforward(np.ascontiguousarray(U, dtype=self.dtype), cache.S, cache.C)
        adot = fdot
        adot_ins, zdots = [], []
        for i in range(n):
            W, _ = self._views[i]
            adot_ins.append(adot)
            zdot = adot @ W.T
            zdots.append(zdot)
            if i < n - 1:
                adot = cache.sigs[i] * zdot
                if skip is not None and i + 1 == skip:
                    adot = np.concatenate([adot, fdot], axis=1)

        grad = np.zeros(self.n_params, dtype=self.dtype)
        dZ = np.ascontiguousarray(cot_f, dtype=self.dtype)[:, None]
        dZd = np.ascontiguousarray(cot_g, dtype=self.dtype)[:, None]
        for i in range(n - 1, -1, -1):
            off, d_in, d_out = self._offsets[i]
            gW = grad[off : off + d_out * d_in].reshape(d_out, d_in)
            gW += dZ.T @ cache.a_ins[i]
            gW += dZd.T @ adot_ins[i]
            grad[off + d_out * d_in : off + d_out * d_in + d_out] += dZ.sum(axis=0)
            if i > 0:
                W = self._views[i][0]
                gamma = dZ @ W
                gammad = dZd @ W
                if skip is not None and i == skip:
                    gamma = gamma[:, :H]
                    gammad = gammad[:, :H]
                sig = cache.sigs[i - 1]
                curv = sharp * sig * (1.0 - sig)
                dZ = gamma * sig + gammad * curv * zdots[i - 1]
                dZd = gammad * sig
        return grad

    def backward(self, x) -> NetworkGradients:
        """All exact derivatives at a single point (see NetworkGradients)."""
        x = np.asarray(x, dtype=self.dtype)
        cache = self._forward_cache(x[None, :])
        g = self._input_grad(cache)[0]
        d_value = self._param_vjp(cache, np.ones(1, dtype=self.dtype))
        norm = float(np.linalg.norm(g))
        if norm == 0.0:
            d_gradnorm = np.zeros(self.n_params, dtype=self.dtype)
        else:
            u = (g / norm)[None, :]
            d_gradnorm = self._mixed_vjp(
                cache, u, np.zeros(1, dtype=self.dtype), np.ones(1, dtype=self.dtype)
            )
        return NetworkGradients(d_value, g, d_gradnorm)


def geometric_init(config: NetworkConfig, seed) -> CoordinateNetwork:
    """Initialize so the network approximates the SDF of a sphere.

    Hidden weights are drawn N(0, 2/hidden_dim) on the plain-coordinate
    blocks; every block consuming encoding features or the skip
    concatenation starts at zero (those features would break the
    norm-proportionality the construction relies on). The output layer is a
    constant row calibrated against the drawn hidden stack: the summed last
    hidden activation is probed on random directions across radii and fitted
    linearly in the radius, then scaled and shifted so
    f(x) ~ ||x|| - sphere_radius. Calibrating (rather than fixing the
    textbook sqrt(pi/hidden) constant) absorbs the per-draw norm drift and
    the smooth-activation floor, which otherwise move the zero set by tens of
    percent. Encoding progress starts at zero. Deterministic per
    (config, seed).
    """
    if config.num_layers < 2:
        raise ValueError("geometric_init needs at least 2 layers")
    rng = np.random.default_rng(seed)
    work_cfg = NetworkConfig(**{**asdict(config), "dtype": "float64"})
    net = CoordinateNetwork(work_cfg)
    H = config.hidden_dim
    n = config.num_layers
    params = net.params
    for i in range(n - 1):
        off, d_in, d_out = net._offsets[i]
        W = params[off : off + d_out * d_in].reshape(d_out, d_in)
        active = 3 if i == 0 else H
        W[:, :active] = rng.normal(0.0, np.sqrt(2.0 / H), size=(d_out, active))

    # probe with a unit output row, then solve f = c*s + b ~ ||x|| - r
    off, d_in, d_out = net._offsets[n - 1]
    W_last = params[off : off + d_out * d_in].reshape(d_out, d_in)
    W_last[:, :H] = 1.0
    dirs = rng.normal(size=(512, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    radii = rng.uniform(0.0, 0.95, size=512)
    probe_pts = dirs * radii[:, None]
    s = net.forward(probe_pts)
    slope, intercept = np.polyfit(radii, s, 1)
    W_last[:, :H] = 1.0 / slope
    params[off + d_out * d_in] = -config.sphere_radius - intercept / slope
    return CoordinateNetwork(config, params.astype(np.dtype(config.dtype)), pe_progress=0.0)


# ----- checkpoints ----------------------------------------------------------


def save_checkpoint(net: CoordinateNetwork, path, transform=None, extra: dict | None = None) -> None:
    """Write the self-describing container documented in the module docstring."""
    header = {
        "config": asdict(net.config),
        "pe_progress": net.pe_progress,
        "dtype": net.config.dtype,
        "param_count": int(net.n_params),
        "transform": transform.to_dict() if transform is not None else None,
        "extra": extra or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        le = "<f4" if net.config.dtype == "float32" else "<f8"
        fh.write(np.ascontiguousarray(net.params, dtype=le).tobytes())


def load_checkpoint(path):
    """Read a checkpoint; returns (network, transform or None, extra dict)."""
    from .geometry import NormalizationTransform

    with open(path, "rb") as fh:
        magic = fh.read(len(_CKPT_MAGIC))
        if magic != _CKPT_MAGIC:
            raise ValueError(f"{path}: not an ebmsurf checkpoint")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        config = NetworkConfig(**header["config"])
        le = "<f4" if header["dtype"] == "float32" else "<f8"
        raw = fh.read()
    params = np.frombuffer(raw, dtype=le, count=header["param_count"]).astype(config.dtype)
    net = CoordinateNetwork(config, params, header["pe_progress"])
    tf = None
    if header.get("transform"):
        tf = NormalizationTransform.from_dict(header["transform"])
    return net, tf, header.get("extra", {})
