"""
CNN + bidirectional LSTM equalizer with explicit forward and backward passes.

Input windows have shape ``[batch, n_taps, 4]`` with features
(own-pol I, own-pol Q, other-pol I, other-pol Q). The network predicts the
I/Q pair of the central symbol of the own polarization.

Parameter layout (also the checkpoint order)::

    conv_w   [n_filters, in_features, kernel_size]
    conv_b   [n_filters]
    lstm_f_wx, lstm_f_wh, lstm_f_b   forward direction, gates stacked i|f|g|o
    lstm_b_wx, lstm_b_wh, lstm_b_b   backward direction
    dense_w  [out_features, readout_dim]
    dense_b  [out_features]
"""
from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

LAYERS = ("conv", "lstm", "dense")


@dataclass(frozen=True)
class EqualizerHyper:
    n_taps: int = 25
    n_filters: int = 224
    kernel_size: int = 10
    hidden_units: int = 226
    in_features: int = 4
    out_features: int = 2
    leaky_slope: float = 0.2
    readout: str = "last"   # or "sequence": every time step of both directions feeds the dense layer

    def __post_init__(self):
        if self.n_taps % 2 == 0:
            raise ValueError("n_taps must be odd")
        if self.kernel_size > self.n_taps:
            raise ValueError("kernel_size cannot exceed n_taps")
        if min(self.n_taps, self.n_filters, self.kernel_size, self.hidden_units,
               self.in_features, self.out_features) < 1:
            raise ValueError("all dimensions must be >= 1")
        if self.readout not in ("last", "sequence"):
            raise ValueError(f"unknown readout {self.readout!r}")

    @property
    def seq_len(self) -> int:
        return self.n_taps - self.kernel_size + 1

    @property
    def readout_dim(self) -> int:
        per_step = 2 * self.hidden_units
        return per_step if self.readout == "last" else per_step * self.seq_len

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


PAPER_PROFILE = EqualizerHyper()
DESK_PROFILE = EqualizerHyper(n_filters=32, hidden_units=48)
PROFILES = {"paper": PAPER_PROFILE, "desk": DESK_PROFILE}


def param_shapes(hyper: EqualizerHyper) -> dict[str, tuple[int, ...]]:
    f, c, k, hid = hyper.n_filters, hyper.in_features, hyper.kernel_size, hyper.hidden_units
    shapes = {"conv_w": (f, c, k), "conv_b": (f,)}
    for d in "fb":
        shapes[f"lstm_{d}_wx"] = (4 * hid, f)
        shapes[f"lstm_{d}_wh"] = (4 * hid, hid)
        shapes[f"lstm_{d}_b"] = (4 * hid,)
    shapes["dense_w"] = (hyper.out_features, hyper.readout_dim)
    shapes["dense_b"] = (hyper.out_features,)
    return shapes


def layer_of(name: str) -> str:
    return name.split("_", 1)[0]


@dataclass
class EqualizerModel:
    hyper: EqualizerHyper
    params: dict[str, np.ndarray]
    trainable: dict[str, bool] = field(default_factory=lambda: dict.fromkeys(LAYERS, True))

    def __post_init__(self):
        shapes = param_shapes(self.hyper)
        if list(self.params) != list(shapes):
            raise ValueError(f"parameter names {list(self.params)} do not match {list(shapes)}")
        for name, shape in shapes.items():
            if self.params[name].shape != shape:
                raise ValueError(f"{name}: shape {self.params[name].shape}, expected {shape}")

    def copy(self) -> "EqualizerModel":
        return EqualizerModel(self.hyper, {k: v.copy() for k, v in self.params.items()},
                              dict(self.trainable))

    def astype(self, dtype) -> "EqualizerModel":
        """Copy with every parameter cast to ``dtype``."""
        return EqualizerModel(self.hyper, {k: v.astype(dtype) for k, v in self.params.items()},
                              dict(self.trainable))

    def cast_(self, dtype) -> None:
        """Cast parameters in place (no-op when already ``dtype``)."""
        for k, v in self.params.items():
            if v.dtype != dtype:
                self.params[k] = v.astype(dtype)

    @property
    def dtype(self):
        return self.params["dense_w"].dtype

    def freeze(self, *layers: str) -> None:
        for layer in layers:
            self.trainable[layer] = False

    def unfreeze(self, *layers: str) -> None:
        for layer in layers or LAYERS:
            self.trainable[layer] = True

    def is_trainable(self, name: str) -> bool:
        return self.trainable[layer_of(name)]

    def weight_bytes(self) -> bytes:
        return b"".join(np.ascontiguousarray(v, dtype="<f8").tobytes() for v in self.params.values())

    def digest(self) -> str:
        return hashlib.sha256(self.weight_bytes()).hexdigest()

    @property
    def n_params(self) -> int:
        return sum(v.size for v in self.params.values())


def _glorot(rng, shape, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_model(hyper: EqualizerHyper, seed: int) -> EqualizerModel:
    """Glorot-uniform weights, zero biases, forget-gate bias 1."""
    rng = np.random.default_rng(seed)
    shapes = param_shapes(hyper)
    hid, k = hyper.hidden_units, hyper.kernel_size
    p = {}
    p["conv_w"] = _glorot(rng, shapes["conv_w"], hyper.in_features * k, hyper.n_filters * k)
    p["conv_b"] = np.zeros(shapes["conv_b"])
    for d in "fb":
        p[f"lstm_{d}_wx"] = _glorot(rng, shapes[f"lstm_{d}_wx"], hyper.n_filters, 4 * hid)
        p[f"lstm_{d}_wh"] = _glorot(rng, shapes[f"lstm_{d}_wh"], hid, 4 * hid)
        b = np.zeros(4 * hid)
        b[hid:2 * hid] = 1.0
        p[f"lstm_{d}_b"] = b
    p["dense_w"] = _glorot(rng, shapes["dense_w"], hyper.readout_dim, hyper.out_features)
    p["dense_b"] = np.zeros(shapes["dense_b"])
    return EqualizerModel(hyper, p)


def zeros_like_model(model: EqualizerModel) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in model.params.items()}


def _gate_constants(hid, dtype):
    """Per-column constants for activating stacked i|f|g|o pre-activations
    with one tanh: sigmoid(x) = 0.5 + 0.5 tanh(x / 2)."""
    scale = np.full(4 * hid, 0.5, dtype=dtype)
    scale[2 * hid:3 * hid] = 1.0
    offset = np.full(4 * hid, 0.5, dtype=dtype)
    offset[2 * hid:3 * hid] = 0.0
    # derivative w.r.t. pre-activation = d0 + a * (d1 - a) for activation a
    d0 = np.zeros(4 * hid, dtype=dtype)
    d0[2 * hid:3 * hid] = 1.0
    d1 = np.ones(4 * hid, dtype=dtype)
    d1[2 * hid:3 * hid] = 0.0
    return scale, offset, d0, d1


def _lstm_forward(xproj, wh, hid, keep_cache=True):
    """Run one direction over ``xproj`` [steps, batch, 4H], already in
    processing order. Returns hidden states [steps, batch, H] and the BPTT
    cache (``None`` when ``keep_cache`` is false)."""
    steps, batch, _ = xproj.shape
    dtype = xproj.dtype
    scale, offset, _, _ = _gate_constants(hid, dtype)
    h = np.zeros((batch, hid), dtype=dtype)
    c = np.zeros((batch, hid), dtype=dtype)
    hs = np.empty((steps, batch, hid), dtype=dtype)
    if keep_cache:
        cs = np.empty((steps + 1, batch, hid), dtype=dtype)
        gates = np.empty((steps, batch, 4 * hid), dtype=dtype)
        tanh_cs = np.empty((steps, batch, hid), dtype=dtype)
        cs[0] = c
    act = np.empty((batch, 4 * hid), dtype=dtype)
    for s in range(steps):
        if keep_cache:
            act = gates[s]
        np.matmul(h, wh.T, out=act)
        act += xproj[s]
        act *= scale
        np.tanh(act, out=act)
        act *= scale
        act += offset
        c = act[:, hid:2 * hid] * c
        c += act[:, :hid] * act[:, 2 * hid:3 * hid]
        tanh_c = np.tanh(c)
        h = hs[s]
        np.multiply(act[:, 3 * hid:], tanh_c, out=h)
        if keep_cache:
            cs[s + 1] = c
            tanh_cs[s] = tanh_c
    return hs, ((gates, cs, tanh_cs, hs) if keep_cache else None)


def _lstm_backward(dh_ext, cache, wh, hid):
    """BPTT for one direction. ``dh_ext`` [steps, batch, H] is the gradient
    arriving from the readout at each processing step. Returns the gradient
    w.r.t. the gate pre-activations per step and w.r.t. ``wh``."""
    gates, cs, tanh_cs, hs = cache
    steps, batch, _ = dh_ext.shape
    dtype = dh_ext.dtype
    _, _, d0, d1 = _gate_constants(hid, dtype)
    dgates = np.empty((steps, batch, 4 * hid), dtype=dtype)
    dwh = np.zeros_like(wh)
    dh_next = np.zeros((batch, hid), dtype=dtype)
    dc_next = np.zeros((batch, hid), dtype=dtype)
    for s in range(steps - 1, -1, -1):
        act = gates[s]
        i, f, gg, o = act[:, :hid], act[:, hid:2 * hid], act[:, 2 * hid:3 * hid], act[:, 3 * hid:]
        tanh_c = tanh_cs[s]
        dh = dh_ext[s] + dh_next
        dc = dh * o
        dc *= 1.0 - tanh_c * tanh_c
        dc += dc_next
        dg = dgates[s]
        np.multiply(dc, gg, out=dg[:, :hid])
        np.multiply(dc, cs[s], out=dg[:, hid:2 * hid])
        np.multiply(dc, i, out=dg[:, 2 * hid:3 * hid])
        np.multiply(dh, tanh_c, out=dg[:, 3 * hid:])
        dg *= d0 + act * (d1 - act)
        dc_next = dc * f
        if s > 0:
            dwh += dg.T @ hs[s - 1]
            dh_next = dg @ wh
    return dgates, dwh


def _forward(model: EqualizerModel, x: np.ndarray, keep_cache: bool = True):
    hp = model.hyper
    p = model.params
    dtype = p["dense_w"].dtype
    x = np.asarray(x)
    if x.ndim != 3 or x.shape[1:] != (hp.n_taps, hp.in_features):
        raise ValueError(f"input shape {x.shape}, expected [batch, {hp.n_taps}, {hp.in_features}]")
    batch, t_out, hid = x.shape[0], hp.seq_len, hp.hidden_units
    # time-major im2col: cols[t, b, c, k] = x[b, t + k, c]
    x_t = np.ascontiguousarray(x.transpose(1, 0, 2), dtype=dtype)
    cols = sliding_window_view(x_t, hp.kernel_size, axis=0).reshape(t_out * batch, -1)
    z = cols @ p["conv_w"].reshape(hp.n_filters, -1).T
    z += p["conv_b"]
    a = np.where(z > 0, z, hp.leaky_slope * z)            # [t * batch, filters]

    proj_f = (a @ p["lstm_f_wx"].T + p["lstm_f_b"]).reshape(t_out, batch, -1)
    proj_b = (a @ p["lstm_b_wx"].T + p["lstm_b_b"]).reshape(t_out, batch, -1)[::-1]
    hs_f, cache_f = _lstm_forward(proj_f, p["lstm_f_wh"], hid, keep_cache)
    hs_b, cache_b = _lstm_forward(proj_b, p["lstm_b_wh"], hid, keep_cache)
    if hp.readout == "last":
        feat = np.concatenate([hs_f[-1], hs_b[-1]], axis=1)
    else:
        # per time position t: [h_fwd(t), h_bwd(t)]
        seq = np.concatenate([hs_f, hs_b[::-1]], axis=2)
        feat = seq.transpose(1, 0, 2).reshape(batch, -1)
    y = feat @ p["dense_w"].T + p["dense_b"]
    cache = (cols, z, a, cache_f, cache_b, feat) if keep_cache else None
    return y, cache


def forward(model: EqualizerModel, x: np.ndarray) -> np.ndarray:
    """Predictions ``[batch, out_features]``."""
    return _forward(model, x, keep_cache=False)[0]


def mse_loss(y: np.ndarray, targets: np.ndarray) -> float:
    return float(np.mean((y - targets) ** 2))


def backward(model: EqualizerModel, x: np.ndarray, targets: np.ndarray,
             skip_frozen: bool = False, loss_scale: float = 1.0):
    """Batch-mean MSE and its exact gradient w.r.t. every parameter.

    With ``skip_frozen`` the gradients of frozen layers are left at zero and
    the work needed only for them is not done.
    """
    hp = model.hyper
    p = model.params
    y, (cols, z, a, cache_f, cache_b, feat) = _forward(model, x)
    targets = np.asarray(targets, dtype=y.dtype)
    if targets.shape != y.shape:
        raise ValueError(f"targets shape {targets.shape}, expected {y.shape}")
    loss = loss_scale * mse_loss(y, targets)
    if not np.isfinite(loss):
        raise FloatingPointError("non-finite loss at dense output")
    grads = zeros_like_model(model)
    need = {layer: model.trainable[layer] or not skip_frozen for layer in LAYERS}

    batch, t_out, hid = x.shape[0], hp.seq_len, hp.hidden_units
    dy = (loss_scale * 2.0 / y.size) * (y - targets)
    if need["dense"]:
        grads["dense_w"] = dy.T @ feat
        grads["dense_b"] = dy.sum(axis=0)
    if not (need["lstm"] or need["conv"]):
        return loss, grads

    dfeat = dy @ p["dense_w"]
    dh_f = np.zeros((t_out, batch, hid), dtype=y.dtype)
    dh_b = np.zeros((t_out, batch, hid), dtype=y.dtype)
    if hp.readout == "last":
        dh_f[-1] = dfeat[:, :hid]
        dh_b[-1] = dfeat[:, hid:]
    else:
        dseq = dfeat.reshape(batch, t_out, 2 * hid).transpose(1, 0, 2)
        dh_f[:] = dseq[:, :, :hid]
        dh_b[:] = dseq[::-1, :, hid:]

    dproj_f, dwh_f = _lstm_backward(dh_f, cache_f, p["lstm_f_wh"], hid)
    dproj_b, dwh_b = _lstm_backward(dh_b, cache_b, p["lstm_b_wh"], hid)
    dproj_f = dproj_f.reshape(t_out * batch, -1)
    dproj_b = np.ascontiguousarray(dproj_b[::-1]).reshape(t_out * batch, -1)
    for name, dproj in (("lstm_f", dproj_f), ("lstm_b", dproj_b)):
        if not np.all(np.isfinite(dproj)):
            raise FloatingPointError(f"non-finite gradient in {name}")
    if need["lstm"]:
        grads["lstm_f_wx"] = dproj_f.T @ a
        grads["lstm_b_wx"] = dproj_b.T @ a
        grads["lstm_f_wh"] = dwh_f
        grads["lstm_b_wh"] = dwh_b
        grads["lstm_f_b"] = dproj_f.sum(axis=0)
        grads["lstm_b_b"] = dproj_b.sum(axis=0)
    if not need["conv"]:
        return loss, grads

    dz = dproj_f @ p["lstm_f_wx"] + dproj_b @ p["lstm_b_wx"]
    dz *= np.where(z > 0, 1.0, hp.leaky_slope).astype(dz.dtype)
    grads["conv_w"] = (dz.T @ cols).reshape(p["conv_w"].shape)
    grads["conv_b"] = dz.sum(axis=0)
    return loss, grads
