"""Recurrent cells in plain numpy: forward passes and exact backward passes.

Four cell kinds share one parameter container and one batched sequence
interface: inputs are (T, B, M) arrays, hidden states (B, N). The
independently-recurrent cell couples each hidden unit only to itself
through an elementwise recurrent vector; the simple cell uses a full
recurrent matrix; the gated cells follow their standard gate algebra with
a sigmoid-gated forget/input/output (and tanh candidates).

``literal_forms`` switches two alternate formulations: the independently
recurrent cell adds its bias outside the activation instead of inside,
and the gated-update candidate uses a sigmoid instead of tanh.

Recurrent dropout is a per-sequence multiplicative mask on the
hidden-to-hidden path (the direct carry path of the gated-update cell is
left undropped); passing ``rec_mask=None`` disables it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import InvalidArgumentError

CELL_KINDS = ("simple", "indrnn", "lstm", "gru")

_LSTM_GATES = ("f", "i", "g", "o")
_GRU_GATES = ("z", "r", "h")


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function."""
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def block_shapes(kind: str, input_dim: int, hidden_dim: int) -> dict[str, tuple[int, ...]]:
    """Parameter block names and shapes, in canonical (initialization) order."""
    m, n = input_dim, hidden_dim
    if kind == "simple":
        return {"W": (n, m), "U": (n, n), "b": (n,)}
    if kind == "indrnn":
        return {"W": (n, m), "u": (n,), "b": (n,)}
    if kind == "lstm":
        shapes: dict[str, tuple[int, ...]] = {}
        for g in _LSTM_GATES:
            shapes[f"W_{g}"] = (n, m)
        for g in _LSTM_GATES:
            shapes[f"U_{g}"] = (n, n)
        for g in _LSTM_GATES:
            shapes[f"b_{g}"] = (n,)
        return shapes
    if kind == "gru":
        shapes = {}
        for g in _GRU_GATES:
            shapes[f"W_{g}"] = (n, m)
        for g in _GRU_GATES:
            shapes[f"U_{g}"] = (n, n)
        for g in _GRU_GATES:
            shapes[f"b_{g}"] = (n,)
        return shapes
    raise InvalidArgumentError(f"unknown cell kind {kind!r}")


@dataclass
class CellParams:
    """One recurrent layer's weights."""

    kind: str
    input_dim: int
    hidden_dim: int
    blocks: dict[str, np.ndarray]
    literal_forms: bool = False

    def __post_init__(self) -> None:
        expected = block_shapes(self.kind, self.input_dim, self.hidden_dim)
        if set(self.blocks) != set(expected):
            raise InvalidArgumentError(
                f"{self.kind} cell expects blocks {sorted(expected)}, got {sorted(self.blocks)}"
            )
        for name, shape in expected.items():
            arr = self.blocks[name]
            if arr.shape != shape:
                raise InvalidArgumentError(f"block {name} has shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise InvalidArgumentError(f"block {name} contains non-finite values")

    @classmethod
    def init(
        cls,
        kind: str,
        input_dim: int,
        hidden_dim: int,
        rng: np.random.Generator,
        literal_forms: bool = False,
    ) -> "CellParams":
        """Uniform(-s, s) matrices with s = sqrt(6 / (fan_in + fan_out));
        the elementwise recurrent vector draws from [0, 1], biases start at 0."""
        blocks: dict[str, np.ndarray] = {}
        for name, shape in block_shapes(kind, input_dim, hidden_dim).items():
            if name == "u":
                blocks[name] = rng.uniform(0.0, 1.0, shape)
            elif len(shape) == 1:
                blocks[name] = np.zeros(shape)
            else:
                fan_out, fan_in = shape
                s = math.sqrt(6.0 / (fan_in + fan_out))
                blocks[name] = rng.uniform(-s, s, shape)
        return cls(kind, input_dim, hidden_dim, blocks, literal_forms)

    def zero_grads(self) -> dict[str, np.ndarray]:
        return {name: np.zeros_like(arr) for name, arr in self.blocks.items()}


def _check_seq(p: CellParams, xs: np.ndarray) -> None:
    if xs.ndim != 3 or xs.shape[2] != p.input_dim:
        raise InvalidArgumentError(
            f"expected inputs (T, B, {p.input_dim}), got {xs.shape}"
        )


def _init_hidden(p: CellParams, xs: np.ndarray, h0: np.ndarray | None) -> np.ndarray:
    b = xs.shape[1]
    if h0 is None:
        return np.zeros((b, p.hidden_dim))
    h0 = np.asarray(h0, dtype=np.float64)
    if h0.shape != (b, p.hidden_dim):
        raise InvalidArgumentError(f"h0 must have shape ({b}, {p.hidden_dim}), got {h0.shape}")
    return h0


# ---------------------------------------------------------------------------
# Forward passes
# ---------------------------------------------------------------------------


def forward(
    p: CellParams,
    xs: np.ndarray,
    h0: np.ndarray | None = None,
    q0: np.ndarray | None = None,
    rec_mask: np.ndarray | None = None,
) -> tuple[np.ndarray, dict]:
    """Run one layer over a (T, B, M) batch of sequences.

    Returns the (T, B, N) hidden sequence and a cache holding everything the
    matching backward pass needs.
    """
    _check_seq(p, xs)
    if p.kind == "simple":
        return _simple_forward(p, xs, h0, rec_mask)
    if p.kind == "indrnn":
        return _indrnn_forward(p, xs, h0, rec_mask)
    if p.kind == "lstm":
        return _lstm_forward(p, xs, h0, q0, rec_mask)
    return _gru_forward(p, xs, h0, rec_mask)


def _simple_forward(p, xs, h0, rec_mask):
    W, U, b = p.blocks["W"], p.blocks["U"], p.blocks["b"]
    t_len, batch, _ = xs.shape
    hs = np.zeros((t_len, batch, p.hidden_dim))
    hds = np.zeros_like(hs)  # dropped previous hidden per step
    h_prev = _init_hidden(p, xs, h0)
    for t in range(t_len):
        hd = h_prev if rec_mask is None else h_prev * rec_mask
        hds[t] = hd
        hs[t] = sigmoid(xs[t] @ W.T + hd @ U.T + b)
        h_prev = hs[t]
    cache = {"xs": xs, "hs": hs, "hds": hds, "rec_mask": rec_mask}
    return hs, cache


def _indrnn_forward(p, xs, h0, rec_mask):
    W, u, b = p.blocks["W"], p.blocks["u"], p.blocks["b"]
    t_len, batch, _ = xs.shape
    hs = np.zeros((t_len, batch, p.hidden_dim))
    ss = np.zeros_like(hs)  # activation outputs (pre-bias in literal mode)
    hds = np.zeros_like(hs)
    h_prev = _init_hidden(p, xs, h0)
    for t in range(t_len):
        hd = h_prev if rec_mask is None else h_prev * rec_mask
        hds[t] = hd
        pre = xs[t] @ W.T + hd * u
        if p.literal_forms:
            s = sigmoid(pre)
            hs[t] = s + b
        else:
            s = sigmoid(pre + b)
            hs[t] = s
        ss[t] = s
        h_prev = hs[t]
    cache = {"xs": xs, "hs": hs, "ss": ss, "hds": hds, "rec_mask": rec_mask}
    return hs, cache


def _lstm_forward(p, xs, h0, q0, rec_mask):
    blk = p.blocks
    t_len, batch, _ = xs.shape
    n = p.hidden_dim
    hs = np.zeros((t_len, batch, n))
    gates = {g: np.zeros((t_len, batch, n)) for g in _LSTM_GATES}
    qs = np.zeros((t_len, batch, n))
    tqs = np.zeros((t_len, batch, n))
    hds = np.zeros((t_len, batch, n))
    q_prevs = np.zeros((t_len, batch, n))

    h_prev = _init_hidden(p, xs, h0)
    q_prev = np.zeros((batch, n)) if q0 is None else np.asarray(q0, dtype=np.float64)
    for t in range(t_len):
        hd = h_prev if rec_mask is None else h_prev * rec_mask
        hds[t] = hd
        q_prevs[t] = q_prev
        f = sigmoid(xs[t] @ blk["W_f"].T + hd @ blk["U_f"].T + blk["b_f"])
        i = sigmoid(xs[t] @ blk["W_i"].T + hd @ blk["U_i"].T + blk["b_i"])
        g = np.tanh(xs[t] @ blk["W_g"].T + hd @ blk["U_g"].T + blk["b_g"])
        o = sigmoid(xs[t] @ blk["W_o"].T + hd @ blk["U_o"].T + blk["b_o"])
        q = f * q_prev + i * g
        tq = np.tanh(q)
        hs[t] = o * tq
        gates["f"][t], gates["i"][t], gates["g"][t], gates["o"][t] = f, i, g, o
        qs[t], tqs[t] = q, tq
        h_prev, q_prev = hs[t], q
    cache = {
        "xs": xs, "hs": hs, "hds": hds, "gates": gates,
        "qs": qs, "tqs": tqs, "q_prevs": q_prevs, "rec_mask": rec_mask,
    }
    return hs, cache


def _gru_forward(p, xs, h0, rec_mask):
    blk = p.blocks
    t_len, batch, _ = xs.shape
    n = p.hidden_dim
    hs = np.zeros((t_len, batch, n))
    zs = np.zeros((t_len, batch, n))
    rs = np.zeros((t_len, batch, n))
    cs = np.zeros((t_len, batch, n))
    hds = np.zeros((t_len, batch, n))
    rhds = np.zeros((t_len, batch, n))
    h_prevs = np.zeros((t_len, batch, n))

    h_prev = _init_hidden(p, xs, h0)
    for t in range(t_len):
        hd = h_prev if rec_mask is None else h_prev * rec_mask
        hds[t] = hd
        h_prevs[t] = h_prev
        z = sigmoid(xs[t] @ blk["W_z"].T + hd @ blk["U_z"].T + blk["b_z"])
        r = sigmoid(xs[t] @ blk["W_r"].T + hd @ blk["U_r"].T + blk["b_r"])
        rhd = r * hd
        ac = xs[t] @ blk["W_h"].T + rhd @ blk["U_h"].T + blk["b_h"]
        c = sigmoid(ac) if p.literal_forms else np.tanh(ac)
        # interpolation carries the undropped previous hidden state
        hs[t] = (1.0 - z) * h_prev + z * c
        zs[t], rs[t], cs[t], rhds[t] = z, r, c, rhd
        h_prev = hs[t]
    cache = {
        "xs": xs, "hs": hs, "hds": hds, "h_prevs": h_prevs,
        "zs": zs, "rs": rs, "cs": cs, "rhds": rhds, "rec_mask": rec_mask,
    }
    return hs, cache


# ---------------------------------------------------------------------------
# Backward passes
# ---------------------------------------------------------------------------


def backward(p: CellParams, cache: dict, d_hs: np.ndarray) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """Backpropagate-through-time one layer.

    ``d_hs`` is the upstream gradient on every hidden output (T, B, N).
    Returns the gradient on the layer's input sequence and per-block weight
    gradients (summed over batch and time, no regularization).
    """
    if p.kind == "simple":
        return _simple_backward(p, cache, d_hs)
    if p.kind == "indrnn":
        return _indrnn_backward(p, cache, d_hs)
    if p.kind == "lstm":
        return _lstm_backward(p, cache, d_hs)
    return _gru_backward(p, cache, d_hs)


def _mask_or_one(cache) -> np.ndarray | float:
    return 1.0 if cache["rec_mask"] is None else cache["rec_mask"]


def _simple_backward(p, cache, d_hs):
    W, U = p.blocks["W"], p.blocks["U"]
    xs, hs, hds = cache["xs"], cache["hs"], cache["hds"]
    mask = _mask_or_one(cache)
    grads = p.zero_grads()
    d_xs = np.zeros_like(xs)
    carry = np.zeros((xs.shape[1], p.hidden_dim))
    for t in range(xs.shape[0] - 1, -1, -1):
        dh = d_hs[t] + carry
        dpre = dh * hs[t] * (1.0 - hs[t])
        grads["W"] += dpre.T @ xs[t]
        grads["U"] += dpre.T @ hds[t]
        grads["b"] += dpre.sum(axis=0)
        d_xs[t] = dpre @ W
        carry = (dpre @ U) * mask
    return d_xs, grads


def _indrnn_backward(p, cache, d_hs):
    W, u = p.blocks["W"], p.blocks["u"]
    xs, ss, hds = cache["xs"], cache["ss"], cache["hds"]
    mask = _mask_or_one(cache)
    grads = p.zero_grads()
    d_xs = np.zeros_like(xs)
    carry = np.zeros((xs.shape[1], p.hidden_dim))
    for t in range(xs.shape[0] - 1, -1, -1):
        dh = d_hs[t] + carry
        if p.literal_forms:
            grads["b"] += dh.sum(axis=0)
            dpre = dh * ss[t] * (1.0 - ss[t])
        else:
            dpre = dh * ss[t] * (1.0 - ss[t])
            grads["b"] += dpre.sum(axis=0)
        grads["W"] += dpre.T @ xs[t]
        grads["u"] += (dpre * hds[t]).sum(axis=0)
        d_xs[t] = dpre @ W
        carry = dpre * u * mask
    return d_xs, grads


def _lstm_backward(p, cache, d_hs):
    blk = p.blocks
    xs, hds = cache["xs"], cache["hds"]
    gates, qs, tqs, q_prevs = cache["gates"], cache["qs"], cache["tqs"], cache["q_prevs"]
    mask = _mask_or_one(cache)
    grads = p.zero_grads()
    d_xs = np.zeros_like(xs)
    batch = xs.shape[1]
    carry_h = np.zeros((batch, p.hidden_dim))
    carry_q = np.zeros((batch, p.hidden_dim))
    for t in range(xs.shape[0] - 1, -1, -1):
        dh = d_hs[t] + carry_h
        f, i, g, o = (gates[k][t] for k in _LSTM_GATES)
        tq = tqs[t]
        do = dh * tq
        dq = carry_q + dh * o * (1.0 - tq * tq)
        df = dq * q_prevs[t]
        di = dq * g
        dg = dq * i
        carry_q = dq * f

        das = {
            "f": df * f * (1.0 - f),
            "i": di * i * (1.0 - i),
            "g": dg * (1.0 - g * g),
            "o": do * o * (1.0 - o),
        }
        dhd = np.zeros((batch, p.hidden_dim))
        dx = np.zeros_like(xs[t])
        for k, da in das.items():
            grads[f"W_{k}"] += da.T @ xs[t]
            grads[f"U_{k}"] += da.T @ hds[t]
            grads[f"b_{k}"] += da.sum(axis=0)
            dhd += da @ blk[f"U_{k}"]
            dx += da @ blk[f"W_{k}"]
        d_xs[t] = dx
        carry_h = dhd * mask
    return d_xs, grads


def _gru_backward(p, cache, d_hs):
    blk = p.blocks
    xs, hds, h_prevs = cache["xs"], cache["hds"], cache["h_prevs"]
    zs, rs, cs, rhds = cache["zs"], cache["rs"], cache["cs"], cache["rhds"]
    mask = _mask_or_one(cache)
    grads = p.zero_grads()
    d_xs = np.zeros_like(xs)
    batch = xs.shape[1]
    carry = np.zeros((batch, p.hidden_dim))
    for t in range(xs.shape[0] - 1, -1, -1):
        dh = d_hs[t] + carry
        z, r, c = zs[t], rs[t], cs[t]
        dz = dh * (c - h_prevs[t])
        dc = dh * z
        dh_prev_direct = dh * (1.0 - z)

        dac = dc * (c * (1.0 - c)) if p.literal_forms else dc * (1.0 - c * c)
        d_rhd = dac @ blk["U_h"]
        dr = d_rhd * hds[t]
        dhd = d_rhd * r
        dar = dr * r * (1.0 - r)
        daz = dz * z * (1.0 - z)
        dhd = dhd + daz @ blk["U_z"] + dar @ blk["U_r"]

        grads["W_z"] += daz.T @ xs[t]
        grads["U_z"] += daz.T @ hds[t]
        grads["b_z"] += daz.sum(axis=0)
        grads["W_r"] += dar.T @ xs[t]
        grads["U_r"] += dar.T @ hds[t]
        grads["b_r"] += dar.sum(axis=0)
        grads["W_h"] += dac.T @ xs[t]
        grads["U_h"] += dac.T @ rhds[t]
        grads["b_h"] += dac.sum(axis=0)

        d_xs[t] = daz @ blk["W_z"] + dar @ blk["W_r"] + dac @ blk["W_h"]
        carry = dh_prev_direct + dhd * mask
    return d_xs, grads


# ---------------------------------------------------------------------------
# Single-sequence convenience wrappers
# ---------------------------------------------------------------------------


def _wrap_single(p, xs, h0):
    xs = np.asarray(xs, dtype=np.float64)
    single = xs.ndim == 2
    if single:
        xs = xs[:, None, :]
        if h0 is not None:
            h0 = np.asarray(h0, dtype=np.float64)[None, :]
    return xs, h0, single


def indrnn_forward(p: CellParams, xs: np.ndarray, h0: np.ndarray | None = None) -> np.ndarray:
    """Hidden sequence of the independently recurrent cell; accepts (T, M) or (T, B, M)."""
    if p.kind != "indrnn":
        raise InvalidArgumentError(f"expected an indrnn cell, got {p.kind}")
    xs, h0, single = _wrap_single(p, xs, h0)
    hs, _ = forward(p, xs, h0=h0)
    return hs[:, 0, :] if single else hs


def lstm_forward(
    p: CellParams, xs: np.ndarray, h0: np.ndarray | None = None, q0: np.ndarray | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """(hidden sequence, cell-state sequence); accepts (T, M) or (T, B, M)."""
    if p.kind != "lstm":
        raise InvalidArgumentError(f"expected an lstm cell, got {p.kind}")
    xs, h0, single = _wrap_single(p, xs, h0)
    if q0 is not None and single:
        q0 = np.asarray(q0, dtype=np.float64)[None, :]
    hs, cache = forward(p, xs, h0=h0, q0=q0)
    qs = cache["qs"]
    return (hs[:, 0, :], qs[:, 0, :]) if single else (hs, qs)


def gru_forward(p: CellParams, xs: np.ndarray, h0: np.ndarray | None = None) -> np.ndarray:
    """Hidden sequence of the gated-update cell; accepts (T, M) or (T, B, M)."""
    if p.kind != "gru":
        raise InvalidArgumentError(f"expected a gru cell, got {p.kind}")
    xs, h0, single = _wrap_single(p, xs, h0)
    hs, _ = forward(p, xs, h0=h0)
    return hs[:, 0, :] if single else hs
