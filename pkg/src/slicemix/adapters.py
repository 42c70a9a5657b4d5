"""Two global projection experts and the noisy two-way gate that mixes them.

The experts map vision-feature tokens (L, d_in) into readout space (d_out):
a GELU MLP that keeps every position, and a query head whose learnable query
embeddings cross-attend over the tokens. The soft mixture configures the
query head with exactly L queries so the expert outputs add positionwise.
The gate scores the mean-pooled token and, in training mode, perturbs each
logit with a standard-normal draw scaled by softplus(x . w_noise) before the
softmax. All gradients are hand-derived and finite-difference checked.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .numerics import (
    cross_attention,
    cross_attention_vjp,
    gelu,
    gelu_grad,
    softmax,
    softplus,
)

__all__ = [
    "MlpParams",
    "QFormerParams",
    "GateParams",
    "GateSample",
    "init_mlp",
    "init_qformer",
    "init_gate",
    "mlp_forward",
    "mlp_vjp",
    "qformer_forward",
    "qformer_vjp",
    "gate_weights",
    "gate_sample",
    "moe_forward",
    "moe_apply",
    "adapter_grads",
    "params_to_doc",
    "doc_to_json",
    "json_to_doc",
    "mlp_from_doc",
    "qformer_from_doc",
    "gate_from_doc",
]


@dataclass
class MlpParams:
    w1: np.ndarray  # (d_in, d_hidden)
    b1: np.ndarray  # (d_hidden,)
    w2: np.ndarray  # (d_hidden, d_out)
    b2: np.ndarray  # (d_out,)


@dataclass
class QFormerParams:
    queries: np.ndarray  # (n_queries, d_in)
    wk: np.ndarray       # (d_in, d_in)
    wv: np.ndarray       # (d_in, d_in)
    wo: np.ndarray       # (d_in, d_out)

    @property
    def n_queries(self) -> int:
        return self.queries.shape[0]


@dataclass
class GateParams:
    w_g: np.ndarray      # (d_in, 2)
    w_noise: np.ndarray  # (d_in, 2)
    noise_enabled: bool = True


@dataclass
class GateSample:
    """One gate evaluation plus what the backward pass needs to replay it."""

    pooled: np.ndarray
    weights: np.ndarray
    eps: np.ndarray | None = None      # the two normal draws, None when noiseless
    override: bool = False


def init_mlp(rng: np.random.Generator, d_in: int, d_out: int,
             d_hidden: int | None = None) -> MlpParams:
    d_hidden = d_out if d_hidden is None else d_hidden
    return MlpParams(
        w1=rng.standard_normal((d_in, d_hidden)) / np.sqrt(d_in),
        b1=np.zeros(d_hidden),
        w2=rng.standard_normal((d_hidden, d_out)) / np.sqrt(d_hidden),
        b2=np.zeros(d_out),
    )


def init_qformer(rng: np.random.Generator, n_queries: int, d_in: int,
                 d_out: int) -> QFormerParams:
    return QFormerParams(
        queries=rng.standard_normal((n_queries, d_in)) / np.sqrt(d_in),
        wk=rng.standard_normal((d_in, d_in)) / np.sqrt(d_in),
        wv=rng.standard_normal((d_in, d_in)) / np.sqrt(d_in),
        wo=rng.standard_normal((d_in, d_out)) / np.sqrt(d_in),
    )


def init_gate(rng: np.random.Generator, d_in: int,
              noise_enabled: bool = True) -> GateParams:
    return GateParams(
        w_g=rng.standard_normal((d_in, 2)) / np.sqrt(d_in),
        w_noise=rng.standard_normal((d_in, 2)) / np.sqrt(d_in),
        noise_enabled=noise_enabled,
    )


def _check_tokens(tokens: np.ndarray, d_in: int, what: str) -> np.ndarray:
    t = np.asarray(tokens, dtype=np.float64)
    if t.ndim != 2:
        raise ValueError(f"{what} expects a 2-D token matrix")
    if t.shape[1] != d_in:
        raise ValueError(f"{what}: token width {t.shape[1]} != parameter width {d_in}")
    return t


def mlp_forward(tokens, p: MlpParams) -> np.ndarray:
    """Per-token gelu(x W1 + b1) W2 + b2; the token count is preserved."""
    t = _check_tokens(tokens, p.w1.shape[0], "mlp_forward")
    return gelu(t @ p.w1 + p.b1) @ p.w2 + p.b2


def mlp_vjp(tokens, p: MlpParams, dout):
    """Gradients of sum(mlp_forward * dout) w.r.t. parameters and tokens."""
    t = _check_tokens(tokens, p.w1.shape[0], "mlp_vjp")
    h = t @ p.w1 + p.b1
    a = gelu(h)
    dw2 = a.T @ dout
    db2 = dout.sum(axis=0)
    dh = (dout @ p.w2.T) * gelu_grad(h)
    dw1 = t.T @ dh
    db1 = dh.sum(axis=0)
    dtok = dh @ p.w1.T
    return MlpParams(w1=dw1, b1=db1, w2=dw2, b2=db2), dtok


def qformer_forward(tokens, p: QFormerParams) -> np.ndarray:
    """Learnable queries cross-attend over projected tokens; the output always
    has exactly n_queries rows regardless of the input length."""
    t = _check_tokens(tokens, p.wk.shape[0], "qformer_forward")
    att = cross_attention(p.queries, t @ p.wk, t @ p.wv)
    return att @ p.wo


def qformer_vjp(tokens, p: QFormerParams, dout):
    """Gradients of sum(qformer_forward * dout) w.r.t. parameters and tokens."""
    t = _check_tokens(tokens, p.wk.shape[0], "qformer_vjp")
    k = t @ p.wk
    v = t @ p.wv
    att = cross_attention(p.queries, k, v)
    dwo = att.T @ dout
    datt = dout @ p.wo.T
    dq, dk, dv = cross_attention_vjp(p.queries, k, v, datt)
    dwk = t.T @ dk
    dwv = t.T @ dv
    dtok = dk @ p.wk.T + dv @ p.wv.T
    return QFormerParams(queries=dq, wk=dwk, wv=dwv, wo=dwo), dtok


def gate_sample(pooled, p: GateParams, rng: np.random.Generator | None = None,
                override=None) -> GateSample:
    """Evaluate the gate on a pooled feature vector.

    Noise is applied only when the parameters enable it AND a generator is
    provided (training mode); without a generator the gate is deterministic.
    An explicit override substitutes the mixing weights verbatim.
    """
    x = np.asarray(pooled, dtype=np.float64).ravel()
    if x.shape[0] != p.w_g.shape[0]:
        raise ValueError("pooled feature width does not match gate parameters")
    if override is not None:
        w = np.asarray(override, dtype=np.float64).ravel()
        if w.shape != (2,):
            raise ValueError("gate override must have exactly 2 entries")
        return GateSample(pooled=x, weights=w, override=True)
    logits = x @ p.w_g
    eps = None
    if p.noise_enabled and rng is not None:
        eps = rng.standard_normal(2)
        logits = logits + eps * softplus(x @ p.w_noise)
    return GateSample(pooled=x, weights=softmax(logits), eps=eps)


def gate_weights(pooled, p: GateParams,
                 rng: np.random.Generator | None = None) -> np.ndarray:
    """Mixing weights for the two experts; always in the 2-simplex."""
    return gate_sample(pooled, p, rng).weights


def moe_apply(tokens, mlp: MlpParams, qf: QFormerParams, gate: GateParams,
              rng: np.random.Generator | None = None, gate_override=None):
    """Soft two-expert mixture; returns (output, gate sample).

    The gate sees the column mean of the tokens, so one weight pair applies
    to the whole image.
    """
    t = _check_tokens(tokens, mlp.w1.shape[0], "moe_apply")
    if qf.n_queries != t.shape[0]:
        raise ValueError("global expert shape mismatch")
    sample = gate_sample(t.mean(axis=0), gate, rng, gate_override)
    g = sample.weights
    out = g[0] * mlp_forward(t, mlp) + g[1] * qformer_forward(t, qf)
    return out, sample


def moe_forward(tokens, mlp: MlpParams, qf: QFormerParams, gate: GateParams,
                rng: np.random.Generator | None = None,
                gate_override=None) -> np.ndarray:
    """Gated sum of the two expert outputs; token count is preserved."""
    out, _ = moe_apply(tokens, mlp, qf, gate, rng, gate_override)
    return out


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def adapter_grads(tokens, mlp: MlpParams, qf: QFormerParams, gate: GateParams,
                  dout, sample: GateSample):
    """VJP through the soft mixture for a downstream scalar loss.

    `sample` must come from the forward pass (moe_apply); when it carries
    noise draws they are treated as constants so the noise-scale weights
    still receive gradient. Returns (d_mlp, d_qformer, d_gate, d_tokens).
    """
    t = _check_tokens(tokens, mlp.w1.shape[0], "adapter_grads")
    g = sample.weights
    mlp_out = mlp_forward(t, mlp)
    qf_out = qformer_forward(t, qf)
    d_mlp, dtok_mlp = mlp_vjp(t, mlp, g[0] * dout)
    d_qf, dtok_qf = qformer_vjp(t, qf, g[1] * dout)
    dtok = dtok_mlp + dtok_qf
    d_gate = GateParams(w_g=np.zeros_like(gate.w_g),
                        w_noise=np.zeros_like(gate.w_noise),
                        noise_enabled=gate.noise_enabled)
    if not sample.override:
        dg = np.array([np.vdot(dout, mlp_out), np.vdot(dout, qf_out)])
        dlogits = g * (dg - float(dg @ g))
        d_gate.w_g = np.outer(sample.pooled, dlogits)
        dpooled = gate.w_g @ dlogits
        if sample.eps is not None:
            coef = sample.eps * _sigmoid(sample.pooled @ gate.w_noise) * dlogits
            d_gate.w_noise = np.outer(sample.pooled, coef)
            dpooled = dpooled + gate.w_noise @ coef
        dtok = dtok + dpooled[None, :] / t.shape[0]
    return d_mlp, d_qf, d_gate, dtok


# -- checkpoint document: {name -> {rows, cols, data}} ----------------------

_MLP_FIELDS = ("w1", "b1", "w2", "b2")
_QFORMER_FIELDS = ("queries", "wk", "wv", "wo")
_GATE_FIELDS = ("w_g", "w_noise")


def _entry(arr: np.ndarray) -> dict:
    a2 = np.atleast_2d(np.asarray(arr, dtype=np.float64))
    return {"rows": int(a2.shape[0]), "cols": int(a2.shape[1]),
            "data": [float(x) for x in a2.ravel()]}


def _from_entry(entry: dict, vector: bool = False) -> np.ndarray:
    arr = np.array(entry["data"], dtype=np.float64).reshape(entry["rows"], entry["cols"])
    return arr.reshape(-1) if vector else arr


def params_to_doc(**named) -> dict:
    """Flatten named parameter containers into a checkpoint document."""
    doc: dict[str, dict] = {}
    for name, params in named.items():
        if isinstance(params, MlpParams):
            fields = _MLP_FIELDS
        elif isinstance(params, QFormerParams):
            fields = _QFORMER_FIELDS
        elif isinstance(params, GateParams):
            fields = _GATE_FIELDS
        else:
            raise TypeError(f"cannot serialize {type(params).__name__}")
        for f in fields:
            doc[f"{name}.{f}"] = _entry(getattr(params, f))
    return doc


def doc_to_json(doc: dict) -> str:
    return json.dumps(doc, sort_keys=True)


def json_to_doc(text: str) -> dict:
    return json.loads(text)


def mlp_from_doc(doc: dict, name: str = "mlp") -> MlpParams:
    return MlpParams(
        w1=_from_entry(doc[f"{name}.w1"]),
        b1=_from_entry(doc[f"{name}.b1"], vector=True),
        w2=_from_entry(doc[f"{name}.w2"]),
        b2=_from_entry(doc[f"{name}.b2"], vector=True),
    )


def qformer_from_doc(doc: dict, name: str = "qformer") -> QFormerParams:
    return QFormerParams(*(_from_entry(doc[f"{name}.{f}"]) for f in _QFORMER_FIELDS))


def gate_from_doc(doc: dict, name: str = "gate",
                  noise_enabled: bool = True) -> GateParams:
    return GateParams(w_g=_from_entry(doc[f"{name}.w_g"]),
                      w_noise=_from_entry(doc[f"{name}.w_noise"]),
                      noise_enabled=noise_enabled)
