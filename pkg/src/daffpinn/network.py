"""Fully connected tanh network with 1/sqrt(d) layer scaling.

Layer h (1..L) computes

    main^(h) = W^(h-1) g^(h-1) / sqrt(d_{h-1}) [+ b^(h-1)]
    f^(h)    = main^(h) + sum of skip sources g^(s) targeting h
    g^(h)    = tanh(f^(h))

and the output is W^(L) g^(L) / sqrt(d_L) [+ b^(L)].  Without biases every
layer maps 0 to 0, so an input encoding that vanishes on the boundary gives
an output that vanishes there too.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from daffpinn import jets as J
from daffpinn import tape as T

ACTIVATIONS = ("tanh", "identity")


class NetworkError(ValueError):
    pass


def default_skip_plan(layers):
    """First hidden activation feeds every later hidden pre-activation."""
    return tuple((1, h) for h in range(2, layers + 1))


@dataclass
class NetworkParams:
    weights: list
    biases: list | None
    skip_plan: tuple = ()
    activation: str = "tanh"

    def __post_init__(self):
        self.skip_plan = tuple(tuple(int(v) for v in p) for p in self.skip_plan)
        L = self.layers
        for i in range(len(self.weights) - 1):
            if _shape(self.weights[i + 1])[1] != _shape(self.weights[i])[0]:
                raise NetworkError(f"weight {i + 1} does not compose with weight {i}")
        if _shape(self.weights[-1])[0] != 1:
            raise NetworkError("output layer must have a single unit")
        if self.biases is not None and len(self.biases) != len(self.weights):
            raise NetworkError("one bias vector per weight matrix required")
        targets = [h for _, h in self.skip_plan]
        if len(set(targets)) != len(targets):
            raise NetworkError("at most one skip connection per target layer")
        dims = self.dims
        for s, h in self.skip_plan:
            if not (1 <= s < h <= L):
                raise NetworkError(f"skip ({s}, {h}) must join hidden layers 1 <= s < h <= {L}")
            if dims[s] != dims[h]:
                raise NetworkError(f"skip ({s}, {h}) joins layers of different width")
        if self.activation not in ACTIVATIONS:
            raise NetworkError(f"unsupported activation {self.activation!r}")

    @property
    def use_bias(self):
        return self.biases is not None

    @property
    def layers(self):
        return len(self.weights) - 1

    @property
    def dims(self):
        return [_shape(self.weights[0])[1]] + [_shape(w)[0] for w in self.weights]

    @property
    def input_dim(self):
        return self.dims[0]

    def skip_into(self, h):
        for s, t in self.skip_plan:
            if t == h:
                return s
        return None

    def named(self):
        out = {f"W{i}": w for i, w in enumerate(self.weights)}
        if self.biases is not None:
            out.update({f"b{i}": b for i, b in enumerate(self.biases)})
        return out

    def n_params(self):
        return int(sum(np.size(T.value_of(v)) for v in self.named().values()))

    def with_values(self, named):
        """Copy with parameters replaced by ``named`` (name -> array or Var)."""
        weights = [named[f"W{i}"] for i in range(len(self.weights))]
        biases = None
        if self.biases is not None:
            biases = [named[f"b{i}"] for i in range(len(self.biases))]
        return NetworkParams(weights, biases, self.skip_plan, self.activation)

    def record(self, tape):
        """Copy whose parameters are leaves of ``tape``."""
        return self.with_values({k: tape.param(k, v) for k, v in self.named().items()})

    def flat(self):
        return np.concatenate([np.ravel(T.value_of(v)) for v in self.named().values()])

    def from_flat(self, vec):
        named, pos = {}, 0
        for k, v in self.named().items():
            n = np.size(T.value_of(v))
            named[k] = np.array(vec[pos:pos + n]).reshape(np.shape(T.value_of(v)))
            pos += n
        return self.with_values(named)

    def to_dict(self):
        return {
            "dims": self.dims,
            "use_bias": self.use_bias,
            "activation": self.activation,
            "skip_plan": [list(p) for p in self.skip_plan],
            "weights": [np.asarray(w).tolist() for w in self.weights],
            "biases": None if self.biases is None else [np.asarray(b).tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, d):
        weights = [np.asarray(w, dtype=float) for w in d["weights"]]
        biases = None if d.get("biases") is None else [np.asarray(b, dtype=float) for b in d["biases"]]
        params = cls(weights, biases, tuple(map(tuple, d.get("skip_plan", ()))), d.get("activation", "tanh"))
        if params.dims != list(d["dims"]):
            raise NetworkError("checkpoint dims do not match its weight shapes")
        return params


def _shape(v):
    return np.shape(T.value_of(v))


def init_params(layers, units, input_dim, seed=0, use_bias=True, skip_plan="default",
                activation="tanh"):
    """Unit-variance Gaussian weights; biases start at zero when present."""
    if layers < 1 or units < 1 or input_dim < 1:
        raise NetworkError(f"invalid architecture layers={layers} units={units} input={input_dim}")
    if skip_plan == "default":
        skip_plan = default_skip_plan(layers)
    elif skip_plan in (None, "none"):
        skip_plan = ()
    rng = np.random.default_rng(seed)
    dims = [input_dim] + [units] * layers + [1]
    weights = [rng.standard_normal((dims[i + 1], dims[i])) for i in range(layers + 1)]
    biases = [np.zeros(dims[i + 1]) for i in range(layers + 1)] if use_bias else None
    return NetworkParams(weights, biases, tuple(skip_plan), activation)


# -- evaluation ---------------------------------------------------------------


def _activate(params, f):
    if params.activation == "identity":
        return f
    return J.tanh(f)


def forward(params, encoding):
    """Scalar output jet u(x, y; theta) for an encoding (or a feature Jet)."""
    g = encoding.jets if hasattr(encoding, "jets") else encoding
    if g.batch_shape[-1] != params.input_dim:
        raise NetworkError(f"encoding has {g.batch_shape[-1]} features, network expects {params.input_dim}")
    acts = {0: g}
    L = params.layers
    for h in range(1, L + 2):
        w = params.weights[h - 1]
        wt = T.transpose(w) if isinstance(w, T.Var) else w.T
        f = g.matmul(wt).scale(1.0 / math.sqrt(params.dims[h - 1]))
        if params.biases is not None:
            f = f.add_value(params.biases[h - 1])
        if h == L + 1:
            return f[..., 0]
        s = params.skip_into(h)
        if s is not None:
            f = f + acts[s]
        g = _activate(params, f)
        acts[h] = g


@dataclass
class LayerRecord:
    main: np.ndarray
    bias: np.ndarray | None
    skip_source: int | None
    skip: np.ndarray | None
    pre: np.ndarray
    act: np.ndarray


@dataclass
class ActivationTrace:
    inputs: np.ndarray
    layers: list = field(default_factory=list)

    @property
    def output(self):
        return self.layers[-1].act[..., 0]

    def activation(self, h):
        return self.inputs if h == 0 else self.layers[h - 1].act


def forward_record(params, encoding_values):
    """Value-level pass that keeps every pre-activation, activation and skip branch."""
    g = np.asarray(encoding_values, dtype=float)
    if g.shape[-1] != params.input_dim:
        raise NetworkError(f"encoding has {g.shape[-1]} features, network expects {params.input_dim}")
    trace = ActivationTrace(inputs=g)
    L = params.layers
    for h in range(1, L + 2):
        w = np.asarray(params.weights[h - 1])
        main = (g @ w.T) * (1.0 / math.sqrt(params.dims[h - 1]))
        bias = None
        if params.biases is not None:
            bias = np.asarray(params.biases[h - 1])
            main = main + bias
        s = params.skip_into(h) if h <= L else None
        skip = trace.activation(s) if s is not None else None
        pre = main + skip if skip is not None else main
        if h == L + 1:
            act = pre
        else:
            act = pre if params.activation == "identity" else np.tanh(pre)
        trace.layers.append(LayerRecord(main, bias, s, skip, pre, act))
        g = act
    return trace.output, trace


def predict(params, bank, x, y):
    """Model values at points (x, y)."""
    from daffpinn.encoders import encode_values

    out, _ = forward_record(params, encode_values(bank, x, y))
    return out


# -- checkpoints ----------------------------------------------------------------


CHECKPOINT_FORMAT = "daffpinn-checkpoint/1"


def save_checkpoint(path, params, bank, meta=None):
    """Write dims, flags, skip plan, encoder and raw parameters as JSON.

    JSON floats use the shortest round-trip repr, so reloading is bit-exact.
    """
    import json

    doc = {"format": CHECKPOINT_FORMAT, "network": params.to_dict(), "bank": bank.to_dict(),
           "meta": meta or {}}
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_checkpoint(path):
    """Returns (params, bank, meta)."""
    import json

    from daffpinn.encoders import bank_from_dict

    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise NetworkError(f"{path}: not a checkpoint file")
    params = NetworkParams.from_dict(doc["network"])
    bank = bank_from_dict(doc["bank"])
    if bank.dim != params.input_dim:
        raise NetworkError(f"{path}: encoder width {bank.dim} != network input {params.input_dim}")
    return params, bank, doc.get("meta", {})
