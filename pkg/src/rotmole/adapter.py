"""Routed low-rank adapter layer.

A layer is a frozen base matrix plus n low-rank experts (A_i, B_i) and a
router. The router always produces softmax scaling gates over all experts,
selects the top k, and renormalizes. In "rotmole" mode it additionally emits a
per-expert angle that rotates the expert's r-dimensional intermediate inside a
plane anchored at a learned center vector; "scaling_only" is the conventional
gate-values-only baseline, and "mlp_gate" swaps the linear scaling gate for a
two-layer MLP of matched trainable size.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .numkit import (
    ConfigError,
    Matrix,
    Rng,
    ShapeError,
    Vector,
    kaiming_uniform,
    matvec,
    sigmoid,
    softmax,
)
from .rotation import RotationPlane, apply_rotation, build_plane, rotation_matrix_2d

MODES = ("scaling_only", "rotmole", "mlp_gate")

# Emitted angles stay strictly inside (-pi, pi) even when the sigmoid saturates.
THETA_LIMIT = float(np.nextafter(np.pi, 0.0))


@dataclass(frozen=True)
class AdapterConfig:
    d: int
    r: int
    n: int
    k: int
    mode: str = "rotmole"
    eps_degenerate: float = 1e-8
    mlp_hidden: int | None = None

    def __post_init__(self):
        if self.d < 1:
            raise ConfigError(f"d must be >= 1, got {self.d}")
        if self.r < 2:
            raise ConfigError(f"r must be >= 2, got {self.r}")
        if self.n < 1:
            raise ConfigError(f"n must be >= 1, got {self.n}")
        if not 1 <= self.k <= self.n:
            raise ConfigError(f"k must be in [1, n={self.n}], got {self.k}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.eps_degenerate <= 0.0:
            raise ConfigError(f"eps_degenerate must be positive, got {self.eps_degenerate}")
        if self.mode == "mlp_gate" and (self.mlp_hidden is None or self.mlp_hidden < 1):
            raise ConfigError("mlp_gate mode requires a positive mlp_hidden")


@dataclass
class LoraExpert:
    a: Matrix  # (r, d)
    b: Matrix  # (d, r)


@dataclass
class RouterParams:
    w_g: Matrix | None = None  # (d, n), absent in mlp_gate mode
    w_theta: Matrix | None = None  # (d, n), rotmole only
    q: Matrix | None = None  # (n, r) center vectors, rotmole with r > 2 only
    mlp_w1: Matrix | None = None  # (d, H), mlp_gate only
    mlp_w2: Matrix | None = None  # (H, n), mlp_gate only


@dataclass(frozen=True)
class RoutingDecision:
    selected: tuple[int, ...]  # k indices in descending gate order
    g: Vector  # k renormalized gate values, sum to 1
    theta: Vector  # k angles in radians, zeros outside rotmole mode


@dataclass
class AdapterLayer:
    config: AdapterConfig
    w0: Matrix  # (d, d), frozen
    experts: list[LoraExpert]
    router: RouterParams


@dataclass
class ForwardCache:
    """Every intermediate the backward pass needs, keyed to one forward call."""

    config: AdapterConfig
    x: Vector
    gate_softmax: Vector  # softmax over all n logits
    renorm_sum: float  # sum of softmax values over the selected set
    decision: RoutingDecision
    theta_logits: Vector  # raw rotation-gate logits for selected experts
    us: list[Vector]  # A_i x per selected expert
    planes: list[RotationPlane | None]
    rotated: list[Vector]
    deltas: list[Vector]  # B_i (rotated) per selected expert
    mlp_pre: Vector | None = None
    mlp_hidden: Vector | None = None


def count_trainable_routing_params(config: AdapterConfig) -> int:
    """Trainable router size: dn / 2dn / 2dn+rn / dH+Hn depending on mode."""
    d, r, n = config.d, config.r, config.n
    if config.mode == "scaling_only":
        return d * n
    if config.mode == "rotmole":
        return 2 * d * n + (r * n if r > 2 else 0)
    h = config.mlp_hidden
    return d * h + h * n


def mlp_hidden_dim(config: AdapterConfig) -> int:
    """Hidden width that matches an MLP gate's size to the rotating router's."""
    d, r, n = config.d, config.r, config.n
    return max(1, int(math.floor((2 * d * n + r * n) / (d + n) + 0.5)))


def mlp_variant(config: AdapterConfig) -> AdapterConfig:
    """Size-equivalent MLP-gate configuration derived from `config`."""
    return replace(config, mode="mlp_gate", mlp_hidden=mlp_hidden_dim(config))


def init_adapter(config: AdapterConfig, rng: Rng) -> AdapterLayer:
    """Fresh layer: B and the rotation gate start at zero so the adapter delta
    and all angles are exactly zero; everything else is Kaiming-uniform."""
    d, r, n = config.d, config.r, config.n
    w0 = kaiming_uniform(d, d, rng)
    experts = [
        LoraExpert(a=kaiming_uniform(r, d, rng), b=np.zeros((d, r))) for _ in range(n)
    ]
    router = RouterParams()
    if config.mode == "mlp_gate":
        h = config.mlp_hidden
        router.mlp_w1 = np.ascontiguousarray(kaiming_uniform(h, d, rng).T)
        router.mlp_w2 = np.ascontiguousarray(kaiming_uniform(n, h, rng).T)
    else:
        router.w_g = np.ascontiguousarray(kaiming_uniform(n, d, rng).T)
        if config.mode == "rotmole":
            router.w_theta = np.zeros((d, n))
            if r > 2:
                router.q = kaiming_uniform(n, r, rng)
    return AdapterLayer(config, w0, experts, router)


def _gate_logits(layer: AdapterLayer, x: Vector):
    """Gate logits plus MLP intermediates (None outside mlp_gate mode)."""
    router = layer.router
    if layer.config.mode == "mlp_gate":
        pre = x @ router.mlp_w1
        hidden = np.maximum(pre, 0.0)
        return hidden @ router.mlp_w2, pre, hidden
    return x @ router.w_g, None, None


def _clamp_angle(theta: float) -> float:
    return min(max(theta, -THETA_LIMIT), THETA_LIMIT)


def _route_full(layer: AdapterLayer, x: Vector, force_selected=None):
    config = layer.config
    if x.ndim != 1 or x.shape[0] != config.d:
        raise ShapeError(f"route: input shape {x.shape} does not match d={config.d}")
    logits, mlp_pre, mlp_hidden = _gate_logits(layer, x)
    s = softmax(logits)
    if force_selected is None:
        order = sorted(range(config.n), key=lambda i: (-s[i], i))
        selected = tuple(order[: config.k])
    else:
        selected = tuple(force_selected)
    renorm = float(np.sum(s[list(selected)]))
    # Renormalizing the selected softmax values cancels the full denominator,
    # so compute g directly from the selected logits: same value, and exactly
    # independent of unselected logits.
    g = softmax(logits[list(selected)])
    theta_logits = np.zeros(len(selected))
    theta = np.zeros(len(selected))
    if config.mode == "rotmole":
        for pos, i in enumerate(selected):
            t = float(x @ layer.router.w_theta[:, i])
            theta_logits[pos] = t
            theta[pos] = _clamp_angle(2.0 * math.pi * sigmoid(t) - math.pi)
    decision = RoutingDecision(selected, g, theta)
    return decision, s, renorm, theta_logits, mlp_pre, mlp_hidden


def route(layer: AdapterLayer, x: Vector) -> RoutingDecision:
    """Top-k selection on scaling-gate values, renormalized, plus angles."""
    decision, _, _, _, _, _ = _route_full(layer, x)
    return decision


def forward(
    layer: AdapterLayer, x: Vector, *, force_selected=None
) -> tuple[Vector, ForwardCache]:
    """y = W0 x + sum over selected experts of g_i * B_i * rotate(A_i x).

    `force_selected` pins the expert set regardless of gate values; the
    finite-difference harness uses it to keep top-k selection fixed while
    parameters are perturbed.
    """
    config = layer.config
    decision, s, renorm, theta_logits, mlp_pre, mlp_hidden = _route_full(
        layer, x, force_selected
    )
    y = matvec(layer.w0, x)
    us, planes, rotated, deltas = [], [], [], []
    for pos, i in enumerate(decision.selected):
        expert = layer.experts[i]
        u = expert.a @ x
        plane = None
        if config.mode == "rotmole":
            theta = float(decision.theta[pos])
            if config.r == 2:
                rot = rotation_matrix_2d(theta) @ u
            else:
                plane = build_plane(u, layer.router.q[i], config.eps_degenerate)
                rot = apply_rotation(u, plane, theta)
        else:
            rot = u
        delta = expert.b @ rot
        y = y + decision.g[pos] * delta
        us.append(u)
        planes.append(plane)
        rotated.append(rot)
        deltas.append(delta)
    cache = ForwardCache(
        config=config,
        x=x,
        gate_softmax=s,
        renorm_sum=renorm,
        decision=decision,
        theta_logits=theta_logits,
        us=us,
        planes=planes,
        rotated=rotated,
        deltas=deltas,
        mlp_pre=mlp_pre,
        mlp_hidden=mlp_hidden,
    )
    return y, cache


# ---------------------------------------------------------------------------
# Parameter enumeration (shared by the optimizer and the gradient checker)
# ---------------------------------------------------------------------------


def trainable_params(layer: AdapterLayer) -> dict[str, np.ndarray]:
    """Live views of every trainable array, keyed by group name.

    W0 is frozen and deliberately absent. Mutating the returned arrays mutates
    the layer.
    """
    out: dict[str, np.ndarray] = {}
    for i, expert in enumerate(layer.experts):
        out[f"a{i}"] = expert.a
        out[f"b{i}"] = expert.b
    router = layer.router
    for name in ("w_g", "w_theta", "q", "mlp_w1", "mlp_w2"):
        arr = getattr(router, name)
        if arr is not None:
            out[name] = arr
    return out


def routing_param_count(layer: AdapterLayer) -> int:
    """Actual trainable value count in the router arrays."""
    router = layer.router
    return sum(
        getattr(router, name).size
        for name in ("w_g", "w_theta", "q", "mlp_w1", "mlp_w2")
        if getattr(router, name) is not None
    )


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def _encode_matrix(m: np.ndarray | None):
    if m is None:
        return None
    return {"rows": m.shape[0], "cols": m.shape[1], "data": m.flatten().tolist()}


def _decode_matrix(obj) -> np.ndarray | None:
    if obj is None:
        return None
    data = np.array(obj["data"], dtype=np.float64)
    return data.reshape(obj["rows"], obj["cols"])


def layer_to_doc(layer: AdapterLayer) -> dict:
    config = layer.config
    return {
        "config": {
            "d": config.d,
            "r": config.r,
            "n": config.n,
            "k": config.k,
            "mode": config.mode,
            "eps_degenerate": config.eps_degenerate,
            "mlp_hidden": config.mlp_hidden,
        },
        "w0": _encode_matrix(layer.w0),
        "experts": [
            {"a": _encode_matrix(e.a), "b": _encode_matrix(e.b)} for e in layer.experts
        ],
        "router": {
            "w_g": _encode_matrix(layer.router.w_g),
            "w_theta": _encode_matrix(layer.router.w_theta),
            "q": _encode_matrix(layer.router.q),
            "mlp_w1": _encode_matrix(layer.router.mlp_w1),
            "mlp_w2": _encode_matrix(layer.router.mlp_w2),
        },
    }


def layer_from_doc(doc: dict) -> AdapterLayer:
    c = doc["config"]
    config = AdapterConfig(
        d=c["d"],
        r=c["r"],
        n=c["n"],
        k=c["k"],
        mode=c["mode"],
        eps_degenerate=c["eps_degenerate"],
        mlp_hidden=c["mlp_hidden"],
    )
    experts = [
        LoraExpert(a=_decode_matrix(e["a"]), b=_decode_matrix(e["b"]))
        for e in doc["experts"]
    ]
    r = doc["router"]
    router = RouterParams(
        w_g=_decode_matrix(r["w_g"]),
        w_theta=_decode_matrix(r["w_theta"]),
        q=_decode_matrix(r["q"]),
        mlp_w1=_decode_matrix(r["mlp_w1"]),
        mlp_w2=_decode_matrix(r["mlp_w2"]),
    )
    return AdapterLayer(config, _decode_matrix(doc["w0"]), experts, router)


def save_layer(layer: AdapterLayer, path) -> None:
    Path(path).write_text(json.dumps(layer_to_doc(layer)) + "\n")


def load_layer(path) -> AdapterLayer:
    return layer_from_doc(json.loads(Path(path).read_text()))
