"""Multi-headed phase-shift network.

A shared extractor feeds ``M`` heads. Head ``m`` is a pair of real
sub-heads ``(re, im)`` and contributes the real part of
``exp(2*pi*i*omega_m*z) * (H_re(f) + i*H_im(f))`` to the logits, where ``z``
is the input projected onto the first principal component of the training
inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import nn
from .errors import DegeneracyError, ShapeError, StateError
from .nn import GradientSet, ParameterSet

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class ProjectionSpec:
    direction: np.ndarray
    scale: float = 1.0

    def __post_init__(self):
        norm = np.linalg.norm(self.direction)
        if abs(norm - 1.0) > 1e-9:
            raise ValueError(f"projection direction must be unit norm, got {norm}")
        if not self.scale > 0:
            raise ValueError("projection scale must be positive")


@dataclass(frozen=True)
class FrequencyAssignment:
    """One integer frequency per head; head 0 is pinned to zero."""

    omegas: tuple[int, ...]
    k_max: int | None = None

    def __post_init__(self):
        if len(self.omegas) < 1:
            raise ValueError("need at least one head frequency")
        if self.omegas[0] != 0:
            raise ValueError("head 0 must carry the zero frequency")
        if any(w < 0 for w in self.omegas):
            raise ValueError("frequencies must be non-negative")
        if self.k_max is not None and any(w >= self.k_max for w in self.omegas):
            raise ValueError(f"frequency outside [0, {self.k_max})")

    @classmethod
    def zeros(cls, n_heads: int) -> "FrequencyAssignment":
        return cls((0,) * n_heads)

    def __len__(self):
        return len(self.omegas)


@dataclass(frozen=True)
class PhaseModel:
    extractor: ParameterSet
    heads: tuple[tuple[ParameterSet, ParameterSet], ...]
    projection: ProjectionSpec | None = None

    def __post_init__(self):
        if len(self.heads) < 1:
            raise ValueError("a PhaseModel needs at least one head")
        n_out = self.heads[0][0].out_dim
        for re, im in self.heads:
            for h in (re, im):
                if h.in_dim != self.extractor.out_dim:
                    raise ShapeError("head input must match extractor feature dim")
                if h.out_dim != n_out:
                    raise ShapeError("all heads must emit the same number of classes")

    @property
    def n_heads(self) -> int:
        return len(self.heads)

    @property
    def n_classes(self) -> int:
        return self.heads[0][0].out_dim

    @property
    def input_dim(self) -> int:
        return self.extractor.in_dim

    def parameter_sets(self) -> list[ParameterSet]:
        sets = [self.extractor]
        for re, im in self.heads:
            sets.extend([re, im])
        return sets

    def with_parameter_sets(self, sets: Sequence[ParameterSet]) -> "PhaseModel":
        sets = list(sets)
        heads = tuple((sets[1 + 2 * m], sets[2 + 2 * m]) for m in range(self.n_heads))
        return PhaseModel(sets[0], heads, self.projection)

    def to_vector(self) -> np.ndarray:
        return np.concatenate([p.to_vector() for p in self.parameter_sets()])

    def from_vector(self, vec: np.ndarray) -> "PhaseModel":
        sets, pos = [], 0
        for p in self.parameter_sets():
            sets.append(p.from_vector(vec[pos:pos + p.size]))
            pos += p.size
        if pos != len(vec):
            raise ShapeError("parameter vector length does not match the model")
        return self.with_parameter_sets(sets)


@dataclass(frozen=True)
class PhaseGradients:
    extractor: GradientSet
    heads: tuple[tuple[GradientSet, GradientSet], ...]

    def sets(self) -> list[GradientSet]:
        out = [self.extractor]
        for re, im in self.heads:
            out.extend([re, im])
        return out

    def to_vector(self) -> np.ndarray:
        return np.concatenate([g.to_vector() for g in self.sets()])

    def __add__(self, other: "PhaseGradients") -> "PhaseGradients":
        return PhaseGradients(
            self.extractor + other.extractor,
            tuple((a + c, b + d) for (a, b), (c, d) in zip(self.heads, other.heads)),
        )

    def scale(self, factor: float) -> "PhaseGradients":
        return PhaseGradients(
            self.extractor.scale(factor),
            tuple((a.scale(factor), b.scale(factor)) for a, b in self.heads),
        )


def apply_sgd(model: PhaseModel, grads: PhaseGradients, lr: float) -> PhaseModel:
    sets = [nn.sgd_step(p, g, lr) for p, g in zip(model.parameter_sets(), grads.sets())]
    return model.with_parameter_sets(sets)


def init_phase_model(
    input_dim: int,
    n_classes: int,
    rng: np.random.Generator,
    hidden: Sequence[int] = (64, 64),
    n_heads: int = 3,
    activation: str = "tanh",
    projection: ProjectionSpec | None = None,
) -> PhaseModel:
    extractor = nn.init_params([input_dim, *hidden], activation, rng)
    feat = extractor.out_dim
    heads = tuple(
        (
            nn.init_params([feat, n_classes], "identity", rng),
            nn.init_params([feat, n_classes], "identity", rng),
        )
        for _ in range(n_heads)
    )
    return PhaseModel(extractor, heads, projection)


def compute_first_pc(
    dataset, iters: int = 100, seed: int = 0, scale: float = 1.0
) -> ProjectionSpec:
    """Leading eigenvector of the centred sample covariance by power iteration.

    Runs exactly ``iters`` iterations from a seeded random start. The sign is
    fixed so that the largest-magnitude component is positive.
    """
    X = np.asarray(dataset, dtype=np.float64)
    X = X.reshape(len(X), -1)
    if len(X) < 2:
        raise DegeneracyError("need at least two samples for a covariance")
    Xc = X - X.mean(axis=0)
    if not np.any(np.abs(Xc) > 1e-12 * max(1.0, np.abs(X).max())):
        raise DegeneracyError("dataset has zero variance")
    v = np.random.default_rng(seed).standard_normal(X.shape[1])
    v /= np.linalg.norm(v)
    for _ in range(iters):
        w = Xc.T @ (Xc @ v) / (len(X) - 1)
        norm = np.linalg.norm(w)
        if norm == 0.0:
            raise DegeneracyError("power iteration collapsed to zero")
        v = w / norm
    if v[np.argmax(np.abs(v))] < 0:
        v = -v
    # re-normalise so the unit-norm check holds to machine precision
    return ProjectionSpec(v / np.linalg.norm(v), scale)


def project(x, spec: ProjectionSpec) -> np.ndarray | float:
    """``scale * <x/|x|, p>``; zero vectors project to 0."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x[None, :] if single else x.reshape(len(x), -1)
    if X.shape[1] != spec.direction.shape[0]:
        raise ShapeError("input and projection direction dimensions differ")
    norms = np.linalg.norm(X, axis=1)
    dots = X @ spec.direction
    safe = np.where(norms > 0, norms, 1.0)
    z = np.where(norms > 0, spec.scale * dots / safe, 0.0)
    return float(z[0]) if single else z


def _projection_grad(X: np.ndarray, spec: ProjectionSpec) -> np.ndarray:
    norms = np.linalg.norm(X, axis=1, keepdims=True)
    safe = np.where(norms > 0, norms, 1.0)
    dots = X @ spec.direction
    g = spec.scale * (spec.direction[None, :] / safe - dots[:, None] * X / safe**3)
    return np.where(norms > 0, g, 0.0)


def _omega_matrix(freqs, batch: int, n_heads: int) -> np.ndarray:
    if isinstance(freqs, FrequencyAssignment):
        om = np.asarray(freqs.omegas, dtype=np.float64)
    else:
        om = np.asarray(freqs, dtype=np.float64)
    if om.shape[-1] != n_heads:
        raise ShapeError(f"{om.shape[-1]} frequencies given for {n_heads} heads")
    if om.ndim == 1:
        om = np.broadcast_to(om, (batch, n_heads))
    elif om.shape != (batch, n_heads):
        raise ShapeError("per-sample frequencies must have shape (batch, heads)")
    return om


@dataclass(frozen=True)
class PhaseTrace:
    model: PhaseModel
    X: np.ndarray
    z: np.ndarray
    omegas: np.ndarray
    cos: np.ndarray
    sin: np.ndarray
    extractor_trace: nn.Trace
    head_traces: tuple[tuple[nn.Trace, nn.Trace], ...]
    head_outputs: tuple[tuple[np.ndarray, np.ndarray], ...]
    z_stubbed: bool
    squeeze: bool = field(default=False)


def phase_forward(model: PhaseModel, freqs, x, z=None, return_trace: bool = False):
    """Logits ``sum_m cos(2 pi w_m z) H_re_m(f) - sin(2 pi w_m z) H_im_m(f)``.

    ``freqs`` is a FrequencyAssignment, a length-M sequence, or a
    ``(batch, M)`` array of per-sample frequencies. ``z`` overrides the
    projection (used to probe periodicity).
    """
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    X = x[None, :] if squeeze else x
    if X.ndim != 2 or X.shape[1] != model.input_dim:
        raise ShapeError(f"input shape {x.shape} does not match model input {model.input_dim}")
    B = len(X)
    om = _omega_matrix(freqs, B, model.n_heads)
    if z is None:
        if model.projection is None:
            if np.any(om != 0):
                raise StateError("model has no projection; only zero frequencies allowed")
            zz = np.zeros(B)
        else:
            zz = project(X, model.projection)
        stubbed = False
    else:
        zz = np.broadcast_to(np.asarray(z, dtype=np.float64), (B,))
        stubbed = True
    phase = TWO_PI * om * zz[:, None]
    c, s = np.cos(phase), np.sin(phase)

    f, ext_trace = nn.forward(model.extractor, X)
    logits = np.zeros((B, model.n_classes))
    traces, outputs = [], []
    for m, (re, im) in enumerate(model.heads):
        h_re, t_re = nn.forward(re, f)
        h_im, t_im = nn.forward(im, f)
        logits += c[:, m:m + 1] * h_re - s[:, m:m + 1] * h_im
        traces.append((t_re, t_im))
        outputs.append((h_re, h_im))
    out = logits[0] if squeeze else logits
    if not return_trace:
        return out
    trace = PhaseTrace(
        model, X, zz, om, c, s, ext_trace, tuple(traces), tuple(outputs), stubbed, squeeze
    )
    return out, trace


def base_forward(model: PhaseModel, x, return_trace: bool = False):
    """The same network with every head frequency set to zero."""
    return phase_forward(
        model, FrequencyAssignment.zeros(model.n_heads), x, return_trace=return_trace
    )


def phase_backward(
    model: PhaseModel, trace: PhaseTrace, logit_grad
) -> tuple[PhaseGradients, np.ndarray]:
    """Parameter gradients and input gradient for a ``phase_forward`` trace.

    The projection is constant in the parameters; its dependence on ``x``
    is included in the returned input gradient unless ``z`` was stubbed.
    """
    if trace.model is not model:
        raise StateError("trace was produced by a different model")
    g = np.asarray(logit_grad, dtype=np.float64)
    if trace.squeeze:
        g = g[None, :]
    if g.shape != (len(trace.X), model.n_classes):
        raise ShapeError("logit gradient shape does not match the forward pass")

    grad_f = np.zeros_like(trace.extractor_trace.post[-1])
    head_grads = []
    dlogit_dz = np.zeros_like(g)
    for m, (re, im) in enumerate(model.heads):
        c = trace.cos[:, m:m + 1]
        s = trace.sin[:, m:m + 1]
        t_re, t_im = trace.head_traces[m]
        g_re, gf_re = nn.backward(re, t_re, c * g)
        g_im, gf_im = nn.backward(im, t_im, -s * g)
        grad_f += gf_re + gf_im
        head_grads.append((g_re, g_im))
        h_re, h_im = trace.head_outputs[m]
        w = TWO_PI * trace.omegas[:, m:m + 1]
        dlogit_dz += -w * (s * h_re + c * h_im)
    g_ext, grad_x = nn.backward(model.extractor, trace.extractor_trace, grad_f)

    if model.projection is not None and not trace.z_stubbed:
        grad_z = np.sum(g * dlogit_dz, axis=1)
        grad_x = grad_x + grad_z[:, None] * _projection_grad(trace.X, model.projection)

    grads = PhaseGradients(g_ext, tuple(head_grads))
    return grads, (grad_x[0] if trace.squeeze else grad_x)


def with_projection(model: PhaseModel, spec: ProjectionSpec) -> PhaseModel:
    return replace(model, projection=spec)
