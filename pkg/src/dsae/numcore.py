"""Dense numeric kernels and the gradient-check contract.

The kernels are thin wrappers over numpy that enforce the toolkit's
contracts: float64 everywhere, finite outputs, explicit errors instead of
NaN propagation. ``grad_check`` is the acceptance gate every trainable
operation must pass: analytic gradients are compared against central finite
differences on a sampled subset of scalar parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation, DegenerateEmbedding

NORM_EPS = 1e-12


def as_matrix(x, name: str = "matrix") -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != 2:
        raise ContractViolation(f"{name} must be 2-D, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ContractViolation(f"{name} contains non-finite values")
    return a


def matmul(a, b) -> np.ndarray:
    """Matrix product with explicit dimension checking."""
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ContractViolation(
            f"matmul dimension mismatch: ({a.shape[0]}x{a.shape[1]}) @ ({b.shape[0]}x{b.shape[1]})"
        )
    return a @ b


def softmax(v, axis: int = -1) -> np.ndarray:
    """Stable softmax: outputs in [0,1], summing to 1 along `axis`."""
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise ContractViolation("softmax of empty input")
    if not np.all(np.isfinite(v)):
        raise ContractViolation("softmax input contains non-finite values")
    shifted = v - v.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def elementwise(v, fn: str) -> np.ndarray:
    """Apply sigmoid/tanh/relu componentwise."""
    v = np.asarray(v, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise ContractViolation("elementwise input contains non-finite values")
    if fn == "relu":
        return np.maximum(v, 0.0)
    if fn == "tanh":
        return np.tanh(v)
    if fn == "sigmoid":
        out = np.empty_like(v)
        pos = v >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
        ev = np.exp(v[~pos])
        out[~pos] = ev / (1.0 + ev)
        return out
    raise ContractViolation(f"unknown elementwise function {fn!r}")


def l2_normalize(v) -> np.ndarray:
    """Scale `v` to unit L2 norm; near-zero vectors are rejected."""
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v)
    if n <= NORM_EPS:
        raise DegenerateEmbedding(f"cannot normalize vector with norm {n!r}")
    return v / n


@dataclass
class GradCheckReport:
    """Outcome of a finite-difference check over sampled parameter scalars."""

    tolerance: float
    max_rel_error: float = 0.0
    per_param: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)
    checked: int = 0

    @property
    def passed(self) -> bool:
        return not self.failures and self.max_rel_error <= self.tolerance


def grad_check(loss_fn, params: dict, eps: float = 1e-5, tol: float = 1e-4,
               min_samples: int = 200, rng=None) -> GradCheckReport:
    """Compare analytic gradients of `loss_fn` against central differences.

    `loss_fn(params)` must deterministically return `(loss, grads)` where
    `grads` maps each parameter name to an array shaped like the parameter.
    At least `min_samples` scalar coordinates (or all, if fewer exist) are
    perturbed by +/-eps; the relative error for each is
    |g_a - g_fd| / max(1e-8, |g_a| + |g_fd|).
    """
    if not 1e-6 <= eps <= 1e-3:
        raise ContractViolation(f"eps {eps} outside [1e-6, 1e-3]")
    rng = np.random.default_rng(0) if rng is None else rng

    _, grads = loss_fn(params)
    names = sorted(params)
    sizes = {k: params[k].size for k in names}
    total = sum(sizes.values())

    coords = []
    if total <= min_samples:
        for k in names:
            coords.extend((k, i) for i in range(sizes[k]))
    else:
        # proportional allocation, at least one coordinate per parameter
        for k in names:
            want = max(1, round(min_samples * sizes[k] / total))
            idx = rng.choice(sizes[k], size=min(want, sizes[k]), replace=False)
            coords.extend((k, int(i)) for i in np.sort(idx))

    report = GradCheckReport(tolerance=tol)
    for name, flat_idx in coords:
        p = params[name]
        orig = p.flat[flat_idx]
        p.flat[flat_idx] = orig + eps
        lo_hi = [loss_fn(params)[0]]
        p.flat[flat_idx] = orig - eps
        lo_hi.append(loss_fn(params)[0])
        p.flat[flat_idx] = orig
        if not all(np.isfinite(lo_hi)):
            report.failures.append((name, flat_idx, "non-finite loss at perturbed point"))
            continue
        g_fd = (lo_hi[0] - lo_hi[1]) / (2.0 * eps)
        g_an = float(grads[name].flat[flat_idx])
        rel = abs(g_an - g_fd) / max(1e-8, abs(g_an) + abs(g_fd))
        report.checked += 1
        report.per_param[name] = max(report.per_param.get(name, 0.0), rel)
        report.max_rel_error = max(report.max_rel_error, rel)
    return report
