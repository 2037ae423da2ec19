"""Robust affine fit of the inter-frame dominant flow."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DegenerateConfigurationError, InvalidInputError
from .robust import RobustKernel, geman_mcclure, irls_weight


@dataclass(frozen=True)
class DominantFlow:
    """Affine map ``y = A x + b`` in full-resolution pixels."""

    A: np.ndarray = field(default_factory=lambda: np.eye(2))
    b: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def __post_init__(self):
        object.__setattr__(self, "A", np.asarray(self.A, dtype=np.float64).reshape(2, 2))
        object.__setattr__(self, "b", np.asarray(self.b, dtype=np.float64).reshape(2))

    @property
    def plausible(self) -> bool:
        finite = np.all(np.isfinite(self.A)) and np.all(np.isfinite(self.b))
        return bool(finite and abs(np.linalg.det(self.A) - 1.0) < 0.5)

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return x @ self.A.T + self.b


def flow_cost(A, b, x, y, kernel: RobustKernel) -> float:
    r = y - (x @ A.T + b)
    return float(np.sum(geman_mcclure(np.linalg.norm(r, axis=1), kernel)))


def estimate_dominant_flow(pairs, config=None, *, kernel: RobustKernel | None = None,
                           max_iters: int | None = None, tol: float | None = None,
                           return_history: bool = False):
    """Fit ``A, b`` by iteratively reweighted Gauss-Newton from the identity.

    ``pairs`` is either ``(x, y)`` arrays of shape ``(N, 2)`` or a sequence of
    point pairs. Each step is halved up to 8 times until the robust cost
    does not increase; the fit stops when the update norm drops below ``tol``.
    """
    x, y = _split_pairs(pairs)
    if kernel is None:
        kernel = RobustKernel(config.flow_sigma_lowres * config.subsample_factor) if config else RobustKernel(2.0)
    if max_iters is None:
        max_iters = config.gn_max_iters if config else 30
    if tol is None:
        tol = config.gn_tol if config else 1e-8
    if len(x) < 3:
        raise InvalidInputError(f"need at least 3 pairs, got {len(x)}")

    centered = x - x.mean(axis=0)
    ev = np.linalg.eigvalsh(centered.T @ centered / len(x))
    if ev[0] <= 1e-9 * max(ev[1], 1e-300):
        raise DegenerateConfigurationError("correspondences are collinear")

    n = len(x)
    J = np.zeros((n, 2, 6))
    J[:, 0, 0:2] = x
    J[:, 1, 2:4] = x
    J[:, 0, 4] = 1.0
    J[:, 1, 5] = 1.0

    theta = np.array([1.0, 0.0, 0.0, 1.0, 0.0, 0.0])
    cost = flow_cost(theta[:4].reshape(2, 2), theta[4:], x, y, kernel)
    history = [cost]
    for _ in range(max_iters):
        A, b = theta[:4].reshape(2, 2), theta[4:]
        r = y - (x @ A.T + b)
        w = irls_weight(np.linalg.norm(r, axis=1), kernel)
        H = np.einsum("n,nki,nkj->ij", w, J, J)
        g = np.einsum("n,nki,nk->i", w, J, r)
        try:
            delta = np.linalg.solve(H, g)
        except np.linalg.LinAlgError as exc:
            raise DegenerateConfigurationError("singular normal equations in flow fit") from exc
        step = delta
        accepted = False
        for _ in range(9):
            trial = theta + step
            c = flow_cost(trial[:4].reshape(2, 2), trial[4:], x, y, kernel)
            if c <= cost:
                accepted = True
                break
            step = step * 0.5
        if not accepted:
            break
        theta, cost = trial, c
        history.append(cost)
        if np.linalg.norm(step) < tol:
            break

    flow = DominantFlow(theta[:4].reshape(2, 2), theta[4:])
    if not flow.plausible:
        raise DegenerateConfigurationError(f"implausible dominant flow (det A = {np.linalg.det(flow.A):.3f})")
    return (flow, history) if return_history else flow


def _split_pairs(pairs):
    if isinstance(pairs, tuple) and len(pairs) == 2 and np.ndim(pairs[0]) == 2:
        x, y = pairs
    else:
        arr = np.asarray(pairs, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[1:] != (2, 2):
            raise InvalidInputError("pairs must be (x, y) arrays or a list of ((x0, y0), (x1, y1))")
        x, y = arr[:, 0], arr[:, 1]
    return np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)


def predict_position(x, flow: DominantFlow, shape=None):
    """Round ``A x + b`` to the nearest pixel, clamped to an image of ``shape=(h, w)``.

    Accepts a single ``(x, y)`` or an ``(N, 2)`` array.
    """
    pts = np.asarray(x, dtype=np.float64)
    single = pts.ndim == 1
    p = np.rint(flow.apply(np.atleast_2d(pts))).astype(np.int64)
    if shape is not None:
        h, w = shape
        p[:, 0] = np.clip(p[:, 0], 0, w - 1)
        p[:, 1] = np.clip(p[:, 1], 0, h - 1)
    return tuple(int(v) for v in p[0]) if single else p
