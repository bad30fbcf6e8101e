"""Pinball (weighted asymmetric absolute) loss and the bound-ordering penalty.

All functions accept scalars or numpy arrays and broadcast.
"""

from __future__ import annotations

from enum import Enum

import numpy as np


class OrderingSide(str, Enum):
    LOWER = "lower_bound"
    UPPER = "upper_bound"


def check_alpha(alpha: float) -> float:
    alpha = float(alpha)
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"quantile level must lie in (0, 1), got {alpha}")
    return alpha


def pinball(y, yhat, alpha):
    """``(1 - alpha)|y - yhat|`` when ``y < yhat``, else ``alpha |y - yhat|``."""
    r = np.asarray(y, dtype=float) - np.asarray(yhat, dtype=float)
    out = np.where(r < 0, (alpha - 1.0) * r, alpha * r)
    return out[()] if out.ndim == 0 else out


def pinball_grad(y, yhat, alpha):
    """Derivative of :func:`pinball` with respect to ``yhat``.

    At ``y == yhat`` returns ``-alpha`` (the tie belongs to the ``y >= yhat`` branch).
    """
    r = np.asarray(y, dtype=float) - np.asarray(yhat, dtype=float)
    out = np.where(r < 0, 1.0 - alpha, -alpha)
    return out[()] if out.ndim == 0 else out


def _violation(bound, reference, side):
    bound = np.asarray(bound, dtype=float)
    reference = np.asarray(reference, dtype=float)
    if OrderingSide(side) is OrderingSide.UPPER:
        return reference - bound
    return bound - reference


def ordering_penalty(bound, reference, side, lam):
    """Hinge penalty ``lam * max(0, violation)``; zero when the bound is on its side.

    For an upper bound the violation is ``reference - bound``; for a lower
    bound it is ``bound - reference``.
    """
    if lam < 0:
        raise ValueError(f"penalty weight must be >= 0, got {lam}")
    out = lam * np.maximum(_violation(bound, reference, side), 0.0)
    return out[()] if np.ndim(out) == 0 else out


def ordering_penalty_grad(bound, reference, side, lam):
    """Subgradient of :func:`ordering_penalty` w.r.t. ``bound`` (0 at the hinge)."""
    active = _violation(bound, reference, side) > 0
    sign = -1.0 if OrderingSide(side) is OrderingSide.UPPER else 1.0
    out = np.where(active, sign * lam, 0.0)
    return out[()] if np.ndim(out) == 0 else out


def bound_loss(y, yhat, alpha, reference=None, side=None, lam=0.0):
    """Pinball loss plus the ordering penalty of ``yhat`` against ``reference``."""
    loss = pinball(y, yhat, alpha)
    if reference is None or lam == 0:
        return loss
    return loss + ordering_penalty(yhat, reference, side, lam)


def bound_loss_grad(y, yhat, alpha, reference=None, side=None, lam=0.0):
    grad = pinball_grad(y, yhat, alpha)
    if reference is None or lam == 0:
        return grad
    return grad + ordering_penalty_grad(yhat, reference, side, lam)
