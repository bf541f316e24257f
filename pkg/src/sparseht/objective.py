"""Decomposable objectives F(theta) = (1/n) sum_i f_i(theta).

A problem is a collection of n component functions over a shared parameter,
each component covering a mini-batch of b samples. Parameters are dense
float64 arrays, either vectors of length d or (d, p) matrices; matrices are
flattened column-major wherever a flat view is needed, so vector-oriented
solver code runs on them unchanged.

Component evaluators must be pure: same (i, theta) in, bit-identical result
out. Solver reproducibility rests on that together with seeded sampling.
Component indices are 0-based throughout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class Problem:
    """Base class: subclasses supply per-component value and gradient.

    Everything generic lives here: input validation, finite checks, and the
    mean reductions for the full objective and gradient. Subclasses may
    override value/gradient with a faster equivalent form as long as it
    agrees with the component means to float accuracy.
    """

    def __init__(self, n, batch_size, shape, truth=None, l2_radius=None):
        if n < 1:
            raise ValueError("need at least one component")
        if batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        self.n_components = int(n)
        self.batch_size = int(batch_size)
        self.shape = tuple(shape)
        if len(self.shape) not in (1, 2):
            raise ValueError(f"parameter shape must be a vector or matrix, got {shape}")
        self.truth = None if truth is None else np.asarray(truth, dtype=np.float64)
        if self.truth is not None and self.truth.shape != self.shape:
            raise ValueError("truth shape does not match parameter shape")
        self.l2_radius = None if l2_radius is None else float(l2_radius)

    # subclass hooks, called with validated inputs
    def _component_value(self, i, theta):
        raise NotImplementedError

    def _component_gradient(self, i, theta):
        raise NotImplementedError

    def _check_theta(self, theta):
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != self.shape:
            raise ValueError(f"parameter shape {theta.shape} does not match {self.shape}")
        return theta

    def _check_index(self, i):
        i = int(i)
        if not 0 <= i < self.n_components:
            raise IndexError(f"component index {i} out of range [0, {self.n_components})")
        return i

    def component_value(self, i, theta):
        i = self._check_index(i)
        v = float(self._component_value(i, self._check_theta(theta)))
        if not np.isfinite(v):
            raise FloatingPointError(f"component {i} value is not finite")
        return v

    def component_gradient(self, i, theta):
        i = self._check_index(i)
        g = self._component_gradient(i, self._check_theta(theta))
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"component {i} gradient is not finite")
        return g

    def value(self, theta):
        theta = self._check_theta(theta)
        acc = 0.0
        # overflow is reported through the explicit raise, not a warning
        with np.errstate(over="ignore", invalid="ignore"):
            for i in range(self.n_components):
                v = float(self._component_value(i, theta))
                if not np.isfinite(v):
                    raise FloatingPointError(f"component {i} value is not finite")
                acc += v
        return acc / self.n_components

    def gradient(self, theta):
        theta = self._check_theta(theta)
        acc = np.zeros(self.shape)
        with np.errstate(over="ignore", invalid="ignore"):
            for i in range(self.n_components):
                g = self._component_gradient(i, theta)
                if not np.all(np.isfinite(g)):
                    raise FloatingPointError(f"component {i} gradient is not finite")
                acc += g
        acc /= self.n_components
        return acc


@dataclass(frozen=True)
class SnapshotState:
    """Snapshot iterate and its full gradient, the anchor of VR updates."""

    snapshot: np.ndarray
    full_gradient_at_snapshot: np.ndarray


def objective_value(problem, theta):
    """F(theta), the mean of the component values."""
    return problem.value(theta)


def component_gradient(problem, i, theta):
    """Gradient of component i at theta, newly allocated."""
    return problem.component_gradient(i, theta)


def full_gradient(problem, theta):
    """Mean of all component gradients at theta."""
    return problem.gradient(theta)


def make_snapshot(problem, theta):
    """Freeze theta and its full gradient into a SnapshotState."""
    theta = problem._check_theta(theta)
    return SnapshotState(theta.copy(), problem.gradient(theta))


def vr_gradient(problem, i, theta, state):
    """Variance-reduced gradient grad f_i(theta) - grad f_i(snapshot) + mu.

    The difference of the two component gradients is formed first, so at
    theta == snapshot the result is exactly the stored mean gradient. With a
    single component the estimator collapses to the full gradient, which is
    grad f_i(theta) itself; that case returns it directly rather than
    routing one quantity through a cancellation of the other two.
    """
    gi = problem.component_gradient(i, theta)
    if problem.n_components == 1:
        return gi
    gs = problem.component_gradient(i, state.snapshot)
    return (gi - gs) + state.full_gradient_at_snapshot
