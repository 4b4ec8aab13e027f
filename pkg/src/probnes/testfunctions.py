"""Synthetic benchmark functions in their standard published forms.

Each function accepts a point of shape (d,) or a batch of shape (n, d).
Optima are frozen constants; ``evaluate(optimum_point)`` reproduces
``optimum_value`` to within 1e-9.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

SHEKEL_BETA = 0.1 * np.array([1, 2, 2, 4, 4, 6, 3, 7, 5, 5], dtype=float)
SHEKEL_C = np.array(
    [
        [4.0, 1.0, 8.0, 6.0, 3.0, 2.0, 5.0, 8.0, 6.0, 7.0],
        [4.0, 1.0, 8.0, 6.0, 7.0, 9.0, 3.0, 1.0, 2.0, 3.6],
        [4.0, 1.0, 8.0, 6.0, 3.0, 2.0, 5.0, 8.0, 6.0, 7.0],
        [4.0, 1.0, 8.0, 6.0, 7.0, 9.0, 3.0, 1.0, 2.0, 3.6],
    ]
)
# stationary points refined with 40-digit Newton iterations
STYBLINSKI_X = -2.903534027771177
STYBLINSKI_V = -39.166165703771415  # per coordinate
SHEKEL_X = np.array([4.000746868270634, 3.999509480085774, 4.000746868270634, 3.999509480085774])
SHEKEL_V = -10.536443153483528


def _batch(x):
    x = np.asarray(x, dtype=float)
    return x[None, :] if x.ndim == 1 else x, x.ndim == 1


def _wrap(fun):
    def evaluate(x):
        X, single = _batch(x)
        out = fun(X)
        return float(out[0]) if single else out

    return evaluate


@_wrap
def ackley(X, a=20.0, b=0.2, c=2.0 * np.pi):
    d = X.shape[1]
    return -a * np.exp(-b * np.sqrt(np.sum(X**2, axis=1) / d)) - np.exp(np.sum(np.cos(c * X), axis=1) / d) + a + np.e


@_wrap
def levy(X):
    W = 1.0 + 0.25 * (X - 1.0)
    head = np.sin(np.pi * W[:, 0]) ** 2
    mid = np.sum((W[:, :-1] - 1.0) ** 2 * (1.0 + 10.0 * np.sin(np.pi * W[:, :-1] + 1.0) ** 2), axis=1)
    tail = (W[:, -1] - 1.0) ** 2 * (1.0 + np.sin(2.0 * np.pi * W[:, -1]) ** 2)
    return head + mid + tail


@_wrap
def styblinski_tang(X):
    return 0.5 * np.sum(X**4 - 16.0 * X**2 + 5.0 * X, axis=1)


@_wrap
def rastrigin(X, a=10.0):
    return a * X.shape[1] + np.sum(X**2 - a * np.cos(2.0 * np.pi * X), axis=1)


@_wrap
def branin(X):
    x1, x2 = X[:, 0], X[:, 1]
    b, c, r, s, t = 5.1 / (4.0 * np.pi**2), 5.0 / np.pi, 6.0, 10.0, 1.0 / (8.0 * np.pi)
    return (x2 - b * x1**2 + c * x1 - r) ** 2 + s * (1.0 - t) * np.cos(x1) + s


@_wrap
def griewank(X):
    i = np.arange(1, X.shape[1] + 1)
    return np.sum(X**2, axis=1) / 4000.0 - np.prod(np.cos(X / np.sqrt(i)), axis=1) + 1.0


@_wrap
def shekel(X):
    sq = np.sum((X[:, :, None] - SHEKEL_C[None]) ** 2, axis=1)  # (n, 10)
    return -np.sum(1.0 / (sq + SHEKEL_BETA), axis=1)


@_wrap
def three_hump_camel(X):
    x1, x2 = X[:, 0], X[:, 1]
    return 2.0 * x1**2 - 1.05 * x1**4 + x1**6 / 6.0 + x1 * x2 + x2**2


@dataclass(frozen=True)
class TestFunction:
    name: str
    evaluate: Callable
    fixed_dim: int | None
    default_dim: int
    _optimum: Callable

    __test__ = False  # not a pytest class

    def check_dim(self, d: int) -> int:
        d = self.default_dim if d is None else int(d)
        if d < 1 or (self.fixed_dim is not None and d != self.fixed_dim):
            raise ValueError(f"{self.name} does not support dimension {d}")
        return d

    def optimum_point(self, d: int | None = None) -> np.ndarray:
        return self._optimum(self.check_dim(d))[0]

    def optimum_value(self, d: int | None = None) -> float:
        return float(self._optimum(self.check_dim(d))[1])

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        self.check_dim(x.shape[-1])
        return self.evaluate(x)


FUNCTIONS = {
    f.name: f
    for f in (
        TestFunction("ackley", ackley, None, 2, lambda d: (np.zeros(d), 0.0)),
        TestFunction("levy", levy, None, 2, lambda d: (np.ones(d), 0.0)),
        TestFunction(
            "styblinski_tang", styblinski_tang, None, 2, lambda d: (np.full(d, STYBLINSKI_X), STYBLINSKI_V * d)
        ),
        TestFunction("rastrigin", rastrigin, None, 2, lambda d: (np.zeros(d), 0.0)),
        TestFunction("branin", branin, 2, 2, lambda d: (np.array([np.pi, 2.275]), 5.0 / (4.0 * np.pi))),
        TestFunction("griewank", griewank, None, 2, lambda d: (np.zeros(d), 0.0)),
        TestFunction("shekel", shekel, 4, 4, lambda d: (SHEKEL_X.copy(), SHEKEL_V)),
        TestFunction("three_hump_camel", three_hump_camel, 2, 2, lambda d: (np.zeros(d), 0.0)),
    )
}


def get_function(name: str) -> TestFunction:
    key = name.lower().replace("-", "_")
    if key not in FUNCTIONS:
        raise KeyError(f"unknown test function {name!r}; choose from {sorted(FUNCTIONS)}")
    return FUNCTIONS[key]


def evaluate_testfn(name: str, dim: int, x) -> float:
    fn = get_function(name)
    fn.check_dim(dim)
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != dim:
        raise ValueError(f"point has dimension {x.shape[-1]}, expected {dim}")
    return fn.evaluate(x)
