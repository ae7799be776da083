"""Small numerical kernel: normal CDF/quantile, step integration, RNG streams, bisection."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import NumericalError

__all__ = [
    "RngStream",
    "std_normal_cdf",
    "std_normal_quantile",
    "relative_efficiency",
    "integrate_step",
    "find_root",
    "Z_975",
]

_SQRT2 = math.sqrt(2.0)
_SQRT2PI = math.sqrt(2.0 * math.pi)


def std_normal_cdf(x: float) -> float:
    """Standard normal CDF evaluated through ``erfc`` (no cancellation in either tail)."""
    return 0.5 * math.erfc(-x / _SQRT2)


# Wichura (1988), algorithm AS 241 (PPND16).
_A = (
    3.387132872796366608, 133.14166789178437745, 1971.5909503065514427,
    13731.693765509461125, 45921.953931549871457, 67265.770927008700853,
    33430.575583588128105, 2509.0809287301226727,
)
_B = (
    1.0, 42.313330701600911252, 687.1870074920579083, 5394.1960214247511077,
    21213.794301586595867, 39307.89580009271061, 28729.085735721942674,
    5226.495278852545925,
)
_C = (
    1.42343711074968357734, 4.6303378461565452959, 5.7694972214606914055,
    3.64784832476320460504, 1.27045825245236838258, 0.24178072517745061177,
    0.0227238449892691845833, 7.7454501427834140764e-4,
)
_D = (
    1.0, 2.05319162663775882187, 1.6763848301838038494, 0.68976733498510000455,
    0.14810397642748007459, 0.0151986665636164571966, 5.475938084995344946e-4,
    1.05075007164441684324e-9,
)
_E = (
    6.6579046435011037772, 5.4637849111641143699, 1.7848265399172913358,
    0.29656057182850489123, 0.026532189526576123093, 0.0012426609473880784386,
    2.71155556874348757815e-5, 2.01033439929228813265e-7,
)
_F = (
    1.0, 0.59983220655588793769, 0.13692988092273580531, 0.0148753612908506148525,
    7.868691311456132591e-4, 1.8463183175100546818e-5, 1.4215117583164458887e-7,
    2.04426310338993978564e-15,
)


def _poly(coefs: tuple[float, ...], x: float) -> float:
    acc = 0.0
    for c in reversed(coefs):
        acc = acc * x + c
    return acc


def std_normal_quantile(p: float) -> float:
    """Inverse of :func:`std_normal_cdf`.

    Rational approximation (AS 241) followed by one Newton step against
    :func:`std_normal_cdf`.

    Raises
    ------
    ValueError
        If ``p`` is not strictly inside (0, 1).
    """
    if not (0.0 < p < 1.0):
        raise ValueError(f"quantile requires 0 < p < 1, got {p!r}")
    q = p - 0.5
    if abs(q) <= 0.425:
        r = 0.180625 - q * q
        x = q * _poly(_A, r) / _poly(_B, r)
    else:
        r = p if q < 0 else 1.0 - p
        r = math.sqrt(-math.log(r))
        if r <= 5.0:
            r -= 1.6
            x = _poly(_C, r) / _poly(_D, r)
        else:
            r -= 5.0
            x = _poly(_E, r) / _poly(_F, r)
        if q < 0:
            x = -x
    # Newton polish; in the tails work with the smaller tail probability.
    dens = math.exp(-0.5 * x * x) / _SQRT2PI
    if dens > 0.0:
        if x > 0:
            err = (1.0 - p) - std_normal_cdf(-x)
            x -= err / dens
        else:
            err = std_normal_cdf(x) - p
            x -= err / dens
    return x


Z_975 = 1.959964


def relative_efficiency(power_ref: float, power_alt: float, alpha_one_sided: float) -> float:
    """Sample-size inflation needed for ``power_alt`` to match ``power_ref``.

    Both powers are converted to normal deviates and combined with the
    one-sided critical value; the ratio of the sums is squared.
    """
    for name, v in (("power_ref", power_ref), ("power_alt", power_alt),
                    ("alpha_one_sided", alpha_one_sided)):
        if not (0.0 < v < 1.0):
            raise ValueError(f"{name} must lie in (0, 1), got {v!r}")
    z_alpha = std_normal_quantile(1.0 - alpha_one_sided)
    num = z_alpha + std_normal_quantile(power_ref)
    den = z_alpha + std_normal_quantile(power_alt)
    if den <= 0.0:
        raise ValueError("alternative power too low for normal approximation")
    return (num / den) ** 2


def integrate_step(curve, a: float, b: float) -> float:
    """Exact area under a right-continuous step curve on ``[a, b]``.

    ``curve`` needs ``times`` (jump locations), ``survival`` (value from each
    jump onward) and ``max_time`` (end of support). The curve equals 1 before
    its first jump.
    """
    if a < 0 or b < a:
        raise ValueError(f"need 0 <= a <= b, got a={a!r}, b={b!r}")
    if b > curve.max_time:
        raise ValueError(f"upper limit {b!r} beyond curve support {curve.max_time!r}")
    if a == b:
        return 0.0
    starts = np.concatenate(([0.0], curve.times))
    ends = np.concatenate((curve.times, [np.inf]))
    values = np.concatenate(([1.0], curve.survival))
    width = np.clip(np.minimum(ends, b) - np.maximum(starts, a), 0.0, None)
    return float(np.dot(values, width))


def find_root(f: Callable[[float], float], lo: float, hi: float, tol: float = 1e-8,
              max_iter: int = 200) -> float:
    """Bisection on a bracketing interval.

    Stops once ``|f(x)| <= tol`` or the bracket is narrower than ``tol``.
    """
    flo, fhi = f(lo), f(hi)
    if flo == 0.0:
        return lo
    if fhi == 0.0:
        return hi
    if (flo > 0) == (fhi > 0):
        raise NumericalError(f"no sign change on [{lo}, {hi}]: f(lo)={flo:.6g}, f(hi)={fhi:.6g}")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if abs(fm) <= tol or (hi - lo) <= tol:
            return mid
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class RngStream:
    """Reproducible random stream identified by ``(seed, stream_id)``.

    Streams are derived with :class:`numpy.random.SeedSequence` spawn keys, so
    stream ``i`` of a given seed is the same on every platform and independent
    of how many other streams exist.
    """

    seed: int
    stream_id: int = 0

    def __post_init__(self):
        if not (0 <= self.seed < 2**64) or not (0 <= self.stream_id < 2**64):
            raise ValueError("seed and stream_id must be unsigned 64-bit integers")

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id,))
        return np.random.Generator(np.random.PCG64(ss))
