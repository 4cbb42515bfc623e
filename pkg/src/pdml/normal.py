"""Standard normal CDF and quantile.

The CDF goes through the error function; the quantile uses a rational
approximation refined by Newton steps on the CDF, accurate to well below
1e-10 across the usable range. This is the only special function the
package needs.
"""

from __future__ import annotations

import math

from pdml.errors import ContractError

_SQRT2 = math.sqrt(2.0)
_SQRT2PI = math.sqrt(2.0 * math.pi)


def normal_cdf(x: float) -> float:
    return 0.5 * math.erfc(-x / _SQRT2)


def normal_pdf(x: float) -> float:
    return math.exp(-0.5 * x * x) / _SQRT2PI


def _quantile_initial(q: float) -> float:
    # Beasley-Springer/Moro style rational starting point.
    a = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
         1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
    b = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
         6.680131188771972e01, -1.328068155288572e01)
    c = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
         -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
    d = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
         3.754408661907416e00)
    p_low = 0.02425
    if q < p_low:
        u = math.sqrt(-2.0 * math.log(q))
        return (((((c[0] * u + c[1]) * u + c[2]) * u + c[3]) * u + c[4]) * u + c[5]) / (
            (((d[0] * u + d[1]) * u + d[2]) * u + d[3]) * u + 1.0)
    if q > 1.0 - p_low:
        u = math.sqrt(-2.0 * math.log(1.0 - q))
        return -(((((c[0] * u + c[1]) * u + c[2]) * u + c[3]) * u + c[4]) * u + c[5]) / (
            (((d[0] * u + d[1]) * u + d[2]) * u + d[3]) * u + 1.0)
    u = q - 0.5
    r = u * u
    return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * u / (
        ((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0)


def _lower_quantile(q: float) -> float:
    # q <= 0.5, so the solution is nonpositive and the CDF evaluates through
    # erfc of a nonnegative argument at full relative precision.
    x = _quantile_initial(q)
    for _ in range(3):
        err = normal_cdf(x) - q
        density = normal_pdf(x)
        if density == 0.0:
            break
        step = err / density
        # Halley correction keeps the tails stable.
        x -= step / (1.0 + 0.5 * x * step)
    return x


def normal_quantile(q: float) -> float:
    """Inverse standard normal CDF on (0, 1)."""
    if not 0.0 < q < 1.0:
        raise ContractError("quantile argument must lie strictly in (0, 1)")
    if q > 0.5:
        # 1 - q is exact for q in [0.5, 1), so reflection loses nothing.
        return -_lower_quantile(1.0 - q)
    return _lower_quantile(q)


def upper_quantile(alpha_half: float) -> float:
    """z with P(Z > z) = alpha_half."""
    return normal_quantile(1.0 - alpha_half)
