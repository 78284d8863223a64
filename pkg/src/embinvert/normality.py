"""Omnibus normality test combining normalized skewness and kurtosis.

The two moment statistics are each transformed so that their null
distribution is approximately standard normal; the sum of squares is then
chi-square with 2 degrees of freedom, whose upper tail has the closed form
exp(-k2/2).  Used to screen generator latents for Gaussianity before any
expensive generation work.

Validity floors (n >= 8 for skewness, n >= 20 for kurtosis) follow the
published transforms; below them the functions raise instead of
approximating.
"""
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateSample, SampleTooSmall

_SKEW_MIN_N = 8
_KURT_MIN_N = 20


@dataclass(frozen=True)
class NormalityResult:
    z_skew: float
    z_kurt: float
    k2: float
    p_value: float


def _prepare(sample, min_n: int, op: str):
    x = np.asarray(sample, dtype=np.float64).reshape(-1)
    n = x.size
    if n < min_n:
        raise SampleTooSmall(f"{op} requires n >= {min_n}, got n = {n}")
    d = x - x.mean()
    m2 = float(np.mean(d * d))
    if m2 == 0.0:
        raise DegenerateSample(f"{op} undefined for zero-variance sample")
    return n, d, m2


def skewness_transform(sample) -> float:
    """Normalized sample skewness; approximately N(0,1) under the null."""
    n, d, m2 = _prepare(sample, _SKEW_MIN_N, "skewness_transform")
    m3 = float(np.mean(d * d * d))
    g1 = m3 / m2 ** 1.5
    nf = float(n)
    y = g1 * np.sqrt((nf + 1.0) * (nf + 3.0) / (6.0 * (nf - 2.0)))
    beta2 = (
        3.0 * (nf * nf + 27.0 * nf - 70.0) * (nf + 1.0) * (nf + 3.0)
        / ((nf - 2.0) * (nf + 5.0) * (nf + 7.0) * (nf + 9.0))
    )
    w2 = -1.0 + np.sqrt(2.0 * (beta2 - 1.0))
    delta = 1.0 / np.sqrt(0.5 * np.log(w2))
    alpha = np.sqrt(2.0 / (w2 - 1.0))
    return float(delta * np.arcsinh(y / alpha))


def kurtosis_transform(sample) -> float:
    """Normalized sample kurtosis; approximately N(0,1) under the null."""
    n, d, m2 = _prepare(sample, _KURT_MIN_N, "kurtosis_transform")
    m4 = float(np.mean(d ** 4))
    b2 = m4 / (m2 * m2)
    nf = float(n)
    mean_b2 = 3.0 * (nf - 1.0) / (nf + 1.0)
    var_b2 = (
        24.0 * nf * (nf - 2.0) * (nf - 3.0)
        / ((nf + 1.0) ** 2 * (nf + 3.0) * (nf + 5.0))
    )
    x = (b2 - mean_b2) / np.sqrt(var_b2)
    sqrt_beta1 = (
        6.0 * (nf * nf - 5.0 * nf + 2.0) / ((nf + 7.0) * (nf + 9.0))
        * np.sqrt(6.0 * (nf + 3.0) * (nf + 5.0) / (nf * (nf - 2.0) * (nf - 3.0)))
    )
    a = 6.0 + 8.0 / sqrt_beta1 * (2.0 / sqrt_beta1 + np.sqrt(1.0 + 4.0 / sqrt_beta1 ** 2))
    denom = 1.0 + x * np.sqrt(2.0 / (a - 4.0))
    if denom == 0.0:
        raise DegenerateSample("kurtosis transform denominator collapsed to zero")
    term = np.sign(denom) * np.cbrt((1.0 - 2.0 / a) / abs(denom))
    return float(((1.0 - 2.0 / (9.0 * a)) - term) / np.sqrt(2.0 / (9.0 * a)))


def k2_test(sample) -> NormalityResult:
    """Run the combined test on a flattened sample.

    The latent code is treated as one 1-D sample; callers that want
    per-channel screening can slice before calling.
    """
    z_skew = skewness_transform(sample)
    z_kurt = kurtosis_transform(sample)
    k2 = z_skew * z_skew + z_kurt * z_kurt
    # Chi-square(2) survival function, exact closed form.
    p = float(np.exp(-0.5 * k2))
    return NormalityResult(z_skew=z_skew, z_kurt=z_kurt, k2=k2, p_value=p)
