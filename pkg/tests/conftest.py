import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", deadline=None, max_examples=25, suppress_health_check=[HealthCheck.too_slow], derandomize=True
)
settings.load_profile("default")


def random_bandlimited(rng, d, n, ncomp, kcut=None, nt=1):
    """Real random samples with spatial modes |k_i| <= kcut (default n/4)."""
    kcut = n // 4 if kcut is None else kcut
    shape = (ncomp, nt) + (n,) * d
    hat = rng.normal(size=shape) + 1j * rng.normal(size=shape)
    k1 = np.fft.fftfreq(n, 1.0 / n)
    mask = np.ones((n,) * d, dtype=bool)
    for ax in range(d):
        s = [1] * d
        s[ax] = n
        mask = mask & (np.abs(k1.reshape(s)) <= kcut)
    hat = hat * mask
    return np.real(np.fft.ifftn(hat, axes=tuple(range(2, 2 + d))))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
