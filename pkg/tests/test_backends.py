import os
import subprocess
import sys

import numpy as np
import pytest

from proxmcmc import _accel, priors

pytestmark = pytest.mark.skipif(not _accel.HAVE_NUMBA, reason="numba not installed")


@pytest.fixture
def both_backends():
    before = _accel.get_backend()

    def run(fn):
        out = {}
        for name in ("numpy", "numba"):
            _accel.set_backend(name)
            out[name] = fn()
        return out

    yield run
    _accel.set_backend(before)


@pytest.mark.parametrize("shape", [(1, 1), (1, 7), (16, 16), (13, 29)])
def test_tv_agrees(shape, rng, both_backends):
    x = rng.standard_normal(shape) * 10
    r = both_backends(lambda: priors.tv(x))
    assert r["numba"] == pytest.approx(r["numpy"], rel=1e-10, abs=1e-12)


@pytest.mark.parametrize("w", [1e-3, 0.2, 5.0])
def test_prox_tv_agrees(w, rng, both_backends):
    x = rng.uniform(0, 1, (24, 19))
    r = both_backends(lambda: priors.prox_tv_full(x, w))
    a, b = r["numpy"], r["numba"]
    assert a.iterations == b.iterations
    np.testing.assert_allclose(b.u, a.u, atol=1e-10, rtol=0)
    np.testing.assert_allclose(b.dual_h, a.dual_h, atol=1e-10, rtol=0)
    assert b.gap == pytest.approx(a.gap, abs=1e-10)


def test_env_var_selects_numpy():
    code = "import proxmcmc; print(proxmcmc.get_backend())"
    env = dict(os.environ, PROXMCMC_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"
    env["PROXMCMC_DISABLE_NUMBA"] = "0"
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numba"


def test_set_backend_rejects_unknown():
    with pytest.raises(ValueError):
        _accel.set_backend("cuda")
