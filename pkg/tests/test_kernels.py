import os
import subprocess
import sys

import numpy as np
import pytest

from thermogate import _sg_py, kernels
from thermogate.operators import commutator_superop, random_hermitian
from thermogate.propagator import chebyshev_points, chebyshev_taylor_matrix


def test_python_backend_always_available():
    assert kernels.get("python") is _sg_py
    with pytest.raises(ValueError):
        kernels.get("fortran")


def test_env_forces_fallback():
    code = "from thermogate import kernels; print(kernels.default_backend())"
    env = dict(os.environ, THERMOGATE_KERNELS="python")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


@pytest.mark.skipif("cython" not in kernels.AVAILABLE, reason="compiled kernels not built")
def test_step_kernels_agree(rng):
    m, k, dt = 7, 3, 0.1
    l0 = commutator_superop(random_hermitian(3, rng)) - 0.01 * np.eye(9)
    dl = np.stack([0.01 * j * commutator_superop(random_hermitian(3, rng)) for j in range(m)]).astype(complex)
    lam = np.eye(9, dtype=complex)
    guess = np.broadcast_to(lam, (m, 9, 9)).copy()
    args = (np.ascontiguousarray(l0, complex), dl, lam, guess, chebyshev_taylor_matrix(m, dt),
            chebyshev_points(m, dt), dt, k, 1e-12, 30)
    a = _sg_py.sg_step(*args)
    b = kernels.get("cython").sg_step(*args)
    assert np.max(np.abs(a[0] - b[0])) <= 1e-13
    assert np.max(np.abs(a[2] - b[2])) <= 1e-13
