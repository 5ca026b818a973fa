import numpy as np
import pytest

from moessm import kernels


@pytest.fixture
def numpy_backend():
    """Run the test body under the pure-numpy kernels, then restore."""
    prev = kernels.active_backend()
    kernels.use_backend("numpy")
    yield
    kernels.use_backend(prev)


@pytest.fixture(scope="session", autouse=True)
def warm_kernels():
    # compile (or load from cache) every numba kernel once so no test times
    # JIT work; harmless when numba is unavailable
    if "numba" not in kernels.available_backends():
        return
    mod = kernels.get_backend("numba")
    u = np.ones((2, 2, 2))
    a_dense = np.eye(2) * 0.5
    a_vec = np.full(2, 0.5)
    h0 = np.zeros((2, 2))
    mod.scan_dense_last(a_dense, u, u, h0)
    mod.scan_dense_traj(a_dense, u, u, h0)
    mod.scan_diag_last(a_vec, u, u, h0)
    mod.scan_diag_traj(a_vec, u, u, h0)
    mod.scan_scalar_last(a_vec, u, u, h0)
    mod.scan_scalar_traj(a_vec, u, u, h0)
