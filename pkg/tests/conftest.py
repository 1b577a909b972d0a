import pytest

from conceptcil import kernels


@pytest.fixture(params=kernels.available_backends())
def backend(request):
    """Run the test once per built kernel backend."""
    previous = kernels.active_backend()
    kernels.set_backend(request.param)
    yield request.param
    kernels.set_backend(previous)
