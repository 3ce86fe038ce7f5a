import numpy as np
import pytest

from hdqkd.optics import GridSpec, OpticalField


@pytest.fixture
def smooth_field():
    """Unit-power random superposition of Gaussians, well confined to the
    window so padded propagation loses no measurable power."""
    grid = GridSpec(128, 128, 10e-6, 810e-9)
    xx = grid.x[:, None]
    yy = grid.y[None, :]
    rng = np.random.default_rng(17)
    amp = np.zeros((128, 128), dtype=complex)
    for _ in range(6):
        cx, cy = rng.uniform(-2e-4, 2e-4, size=2)
        waist = rng.uniform(6e-5, 1.2e-4)
        amp += (
            rng.normal()
            * np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / waist**2)
            * np.exp(1j * rng.uniform(0.0, 2 * np.pi))
        )
    return OpticalField(grid, amp).normalized()


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.linalg.norm(a - b) / np.linalg.norm(b))
