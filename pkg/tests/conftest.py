import numpy as np

from relit.ops import pin_compute_threads
from relit.scene import Camera

# bit-exactness checks across the suite assume one compute thread
pin_compute_threads()


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def random_camera(rng: np.random.Generator, width: int = 64, height: int = 64) -> Camera:
    return Camera(
        fx=float(rng.uniform(20, 120)),
        fy=float(rng.uniform(20, 120)),
        cx=float(rng.uniform(0.3, 0.7) * width),
        cy=float(rng.uniform(0.3, 0.7) * height),
        rotation=random_rotation(rng),
        translation=rng.normal(scale=2.0, size=3),
        width=width,
        height=height,
    )
