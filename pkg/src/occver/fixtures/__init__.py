"""Networks and images shipped with the package.

Regenerate them with ``python3 -m occver.fixtures.build``; generation is
deterministic.
"""
from __future__ import annotations

import os

from ..imageio import load_image
from ..model import load_network

HERE = os.path.dirname(os.path.abspath(__file__))

NETWORKS = ("tiny_const", "tiny_sum", "tiny_quad", "desk_shapes")


def fixture_path(name: str) -> str:
    path = os.path.join(HERE, name)
    if not os.path.exists(path):
        raise FileNotFoundError(f"no fixture named {name!r}")
    return path


def network(name: str):
    return load_network(fixture_path(f"{name}.fnn"))


def image(name: str):
    return load_image(fixture_path(f"{name}.img"))


def desk_images():
    """The ten 8x8 evaluation images for the desk-scale network."""
    return [image(f"shape_{k}") for k in range(10)]
