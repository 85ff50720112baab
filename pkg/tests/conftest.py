import json
from pathlib import Path

import numpy as np
import pytest

from geometry import HoleBoard, Peg, dilate_section, make_cross_section

SCENES = Path(__file__).resolve().parent.parent / "scenes"
MM = 1e-3


def rectangle_section(width_mm: float = 30.0, height_mm: float = 20.0):
    w, h = width_mm * MM / 2, height_mm * MM / 2
    return make_cross_section([[-w, -h], [w, -h], [w, h], [-w, h]])


@pytest.fixture
def scenes_dir() -> Path:
    return SCENES


@pytest.fixture
def rectangle_peg() -> Peg:
    return Peg(rectangle_section(), 0.04)


@pytest.fixture
def circle_peg() -> Peg:
    return Peg(make_cross_section(radius=0.01), 0.04)


@pytest.fixture
def rectangle_board(rectangle_peg) -> HoleBoard:
    return HoleBoard(dilate_section(rectangle_peg.section, 0.25 * MM), np.zeros(2))


@pytest.fixture
def circle_board(circle_peg) -> HoleBoard:
    return HoleBoard(dilate_section(circle_peg.section, 0.25 * MM), np.zeros(2))


@pytest.fixture
def blank_board() -> HoleBoard:
    return HoleBoard(None)


@pytest.fixture
def write_scene(tmp_path):
    """Write a copy of a bundled scene with some fields replaced"""
    def _write(base: str, **changes) -> Path:
        data = json.loads((SCENES / f"{base}.json").read_text())
        for key, value in changes.items():
            if isinstance(value, dict) and isinstance(data.get(key), dict):
                data[key].update(value)
            else:
                data[key] = value
        path = tmp_path / f"{base}_edited.json"
        path.write_text(json.dumps(data))
        return path
    return _write
