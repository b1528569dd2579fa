"""Regenerate tests/data/golden_scalar.bin (run from the repository root).

The case is small enough to check by hand: A = 0, b = 0, C C^T = 1, H = 1,
one design run on the grid (0, 1, 3) with observations (0, 0.5, 1.5).
"""
import sys
from pathlib import Path

import numpy as np

from dynemu import AffineModel, DesignSet, InputTrajectory, MetricSpec, ObservationSet, TimeGrid, condition, save


def golden_emulator():
    model = AffineModel([[0.0]], np.zeros((1, 1, 1)), xi0=[0.0])
    grid = TimeGrid([0.0, 1.0, 3.0])
    design = DesignSet([InputTrajectory([0.0], np.zeros((2, 0)), grid.key)])
    runs = ObservationSet([[[0.0], [0.5], [1.5]]])
    return condition(model, design, runs, MetricSpec((0,), [1.0]), [[1.0]], grid=grid)


if __name__ == "__main__":
    out = Path(sys.argv[1] if len(sys.argv) > 1 else "tests/data/golden_scalar.bin")
    save(golden_emulator(), out, {"purpose": "golden file"})
    print(out, out.stat().st_size, "bytes")
