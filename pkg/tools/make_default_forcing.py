"""Regenerate src/dynemu/data/forcing_default.csv.

Synthetic daily forcing: wet days with probability 0.3 and exponentially
distributed depths (mean 10 mm), potential evapotranspiration following an
annual sine between 1 and 4 mm/d.
"""
from pathlib import Path

import numpy as np

SEED = 42
DAYS = 365

rng = np.random.default_rng(SEED)
wet = rng.random(DAYS) < 0.3
rain = np.where(wet, rng.exponential(10.0, DAYS), 0.0)
pet = 2.5 + 1.5 * np.sin(2 * np.pi * (np.arange(DAYS) - 80) / 365)

out = Path(__file__).resolve().parents[1] / "src" / "dynemu" / "data" / "forcing_default.csv"
with open(out, "w", newline="\n") as fh:
    fh.write("t,i_rain,i_pet\n")
    for t, r, e in zip(range(DAYS), rain, pet):
        fh.write(f"{float(t)!r},{round(float(r), 3)!r},{round(float(e), 3)!r}\n")
print(f"wrote {out}")
