"""Emulation cost against the number of time points and of design runs.

Each sweep point simulates and conditions its own design (untimed), then
times the emulation step alone. Log-log slopes near 1 are the linear scaling
the mean recursion promises. Takes about two minutes on one core.
"""
from dynemu import pipeline

cfg = pipeline.load_config()
rows, slopes = pipeline.bench(cfg, N_values=[200, 450, 900, 2000], n_values=[20, 50, 100, 200],
                              n_fixed=20, N_fixed=200)
print(" sweep     N     n  stride  emulation [ms]  conditioning [s]")
for r in rows:
    print(f"{r['sweep']:>6} {r['N']:5d} {r['n']:5d} {r['stride']:7d} {1e3 * r['emulation_s']:15.2f} "
          f"{r['conditioning_s']:17.2f}")
print("log-log slope vs N: %.3f, vs n: %.3f" % (slopes["N"], slopes["n"]))
