"""
Absorbing and active phases of random organization
==================================================

64 particles of equal radius sit on the unit sphere in 3-D. At each step
every overlapping pair is kicked apart by an equal and opposite random
displacement; isolated particles stay put. Small particles find a
non-overlapping arrangement quickly; large ones never do.
"""

# %%
from clamp.randorg import RandOrgConfig, run_density_sweep, summarize_sweep

cfg = RandOrgConfig(N=64, D=3, kick_amplitude=0.05, max_steps=20_000)
radii = [0.05, 0.1, 0.15, 0.2, 0.21, 0.23]
rows = run_density_sweep(cfg, radii, seeds=range(8))

# %%
# Runs that hit the step budget count as ``max_steps`` in the mean.
for radius, row in summarize_sweep(rows, cfg.max_steps).items():
    print(f"radius {radius:.2f}: absorbed {row['absorbed_fraction']:4.0%}, "
          f"mean steps {row['mean_steps']:8.0f}, final active fraction {row['mean_final_active_fraction']:.2f}")
