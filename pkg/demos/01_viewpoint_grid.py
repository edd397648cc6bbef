"""
The viewpoint grid
==================

Each simulated view is a tilt (how obliquely the camera looks at the
plane), a longitude (which direction it leans) and a zoom. Tilts grow
geometrically, longitudes get denser as the tilt grows, and the zoom
rises with the tilt index.
"""
import math

import numpy as np

from xaffine.geometry import GridConfig, build_param_grid, latitude_from_tilt, simulation_matrix

grid = build_param_grid()
print(f"{len(grid)} simulated views at the defaults")

# one row per tilt: the latitude it stands for, its zoom and how many longitudes
for t in sorted({p.tilt for p in grid}):
    views = [p for p in grid if p.tilt == t]
    deg = math.degrees(latitude_from_tilt(t))
    print(f"t={t:5.2f}  latitude={deg:5.1f} deg  zoom={views[0].scale:.1f}  longitudes={len(views)}")

# a tilt compresses one axis; the determinant is zoom^2 / t
p = grid[-1]
m = simulation_matrix(p)
print("\nlast entry:", p)
print(np.round(m, 4))
print("det =", round(np.linalg.det(m), 6), "=", round(p.scale**2 / p.tilt, 6))

# without the zoom series every view stays at scale 1
flat = build_param_grid(GridConfig(delta_s=0.0))
print("\nscales with delta_s = 0:", sorted({p.scale for p in flat}))
