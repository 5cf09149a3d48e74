"""
A synthetic die seen through its backside
=========================================

Build a touchscreen-controller style floorplan, render it at the 1.67 um/px pitch of a
consumer camera, and look at how off-axis light shades it.
"""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from irisim import OpticalConfig, fig12_like_plan, render, synthesize_layout
from irisim.layout import classify_scale

die = 512 * 1.67
layout = synthesize_layout((die, die), fig12_like_plan(die), texture_seed=1)
print(layout.shape, "reflectance samples at", layout.grid_pitch, "um")

flat = render(layout, OpticalConfig(), seed=0)
raking = render(layout, OpticalConfig(illumination_elevation_deg=40, illumination_azimuth_deg=45), seed=0)

fig, axes = plt.subplots(1, 3, figsize=(12, 4))
axes[0].imshow(layout.reflectance, cmap="gray")
axes[0].set_title("reflectance")
axes[1].imshow(flat.pixels, cmap="gray")
axes[1].set_title("normal incidence")
axes[2].imshow(raking.pixels, cmap="gray")
axes[2].set_title("light from the top right")
for ax in axes:
    ax.axis("off")
fig.tight_layout()
fig.savefig("synthetic_die.png", dpi=120)

# what is resolvable at this pitch
for name, size in (("9-track cell height", 0.8), ("RAM bit", 2.0), ("RAM macro", 200.0)):
    print(f"{name:>20s} {size:6.1f} um -> {classify_scale(size, flat.microns_per_pixel).value}")
