"""
How much light makes it through the silicon
===========================================

Walk the signal budget across wavelength and substrate thickness, and see
why 1000-1100 nm is the useful window.
"""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from irisim import OpticalConfig, diffraction_limit, signal_budget

# the classic operating point: 300 um of silicon, 1000 nm light
b = signal_budget(OpticalConfig(wavelength_nm=1000, silicon_thickness_um=300))
print(f"1000 nm: transmission {b.transmission:.3f}, sensor {b.sensitivity:.3f}")
print(f"         {b.reduction_factor:.0f}x less signal, expose {b.suggested_exposure:.1f} s instead of 33 ms")

# sweep wavelength for a few thicknesses
waves = np.linspace(950, 1150, 201)
fig, ax = plt.subplots(figsize=(6, 4))
for t in (100, 300, 500):
    red = [signal_budget(OpticalConfig(wavelength_nm=w, silicon_thickness_um=t)).reduction_factor for w in waves]
    ax.semilogy(waves, red, label=f"{t} um")
ax.set_xlabel("wavelength (nm)")
ax.set_ylabel("signal reduction (x)")
ax.legend()
fig.tight_layout()
fig.savefig("signal_budget.png", dpi=120)

# longer wavelengths pass more light but blur more
for w in (1000, 1070, 1100):
    print(f"{w} nm resolves {diffraction_limit(w):.2f} um at NA 0.58")
