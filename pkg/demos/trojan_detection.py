"""
Spotting a modified die
=======================

Inject a small reflectance change into a copy of the layout, re-image it
and compare against the golden image tile by tile.
"""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from irisim import OpticalConfig, compare, confidence_summary, fig12_like_plan, inject_trojan, render, synthesize_layout
from irisim.verify import heatmap

die = 512 * 1.67
golden = synthesize_layout((die, die), fig12_like_plan(die), texture_seed=1)
reference = render(golden, OpticalConfig(), seed=10)

for area in (36.0, 9.0, 0.5):
    suspect = inject_trojan(golden, (260.0, 180.0), area, -0.35)
    sample = render(suspect, OpticalConfig(), seed=11)
    report = compare(reference, sample)
    print(f"{area:5.1f} um^2 -> confidence {report.confidence:.4f}; {confidence_summary(report)}")

suspect = inject_trojan(golden, (260.0, 180.0), 36.0, -0.35)
sample = render(suspect, OpticalConfig(), seed=11)
report = compare(reference, sample)
plt.imsave("trojan_heatmap.png", heatmap(report, sample), cmap="gray")
