"""
How much self-test state makes a bypass visible
===============================================

A bypass trojan has to fake every bit of accumulated test state, and each
faked bit costs a flip-flop plus a few gates. Find the smallest state that
makes that logic big enough to show up in an IR image.
"""

from irisim import load_nodes, required_state_bits

for name, node in sorted(load_nodes().items(), key=lambda kv: -kv[1].feature_nm):
    b = required_state_bits(node, 1.67)
    print(f"{name:>5s}: {b.per_bit_area:5.2f} um^2/bit -> {b.required_bits:2d} bits "
          f"(bypass {b.bypass_area_at_required:.1f} um^2 vs {b.min_detectable_area:.1f} um^2 visible)")

print()
print(required_state_bits(load_nodes()["28nm"], 1.67).table())

# a finer camera needs less state; a stricter pixel criterion needs more
for mpp in (0.5, 1.0, 1.67, 2.5):
    print(f"{mpp:4.2f} um/px -> {required_state_bits(load_nodes()['28nm'], mpp).required_bits} bits")
