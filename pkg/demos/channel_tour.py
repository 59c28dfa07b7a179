"""Draw one indoor channel and look at where its energy lands.

    python demos/channel_tour.py [seed]
"""

import sys

import numpy as np

from clnet.channel import default_spec, generate_channel, kept_energy_ratio, to_angular_delay

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
spec = default_spec(seed)
h = generate_channel(spec)
hp = to_angular_delay(h)

print(f"spatial-frequency channel: {h.shape[0]} subcarriers x {h.shape[1]} antennas")
for c in spec.clusters:
    print(f"  cluster at delay {c.delay:5.2f}, angle {np.degrees(c.aoa):6.1f} deg, gain {c.gain:.2f}")
print(f"energy in the first 32 delay rows: {100 * kept_energy_ratio(hp, 32):.2f}%")

# coarse picture of the kept block: one character per 2x2 cell, darker = more energy
block = np.abs(hp[:32]) ** 2
cells = block.reshape(16, 2, 16, 2).sum(axis=(1, 3))
shades = " .:-=+*#%@"
level = np.clip((np.log10(cells / cells.max() + 1e-12) + 4) / 4, 0, 0.999)
print("\nangular-delay magnitude (rows: delay, columns: angle)")
for row in level:
    print("  " + "".join(shades[int(v * len(shades))] for v in row))
