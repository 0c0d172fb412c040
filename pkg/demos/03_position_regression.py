"""From 10 class scores to a continuous prey bearing.

The angle decode reads the left/center/right masses of the softmax as a
2D vector and takes its angle. That interpolation only works while the
probabilities stay graded: a fully confident classifier collapses onto
three representative angles. The demo walks a prey across the field of
view with soft scores, ruins them by sharpening, then repairs the decode
with the fitted softmax temperature.
"""

import math

import numpy as np

from preynet.steering import analog_position, bearing_error_deg, fit_temperature


def to_bearing(alpha_deg):
    # inverse of the label mapping; positive bearing = prey to the left
    return (alpha_deg - 90.0) * 0.45


def soft_row(bearing_deg):
    # region masses laid out so the decode angle is exact (see tests)
    alpha = math.radians(90.0 + bearing_deg / 0.45)
    m = 0.4
    p_c = m * math.sin(alpha)
    p_r = m * max(math.cos(alpha), 0.0)
    p_l = m * max(-math.cos(alpha), 0.0)
    rest = 1.0 - (p_c + p_r + p_l)
    o = np.zeros(10)
    o[[0, 1, 2]] = (p_l + rest / 2.0) / 3.0
    o[[3, 4, 5]] = p_c / 3.0
    o[[6, 7, 8]] = (p_r + rest / 2.0) / 3.0
    return o


bearings = np.linspace(-36.0, 36.0, 9)
rows = np.array([soft_row(b) for b in bearings])
sharp = rows ** 8.0
sharp /= sharp.sum(axis=1, keepdims=True)

t = fit_temperature(sharp, bearings, grid=np.geomspace(1, 40, 33))
print(f"fitted temperature on the sharpened scores: {t:.2f}\n")

print("true bearing | soft decode | sharpened | sharpened + temperature")
for b, row, srow in zip(bearings, rows, sharp):
    fixed = srow ** (1.0 / t)
    fixed /= fixed.sum()
    d_soft = to_bearing(analog_position(row).alpha_deg)
    d_sharp = to_bearing(analog_position(srow).alpha_deg)
    d_fixed = to_bearing(analog_position(fixed).alpha_deg)
    print(f"   {b:+7.1f}   |   {d_soft:+7.2f}  |  {d_sharp:+7.2f}  |  "
          f"{d_fixed:+7.2f}")

for name, batch in (("soft", rows), ("sharpened", sharp)):
    err = np.mean([bearing_error_deg(r, b) for r, b in zip(batch, bearings)])
    print(f"\nmean deviation, {name}: {err:.2f} deg", end="")
fixed = sharp ** (1.0 / t)
fixed /= fixed.sum(axis=1, keepdims=True)
err = np.mean([bearing_error_deg(r, b) for r, b in zip(fixed, bearings)])
print(f"\nmean deviation, repaired: {err:.2f} deg")
