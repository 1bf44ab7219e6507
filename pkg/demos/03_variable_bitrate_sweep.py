"""
One model, a continuum of bitrates
==================================

Six gain-vector pairs per network and frame type are trained, one per
rate constraint. Because the vectors are interpolated geometrically,
any fractional rate index between 1 and 6 is a valid operating point:
a single checkpoint yields a continuous rate-distortion curve.
"""

from ccvc import Model, NetworkConfig, sweep_rates
from ccvc.evaluate import make_eval_pair

model = Model(NetworkConfig(f=4, depth=3), seed=1)
smooth, _ = make_eval_pair(crop=64, n_frames=5)

# Integer indices are the trained points; the half steps in between
# exercise the interpolation.
points = sweep_rates(smooth, model, [1.0, 1.5, 2.0, 2.5, 3.0], gop_size=4,
                     intra_period=32, sequence_id="smooth")

print(f"{'r':>4} {'Mbit/s':>8} {'ms-ssim':>8} {'dB':>6}")
for p in points:
    print(f"{p.r:4.1f} {p.rate_mbps:8.3f} {p.ms_ssim:8.4f} {p.ms_ssim_db:6.2f}")

# On an untrained model the ordering is not meaningful; on a trained
# checkpoint (see demo 02) rate decreases with r and the fractional
# points land between their integer neighbors.
