"""Estimate an object's 6D motion from 2D point tracks.

Tracks are lifted to 3D with frame-0 depth, then every later frame is solved
with RANSAC PnP. In the ``sweep`` task almost all tracks vanish for a few
frames; those frames cannot be solved and keep the previous pose, flagged as
carried. A short moving average finally removes frame-to-frame jitter.
"""

import numpy as np

from vidimitate.bench import corrupt_tracks, rms_jitter
from vidimitate.execsim import gen_synthetic_task
from vidimitate.geom3d import compose, rotation_angle
from vidimitate.trackfit import smooth_trajectory, track_trajectory

task = gen_synthetic_task("sweep", seed=5)
K = task.K
tracks = corrupt_tracks(task.tracks, 0.25, seed=1, width=K.width, height=K.height)

res = track_trajectory(tracks, task.depth0, K)
a, b = task.occlusion_window
print(f"{tracks.track_count} tracks over {tracks.frame_count} frames, 25% of observations corrupted")
print(f"occlusion window frames {a}..{b - 1}; carried frames: {np.flatnonzero(res.carried).tolist()}")

# the estimate is motion relative to frame 0; rebuild absolute poses to compare
O0 = task.trajectory[0]
errs = []
for f in range(len(res.trajectory)):
    if res.carried[f]:
        continue
    est = compose(res.trajectory[f], O0)
    truth = task.trajectory[f]
    errs.append((np.linalg.norm(est.translation - truth.translation), rotation_angle(est.rotation, truth.rotation)))
errs = np.array(errs)
print(f"solved frames: worst error {errs[:, 0].max() * 1000:.3f} mm / {errs[:, 1].max():.3f} deg")

smooth = smooth_trajectory(res.trajectory, window=5)
raw_j, sm_j = rms_jitter(res.trajectory), rms_jitter(smooth)
print(f"jitter raw    {raw_j.translational * 1000:.3f} mm / {raw_j.rotational:.3f} deg")
print(f"jitter window {sm_j.translational * 1000:.3f} mm / {sm_j.rotational:.3f} deg")
