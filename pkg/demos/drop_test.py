"""Physics sanity in three scenes: a ballistic drop, a passive landing, and
a short standing push-recovery under the friction cone.
"""

import numpy as np

from quadtorque import load_experiment
from quadtorque.physics import (ArticulatedModel, SimState, apply_push,
                                contact_point_positions, step_batch)
from quadtorque.terrain import TerrainBatch

exp = load_experiment("builtin:quadruped_flat")
model = ArticulatedModel.from_robot(exp.robot)
terrain = TerrainBatch.sample(exp.terrain, 1)

# 1) free fall for one second: z should drop by g t^2 / 2 = 4.905 m
st = SimState.zeros(1)
st.joint_pos[:] = exp.nominal_pose.vector()
st.base_pos[:, 2] = 100.0
s = st
for _ in range(500):
    s, rep, _ = step_batch(model, s, np.zeros((1, 12)), None, 1.0, exp.sim)
print(f"ballistic: dropped {100.0 - s.base_pos[0, 2]:.3f} m (expect 4.905)")

# 2) release the robot just above the ground with zero torques: it lands,
# collapses (nothing actuates it), and comes to rest in contact
st = SimState.zeros(1)
st.joint_pos[:] = exp.nominal_pose.vector()
cp = contact_point_positions(model, st)
st.base_pos[:, 2] = -cp[0, :4, 2].min() + 0.05
s = st
for k in range(1500):
    s, rep, _ = step_batch(model, s, np.zeros((1, 12)), terrain, 1.0, exp.sim)
print(f"passive landing: base z {s.base_pos[0, 2]:+.3f} m, "
      f"feet down {s.foot_contact[0].sum()}, knees down {s.knee_contact[0].sum()}, "
      f"speed {np.linalg.norm(s.base_lin_vel[0]):.4f} m/s")
print(f"normal forces {np.round(rep.foot_normal[0], 1)} N "
      f"(weight {model.masses.sum() * exp.sim.gravity:.1f} N, shared with knees)")

# 3) a push overwrites the base x-y velocity instantaneously
pushed = apply_push(s, np.array([[1.0, -1.0]]))
print(f"push: velocity {s.base_lin_vel[0][:2].round(3)} -> "
      f"{pushed.base_lin_vel[0][:2].round(3)} (z untouched: "
      f"{pushed.base_lin_vel[0][2] == s.base_lin_vel[0][2]})")
