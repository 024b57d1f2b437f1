"""Turn an object trajectory into a robot plan and execute it closed loop.

The end-effector plan is the object trajectory composed with the fixed grasp
offset. While executing, the observed object pose is compared against the
plan. Halfway through, the object slips 4 cm in the gripper: the deviation
exceeds the 3 cm threshold, the executor returns to the previous waypoint,
recaptures the grasp and carries on.
"""

from vidimitate.execsim import DeviationPolicy, KinematicSim, Perturbation, deviation, execute, gen_synthetic_task
from vidimitate.retarget import retarget_trajectory

task = gen_synthetic_task("lift", seed=7)
plan = retarget_trajectory(task.trajectory, task.grasp)
policy = DeviationPolicy()

for label, perts in [("no disturbance", []), ("1 cm slip", [Perturbation.slip(0.01, waypoint=20)]),
                     ("4 cm slip", [Perturbation.slip(0.04, waypoint=20)])]:
    sim = KinematicSim(task.ee_at_grasp, task.grasp.offset)
    log = execute(plan, task.grasp, policy, sim, perts)
    m, d = deviation(log.final_observed, task.trajectory[-1])
    print(f"{label:15s} ticks={len(log.records):4d} backtracks={log.backtracks} "
          f"final error {m * 1000:.2f} mm / {d:.2f} deg")
    for r in log.records:
        if r.event == "backtrack":
            print(f"    backtrack at tick {r.tick}: waypoint {r.from_waypoint} -> {r.waypoint} "
                  f"(deviation {r.dev_m * 100:.1f} cm)")
