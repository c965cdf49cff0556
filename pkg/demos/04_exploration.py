"""A full exploration episode, headless.

A robot wakes up in a procedurally generated world, scans, finds the
boundary between known-free and unknown space, and drives toward whichever
frontier offers the most information per meter of travel. The run is fully
deterministic given the seed. For comparison the same world is explored by a
largest-frontier baseline that ignores information entirely.
"""

from ssmi.config import config_from_dict
from ssmi.sim import run_episode


def make_config(selector: str):
    return config_from_dict(
        {
            "seed": 4,
            "env": {"profile": "random", "dims": [32, 32], "num_classes": 3},
            "sensor": {
                "num_beams": 48,
                "r_max": 10.0,
                "range_sigma": 0.1,
                "misclass_prob": 0.35,
            },
            "planner": {"selector": selector, "num_beams": 16, "beam_range": 10.0},
            "run": {"max_steps": 40, "explored_stop": 0.9},
        }
    )


for selector in ("ssmi", "frontier"):
    metrics = run_episode(make_config(selector))
    print(f"== selector: {selector} ==")
    print("step  distance  entropy  explored  plan_info")
    for row in metrics.rows:
        print(
            f"{row.step:4d}  {row.distance:8.1f}  {row.entropy:7.1f}  "
            f"{row.explored:8.3f}  {row.plan_mi:9.3f}"
        )
    d90 = metrics.distance_at_explored(0.9)
    print(f"distance to 90% explored: {d90:.1f} m")
    print(f"final per-class precision: "
          + ", ".join(f"{k}: {v:.2f}" for k, v in metrics.precision.items() if v is not None))
    print()

print("the information-driven selector usually gets to 90% in less travel;")
print("the same comparison over 10 seeds backs the acceptance suite")
