"""Print the shaped reward for a few hand-built scenes around an ego in lane 2."""
from maneuver_rl.reward import RewardConfig, region, total_reward

cfg = RewardConfig()
scenes = {
    "lead 30 ft ahead": [(0.0, 30.0)],
    "lead 10 ft ahead": [(0.0, 10.0)],
    "alongside, one lane over": [(-10.0, 5.0)],
    "lead at d2": [(0.0, 25.0)],
    "crowded": [(0.0, 10.0), (12.0, 0.0), (0.0, 60.0), (-12.0, -40.0)],
}
ego = (18.0, 0.0)
for name, rel in scenes.items():
    others = [(ego[0] + dx, ego[1] + dy) for dx, dy in rel]
    b = total_reward(ego, ego, others, cfg)
    kinds = ",".join(region(ego[0] - x, ego[1] - y, cfg) for x, y in others)
    print(f"{name:26s} regions={kinds:14s} r_dis={b.r_dis:+9.4f} total={b.total:+9.4f}")
