"""Train the decision heads on the single-lead toy world and compare with random play.

Takes about a minute on one core.
"""
import numpy as np

from maneuver_rl.drl import DrlConfig, QPolicy, train_drl
from maneuver_rl.dynamics import ControlTable
from maneuver_rl.env import RandomPolicy
from maneuver_rl.networks import init_encoder
from maneuver_rl.scenarios import single_lead


def score(policy, env):
    near = steps = 0
    totals = []
    for vid in env.episode_vehicles():
        obs, done, total = env.reset(vid), False, 0.0
        while not done:
            res = env.step(policy(obs, env))
            near += res.info["near_collision"]
            total += res.reward.total
            steps += 1
            obs, done = res.observation, res.done
        totals.append(total)
    return near / steps, np.mean(totals)


ds = single_lead()
make = lambda d: d.env(controls=ControlTable(dphi_hard=0.0, dphi_soft=0.0))  # noqa: E731
enc = init_encoder(seed=0)
cfg = DrlConfig(episodes_per_dataset=200, lr=1e-3, updates_per_step=2, target_sync=250, seed=0)
res = train_drl(make, [ds], cfg, encoder=enc)

for name, pol in (("random", RandomPolicy(0)), ("learned", QPolicy(enc, res.networks.primary))):
    nc, r = score(pol, make(ds))
    print(f"{name:8s} near-collision rate {nc:.3f}  mean episode reward {r:7.1f}")
