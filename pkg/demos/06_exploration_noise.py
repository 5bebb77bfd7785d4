"""Exploration: OU traces and the brake-burst mutual-exclusion effect.

Run:  python3 demos/06_exploration_noise.py
"""

import numpy as np

from racerl.agent import ExplorationConfig, Explorer, OUParams, OUProcess

rng = np.random.default_rng(0)

ou = OUProcess(OUParams(theta=0.15, sigma=0.3))
trace = [ou.step(rng) for _ in range(12)]
print("an OU trace is temporally correlated, not white:")
print(np.array2string(np.array(trace), precision=2))

# a fresh actor outputs throttle ~ 0.5 and brake ~ 0.5; count how often the
# exploration presses both pedals hard at eps' = 1
det = np.array([0.0, 0.5, 0.5])
schemes = {
    "brake-burst scheme": Explorer(seed=1),
    "plain symmetric noise": Explorer(ExplorationConfig(
        burst_prob=0.0,
        throttle=OUParams(0.15, 0.2, 0.0),
        brake=OUParams(0.15, 0.2, 0.0)), seed=1),
}
print("\nfraction of steps with throttle > 0.5 AND brake > 0.5 (10k steps):")
for label, explorer in schemes.items():
    both = sum((a[1] > 0.5) and (a[2] > 0.5)
               for a in (explorer.explore(det) for _ in range(10_000)))
    print(f"  {label:22s}: {both / 10_000:.1%}")

# annealing: the same call becomes exactly deterministic once eps' reaches 0
explorer = Explorer(ExplorationConfig(horizon=5), seed=2)
for step in range(7):
    a = explorer.explore(det)
    print(f"step {step}: eps'={max(0.0, 1 - step / 5):.1f} action="
          f"{np.array2string(a, precision=3)}")
