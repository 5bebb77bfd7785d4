"""A miniature end-to-end training run (a few minutes of CPU).

Run:  python3 demos/07_train_ddpg_smoke.py
Writes a run directory under ./demo_runs with metrics, checkpoints, and a
training plot. For the real Study-1 scale use the CLI:

    racerl train --config my_config.json
    racerl tournament --config my_config.json
"""

import os

from racerl import experiments as ex
from racerl.plotting import plot_csv

cfg = ex.ExperimentConfig(output_dir="demo_runs")
cfg.train.episodes = 60
cfg.train.eval_every = 10
cfg.train.checkpoint_every = 30
cfg.train.warmup_steps = 500
cfg.train.updates_per_step = 2
cfg.exploration = ex.ExplorationConfig(horizon=4000)

result = ex.train_run(cfg, seed=0)
print(f"trained {result.episodes_run} episodes -> {result.run_dir}")

res = ex.evaluate(os.path.join(result.run_dir, "latest.npz"), "oval", laps=1)[0]
lap = f"{res.best_lap_time:.2f}s" if res.finished else "DNF"
print(f"deterministic eval: {res.status}, best lap {lap}, "
      f"return {res.return_:.1f}, damage {res.damage:.1f}")

plot_csv(os.path.join(result.run_dir, "metrics.csv"),
         os.path.join(result.run_dir, "training.svg"))
print(f"training plot: {os.path.join(result.run_dir, 'training.svg')}")
print("(60 episodes is a smoke test; expect laps only after a few hundred)")
