"""Train a signal agent on all-human traffic and compare it with the cyclic plan.

Prints the learning curve as it trains, then evaluates the greedy policy on
the same arrivals as the fixed-time controller. The full 40 episodes take
about five minutes on one core; pass a smaller episode count for a quick look.

    python demos/train_and_compare.py [episodes] [seed]
"""
import dataclasses
import sys

from cavsignal.dqn import AgentConfig, run_training
from cavsignal.env import IntersectionEnv, run_fixed_time, run_greedy
from cavsignal.experiment import training_base_seed
from cavsignal.network import WorldConfig


def main(episodes: int = 40, seed: int = 0) -> None:
    world = WorldConfig(seed=seed)
    agent = dataclasses.replace(AgentConfig(), episodes=episodes, seed=seed)

    def show(log):
        print(f"episode {log.episode:2d}  eps {log.epsilon:.2f}  "
              f"negative reward {log.cumulative_negative_reward:8.0f}  delay {log.cumulative_delay:8.0f} s")

    trained = run_training(IntersectionEnv(world), agent, training_base_seed(seed), show)
    greedy = run_greedy(world, trained.net)
    fixed = run_fixed_time(world)
    print()
    for name, res in (("fixed-time", fixed), ("dqn", greedy)):
        print(f"{name:<10}  delay {res.cumulative_delay:8.0f} s  conflicts {res.conflict_count():4d}  "
              f"mean travel time {res.mean_travel_time:6.1f} s")


if __name__ == "__main__":
    args = [int(a) for a in sys.argv[1:3]]
    main(*args)
