"""How conflicts change as CAVs replace human drivers under the cyclic signal plan.

Runs one 90-minute episode per penetration rate for a single seed and prints
rear-end and crossing conflict counts next to total delay. Takes about
fifteen seconds.

    python demos/penetration_safety.py [seed]
"""
import sys

from cavsignal.env import run_fixed_time
from cavsignal.network import WorldConfig


def main(seed: int = 0) -> None:
    print(f"{'pr':>4} {'rear_end':>9} {'crossing':>9} {'delay_s':>9} {'completed':>10}")
    for pr in (0.0, 0.2, 0.4, 0.6, 0.8, 1.0):
        res = run_fixed_time(WorldConfig(cav_penetration=pr, seed=seed))
        print(f"{pr:>4.1f} {res.conflict_count('rear_end'):>9d} {res.conflict_count('crossing'):>9d} "
              f"{res.cumulative_delay:>9.0f} {res.vehicles_completed:>10d}")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 0)
