"""Compare trained SAC policies with the exact optimum on a two-task system.

    python3 scripts/oracle_gap.py --seeds 0,1,2 --algos ptdfc,dfc
"""

import argparse
import dataclasses
from pathlib import Path

from mecsac import harness
from mecsac.baselines import evaluate_policy_exact, exact_value_iteration
from mecsac.codec import MASKS
from mecsac.sac import greedy_policy, train

ROOT = Path(__file__).resolve().parents[1]


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--config", default=ROOT / "configs" / "experiment.yaml", type=Path)
    parser.add_argument("--seeds", default="0")
    parser.add_argument("--algos", default="ptdfc,dfc")
    parser.add_argument("--tasks", type=int, default=2)
    args = parser.parse_args()

    base = harness.load_spec(args.config)
    system = dataclasses.replace(base.system, num_tasks=args.tasks, tasks=base.system.tasks[:args.tasks])
    spec = dataclasses.replace(base, system=system)
    print("algo   seed  learned    optimum    gap")
    for seed in (int(s) for s in args.seeds.split(",")):
        chain = harness.replica_chain(spec, seed)
        for algo in args.algos.split(","):
            mask = MASKS[algo]
            phi = exact_value_iteration(system, chain, mask).discounted_cost
            agent = train(system, chain, spec.sac, seed, mask).agent
            learned = evaluate_policy_exact(greedy_policy(agent, mask), system, chain)
            print(f"{algo:<6} {seed:>4}  {learned:9.4f}  {phi:9.4f}  {learned / phi - 1:+.2%}", flush=True)


if __name__ == "__main__":
    main()
