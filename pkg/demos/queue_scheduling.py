"""
Multi-class scheduling with overflow routing, tenth-scale instance.

Trains one overflow policy per customer class with the primal-dual
scheme (value function approximation on quadratic features, multipliers
pricing the shared server pools), then compares the learned policy
against two index benchmarks under the joint capacity coupling.  Ends
with the overflow-threshold scan that exposes the learned policy's
monotone switching structure.
"""
import numpy as np

from cmdpkit import queueing as qu


def main():
    cfg = qu.scaled_config()
    print(f"pools {cfg.pool_sizes.tolist()}, arrival rates "
          f"{cfg.arrival_rates.tolist()}, "
          f"traffic intensities {np.round(qu.traffic_intensities(cfg), 3)}")

    exp = qu.QueueExperimentConfig(iterations=10, n_states=1000,
                                   load_replications=100, seed=7)
    result = qu.run_queue_experiment(cfg, exp)
    lam = result.trail[-1].lam
    print(f"final multipliers {np.round(lam, 3)} (started at 10)")

    actors = {
        "primal-dual": qu.PolicyActor(cfg, result.policies),
        "service-value index": qu.BenchmarkActor(cfg, "service_value"),
        "max-pressure index": qu.BenchmarkActor(cfg, "pressure"),
    }
    for name, actor in actors.items():
        ev = qu.evaluate_joint(cfg, actor, 200, seed=8, context=name)
        print(f"{name:<20s} discounted cost {ev.mean:7.2f} "
              f"(se {ev.se:.2f}), hard violations {ev.hard_violations}")

    # overflow thresholds: largest queue with no overflow, per own-pool load
    print("class 1 overflow thresholds by primary-pool busy count:")
    levels = list(range(int(cfg.pool_sizes[0]) + 1))
    scan = qu.threshold_scan(cfg, result.policies[0], 0, levels)
    for z, th in zip(levels, scan):
        print(f"  busy {z}: keeps queueing up to {th}")


if __name__ == "__main__":
    main()
