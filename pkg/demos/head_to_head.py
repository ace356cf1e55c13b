"""Race the prototype-collaboration algorithm against plain averaging.

Runs both algorithms on the same partitioned blob dataset with the same
seed and prints their round-by-round test accuracy side by side, then the
final comparison.  Round 1 is always identical by construction: until the
first prototypes exist, both algorithms train plain cross-entropy.

Small by default so it finishes in well under a minute; raise --per-class
and --rounds for a sterner comparison.
"""

import argparse

from fedsc.data import PartitionConfig, generate_gaussian_blobs, split_holdout
from fedsc.federation import FederationConfig, rounds_to_accuracy, run_experiment


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--num-classes", type=int, default=6)
    parser.add_argument("--per-class", type=int, default=150)
    parser.add_argument("--dim", type=int, default=12)
    parser.add_argument("--separation", type=float, default=3.0)
    parser.add_argument("--num-clients", type=int, default=6)
    parser.add_argument("--alpha", type=float, default=0.2)
    parser.add_argument("--rounds", type=int, default=12)
    parser.add_argument("--local-epochs", type=int, default=3)
    parser.add_argument("--seed", type=int, default=2)
    args = parser.parse_args()

    full = generate_gaussian_blobs(args.num_classes, args.per_class,
                                   args.dim, args.separation, seed=args.seed)
    train, test = split_holdout(full, 0.2, seed=args.seed)
    partition = PartitionConfig(scheme="dirichlet",
                                num_clients=args.num_clients,
                                alpha=args.alpha, seed=args.seed)

    results = {}
    for algorithm in ("fedsc", "fedavg"):
        config = FederationConfig(
            rounds=args.rounds, num_clients=args.num_clients,
            local_epochs=args.local_epochs, algorithm=algorithm,
            seed=args.seed, hidden_dim=32, feature_dim=16,
        )
        results[algorithm] = run_experiment(config, train, partition,
                                            test=test)

    print(f"{train.num_samples} train / {test.num_samples} test samples, "
          f"{args.num_clients} clients, dirichlet alpha={args.alpha}, "
          f"seed {args.seed}\n")
    print("round  fedsc_acc  fedavg_acc  fedsc_loss  fedavg_loss")
    for m_sc, m_avg in zip(results["fedsc"].metrics,
                           results["fedavg"].metrics):
        marker = "  <- identical bootstrap" if m_sc.round == 1 else ""
        print(f"{m_sc.round:<6d} {m_sc.accuracy:<10.4f} "
              f"{m_avg.accuracy:<11.4f} {m_sc.loss_total:<11.4f} "
              f"{m_avg.loss_total:.4f}{marker}")

    final_sc = results["fedsc"].metrics[-1].accuracy
    final_avg = results["fedavg"].metrics[-1].accuracy
    threshold = 0.9 * final_avg
    r_sc = rounds_to_accuracy(results["fedsc"].metrics, threshold)
    r_avg = rounds_to_accuracy(results["fedavg"].metrics, threshold)
    print(f"\nfinal accuracy: fedsc {final_sc:.4f}, fedavg {final_avg:.4f} "
          f"(delta {final_sc - final_avg:+.4f})")
    print(f"rounds to {threshold:.3f} (90% of fedavg final): "
          f"fedsc {r_sc}, fedavg {r_avg}")
    print("\nthe prototype terms act as a strong regularizer: under heavy "
          "label skew they can speed up the early rounds, but their "
          "constant-scale pull caps the ceiling once plain averaging has "
          "caught up")


if __name__ == "__main__":
    main()
