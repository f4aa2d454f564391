"""Run the four stored figure parameter sets and print where artifacts went."""

import argparse
import sys

from meanfield2nn import cli


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--scale", choices=["small", "paper"], default="small")
    parser.add_argument("--seed", type=int, default=2024)
    parser.add_argument("--only", nargs="*", default=None,
                        help="subset of figure1..figure4")
    args = parser.parse_args()
    names = args.only or ["figure1", "figure2", "figure3", "figure4"]
    for name in names:
        config = cli.preset_config(name, args.scale, args.seed)
        print(f"== {name} ({args.scale}) -> {config['output_dir']}")
        rc = cli.run_experiment(config)
        if rc != 0:
            return rc
    return 0


if __name__ == "__main__":
    sys.exit(main())
