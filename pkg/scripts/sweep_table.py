"""
Prints the partition-convergence table of a rho sweep.

    python -m app.cli sweep --config configs/ring_of_ten.json
    python scripts/sweep_table.py runs/ring_of_ten/sweep_summary.csv
"""
import sys

import pandas as pd

COLUMNS = ["rho", "partition_convergence_round", "rounds_run", "consensus_dev", "consensus_bound", "rho_cost_Q", "status"]


def main(path: str) -> int:
    try:
        frame = pd.read_csv(path)
    except (OSError, pd.errors.ParserError) as e:
        print(f"Error: cannot read {path}: {e}")
        return 2
    missing = [c for c in COLUMNS if c not in frame.columns]
    if missing:
        print(f"Error: {path} lacks columns {missing}")
        return 2
    table = frame[COLUMNS].rename(columns={"partition_convergence_round": "partition_conv"})
    print(table.to_string(index=False, float_format=lambda v: f"{v:.6g}"))
    # report only: convergence time need not be monotone in rho
    rounds = frame["partition_convergence_round"].dropna().tolist()
    if len(rounds) > 2:
        shape = "monotone" if rounds == sorted(rounds) or rounds == sorted(rounds, reverse=True) else "non-monotone"
        print(f"\npartition convergence time is {shape} in rho")
    return 0


if __name__ == "__main__":
    if len(sys.argv) != 2:
        print("usage: sweep_table.py <sweep_summary.csv>")
        sys.exit(2)
    sys.exit(main(sys.argv[1]))
