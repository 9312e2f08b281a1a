"""Best-student accuracy with one or two generators and students."""
import argparse
import json
from pathlib import Path

import numpy as np

from dfadkd import experiments as ex


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--config", default="desk_sweep")
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--out", default="runs/multi_gs")
    args = p.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    setup = ex.prepare(ex.desk_config(args.config), cache_dir="runs/teacher_cache")
    rows = []
    for g, s in ((1, 1), (2, 2)):
        for seed in args.seeds:
            r = ex.distill(setup, ex.desk_config(args.config, seed=seed, n_generators=g, n_students=s))
            rows.append({"G": g, "S": s, "seed": seed, "acc": r.final_acc, "seconds": r.seconds})
            print(rows[-1], flush=True)
    for g in (1, 2):
        best = [max(r["acc"]) for r in rows if r["G"] == g]
        print(f"G={g} S={g}: mean best-student acc {np.mean(best):.4f}")
    (out / "results.json").write_text(json.dumps(rows, indent=1))


if __name__ == "__main__":
    main()
