"""Student accuracy and final proxy KD divergence across generator loss weights."""
import argparse
import json
from pathlib import Path

from dfadkd import experiments as ex


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--config", default="desk_sweep")
    p.add_argument("--alphas", type=float, nargs="+", default=[0.01, 0.1, 1.0, 100.0])
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--out", default="runs/alpha_sweep")
    args = p.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    setup = ex.prepare(ex.desk_config(args.config), cache_dir="runs/teacher_cache")
    rows = []
    for alpha in args.alphas:
        for seed in args.seeds:
            r = ex.distill(setup, ex.desk_config(args.config, seed=seed, alpha=alpha))
            rows.append({"alpha": alpha, "seed": seed, "acc": r.best_final_acc, "kd": r.final_proxy_kd})
            print(rows[-1], flush=True)
    print(f"{'alpha':>8} {'acc':>7} {'kd':>8}")
    for alpha in args.alphas:
        sel = [r for r in rows if r["alpha"] == alpha]
        print(f"{alpha:>8g} {ex.median([r['acc'] for r in sel]):7.4f} {ex.median([r['kd'] for r in sel]):8.4f}")
    (out / "results.json").write_text(json.dumps(rows, indent=1))


if __name__ == "__main__":
    main()
