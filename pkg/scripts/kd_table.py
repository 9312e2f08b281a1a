"""Desk-scale data-free KD: full objective vs. the bn-stat ablation, several seeds."""
import argparse
import json
from pathlib import Path

from dfadkd import experiments as ex


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--config", default="desk")
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--out", default="runs/kd_table")
    args = p.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    setup = ex.prepare(ex.desk_config(args.config), cache_dir="runs/teacher_cache")
    print(f"teacher acc {setup.teacher_acc:.4f} ({setup.seconds:.0f}s)")
    rows = []
    for variant, overrides in (("full", {}), ("no_bn_stat", {"use_bn_stat": False})):
        for seed in args.seeds:
            r = ex.distill(setup, ex.desk_config(args.config, seed=seed, **overrides))
            rows.append({"variant": variant, "seed": seed, "acc": r.best_final_acc, "kd": r.final_proxy_kd,
                         "seconds": r.seconds})
            print(rows[-1], flush=True)
    for variant in ("full", "no_bn_stat"):
        accs = [r["acc"] for r in rows if r["variant"] == variant]
        print(f"{variant:>12}: median acc {ex.median(accs):.4f} over {len(accs)} seeds")
    (out / "results.json").write_text(json.dumps({"teacher_acc": setup.teacher_acc, "rows": rows}, indent=1))


if __name__ == "__main__":
    main()
