"""Float vs. DF-Q (8/8, 4/8) vs. DF-QAT-KD (4/8) on the desk-scale teacher."""
import argparse
import json
from pathlib import Path

from dfadkd import experiments as ex


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--config", default="desk_quant")
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--out", default="runs/quant_table")
    args = p.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    setup = ex.prepare(ex.desk_config(args.config), cache_dir="runs/teacher_cache")
    rows = [ex.quantization_row(setup, ex.desk_config(args.config, seed=s)) for s in args.seeds]
    for r in rows:
        print(r, flush=True)
    for key in ("float", "dfq_8", "dfq_4", "qat_4"):
        print(f"{key:>7}: median {ex.median([r[key] for r in rows]):.4f}")
    (out / "results.json").write_text(json.dumps(rows, indent=1))


if __name__ == "__main__":
    main()
