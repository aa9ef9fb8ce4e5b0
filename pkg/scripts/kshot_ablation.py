"""k-shot ablation of F-FOMAML on the clustered synthetic family.

The curve shape is reported, not asserted.
"""

import argparse
from pathlib import Path

from ffomaml.harness import experiments as ex
from ffomaml.harness.config import load_config
from ffomaml.relgraph import embed_universe
from ffomaml.task_model import generate_synthetic_universe


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config")
    ap.add_argument("--out", type=Path, default=Path("out/ablation"))
    ap.add_argument("--k-grid", default="1,2,5,10,15")
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0, help="universe seed")
    args = ap.parse_args(argv)
    args.out.mkdir(parents=True, exist_ok=True)
    cfg = load_config(args.config)

    universe = generate_synthetic_universe(cfg.synth, args.seed)
    embeddings = embed_universe(universe, cfg.gcn, args.seed)
    k_grid = [int(k) for k in args.k_grid.split(",")]
    points, _ = ex.ablate_kshot(universe, embeddings, cfg, k_grid, list(range(args.seeds)))
    table = ex.kshot_table(points)
    (args.out / "ablation_k.txt").write_text(table)
    ex.save_curve_svg(args.out / "ablation_k.svg", [p.k for p in points], [p.mean_mae for p in points],
                      [p.lo for p in points], [p.hi for p in points], "k", "test MAE")
    print(table, end="")


if __name__ == "__main__":
    main()
