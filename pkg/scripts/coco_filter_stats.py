"""Scene-filter statistics on a real COCO instances file.

Reports the retained-scene count in stored and recomputed area modes, the
largest stored/recomputed area disagreements, and a sweep over the minimum
subject count so the sensitivity of the dataset size is visible.
"""

import argparse
import time
from collections import Counter

from msi_forge.coco import area_discrepancies, parse_instances
from msi_forge.config import FilterConfig
from msi_forge.scene_filter import filter_scenes

TARGET = 14_537  # scene count reported for the released dataset (alpha=5, beta=0.015)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("instances", help="instances_train2017.json")
    ap.add_argument("--beta", type=float, default=0.015)
    ap.add_argument("--alpha", type=int, default=5)
    ap.add_argument("--sweep", type=int, nargs="+", default=[1, 2, 3, 4, 5, 6, 8])
    ap.add_argument("--top", type=int, default=10, help="discrepancies to list")
    args = ap.parse_args()

    t0 = time.perf_counter()
    index = parse_instances(args.instances)
    print(f"parsed {len(index.images)} images, {index.n_annotations} annotations in {time.perf_counter() - t0:.1f}s")

    for mode in ("stored", "recomputed"):
        t0 = time.perf_counter()
        kept = filter_scenes(index, FilterConfig(alpha=args.alpha, beta=args.beta, area_mode=mode))
        dev = (len(kept) - TARGET) / TARGET
        print(f"{mode:>10}: {len(kept)} scenes (target {TARGET}, {dev:+.2%}) in {time.perf_counter() - t0:.1f}s")
        if mode == "stored":
            per_scene = Counter(s.n_salient for s in kept)
            print("            salient subjects per scene:", dict(sorted(per_scene.items())))

    disc = area_discrepancies(index)
    print(f"\n{len(disc)} annotations where stored and recomputed area differ by more than 2%")
    for d in sorted(disc, key=lambda d: -d.relative_deviation)[: args.top]:
        print(f"  ann {d.annotation_id} (image {d.image_id}): stored {d.stored:.1f} recomputed {d.recomputed:.1f}"
              f" ({d.relative_deviation:.1%})")

    print(f"\nretained scenes by minimum subject count (beta={args.beta}, stored areas)")
    for alpha in args.sweep:
        print(f"  alpha={alpha}: {len(filter_scenes(index, FilterConfig(alpha=alpha, beta=args.beta, area_mode='stored')))}")


if __name__ == "__main__":
    main()
