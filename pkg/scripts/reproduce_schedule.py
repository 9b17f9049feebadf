"""Print the per-epoch learning rate and subject cap for the reported training setup.

Also sweeps the pacing exponent so the effect of gamma on how quickly the
subject cap grows is visible side by side.
"""

import argparse

from msi_forge.config import ClsqConfig, DstConfig
from msi_forge.schedule import export_schedule, subjects_at_epoch


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--gammas", type=float, nargs="+", default=[0.5, 1.0, 2.0])
    args = ap.parse_args()

    dst = DstConfig(eta1=1e-4, eta2=5e-5, e1=7, e2=3)
    clsq = ClsqConfig(k_min=2, k_max=5, total_epochs=dst.total_epochs, gamma=1.0)
    print("epoch      lr  k")
    for plan in export_schedule(dst, clsq):
        print(f"{plan.epoch:5d}  {plan.lr:.0e}  {plan.k}")

    print("\nsubject cap by gamma")
    print("epoch  " + "  ".join(f"g={g:<4}" for g in args.gammas))
    for e in range(1, clsq.total_epochs + 1):
        ks = [subjects_at_epoch(ClsqConfig(2, 5, clsq.total_epochs, g), e) for g in args.gammas]
        print(f"{e:5d}  " + "  ".join(f"{k:<6}" for k in ks))


if __name__ == "__main__":
    main()
