"""Strong optimum vs weak (randomised) cost vs oracle on the bundled fixed-bank configs."""

import argparse
import os

from sysrisk.experiments import equivalence_check
from sysrisk.io import parse_config

HERE = os.path.join(os.path.dirname(__file__), "configs")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("configs", nargs="*", default=[os.path.join(HERE, f) for f in ("scalar.ini", "hetero4.ini")])
    ap.add_argument("--paths", type=int, default=None)
    args = ap.parse_args()
    for path in args.configs:
        cfg = parse_config(path).with_overrides(paths=args.paths)
        rep = equivalence_check(cfg.scenario, cfg.solver)
        vals = "  ".join(f"{k}={v:.5f}+-{rep.ses[k]:.5f}" for k, v in rep.values.items())
        print(f"{os.path.basename(path)}: {'ok' if rep.passed else 'FAILED'}  oracle={rep.oracle}  {vals}")
        for note in rep.notes:
            print("   ", note)


if __name__ == "__main__":
    main()
