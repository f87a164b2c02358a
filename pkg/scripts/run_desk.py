"""Two-step desk run from the trivial 2D subsolution, written as a trajectory directory."""

import argparse
import json
import sys
from pathlib import Path

from eulerci.cli import main


def parse_args():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n-space", type=int, default=256)
    ap.add_argument("--n-time", type=int, default=64)
    ap.add_argument("--lambda", dest="lams", default="16,24")
    ap.add_argument("--ell", default="0.5,0.25")
    ap.add_argument("--out", default="runs/desk")
    return ap.parse_args()


def run():
    args = parse_args()
    lams = [int(x) for x in args.lams.split(",")]
    ells = [float(x) for x in args.ell.split(",")]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = {
        "dimension": 2,
        "n_space": args.n_space,
        "n_time": args.n_time,
        "n_steps": len(lams),
        "frequencies": lams,
        "mollify_scales": ells,
        "out": str(out),
    }
    path = out / "config.json"
    path.write_text(json.dumps(cfg, indent=2))
    code = main(["run", "--config", str(path)])
    if code == 0:
        main(["report", "--out", str(out)])
    return code


if __name__ == "__main__":
    sys.exit(run())
