"""
The command-line workflow
=========================

Everything above is also reachable through the ``evtrack`` command. This
script drives it in-process via :func:`evtrack.cli.main`; the shell
equivalents are in the comments.
"""

import json
from pathlib import Path

from evtrack.cli import main

out = Path("/tmp/demo_cli")

# evtrack simulate --scenario plain -n 3 --seed 0 --out /tmp/demo_cli/data
main(["simulate", "--scenario", "plain", "-n", "3", "--seed", "0", "--out", str(out / "data")])

# evtrack eval --data ... --oracle-stub : sanity check of the harness (AUC 1)
main(["eval", "--data", str(out / "data"), "--oracle-stub", "--out", str(out / "oracle")])

# evtrack train --data ... --epochs 1 --pairs-per-epoch 32 --force
main(["train", "--data", str(out / "data"), "--epochs", "1", "--pairs-per-epoch", "32", "--force", "--out", str(out / "run")])

# evtrack eval --data ... --checkpoint run/final.ckpt
main(["eval", "--data", str(out / "data"), "--checkpoint", str(out / "run" / "final.ckpt"), "--out", str(out / "report")])
print(json.loads((out / "report" / "report.json").read_text())["scalars"])

# evtrack track --checkpoint ... --events data/train_000.evt --init-box cx,cy,w,h
gt0 = (out / "data" / "train_000_gt.csv").read_text().splitlines()[1].split(",")[1:]
main([
    "track", "--checkpoint", str(out / "run" / "final.ckpt"), "--events", str(out / "data" / "train_000.evt"),
    "--init-box", ",".join(gt0), "--dump-heatmaps", "--out", str(out / "track"),
])
print((out / "track" / "track.csv").read_text().splitlines()[:3])

# evtrack bench --n-events 2000000
main(["bench", "--n-events", "2000000", "--out", str(out / "bench")])
