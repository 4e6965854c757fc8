"""Run a reduced experiment grid and print the report.

The full grid is 3 extraction modes x 4 selection methods x 2 weighting
settings plus two baseline rows; here the network is shrunk so the demo
finishes in seconds. The CLI equivalent:

    cellsift grid --config config.json --out out/
"""

import json
import os
import tempfile

import cellsift as cs

config = cs.ExperimentConfig(
    data={"kind": "synthetic", "n_per_class": [80, 80, 80],
          "test_n_per_class": [40, 40, 40], "embed_dim": 16,
          "informative": 3, "image_tokens": 4, "seed": 7},
    modes=["class", "image", "all"],
    selections=["boosting", "forest", "logreg", "all"],
    weighting="both",
    seed=7,
    ann={"epochs": 25, "hidden": [128, 64]},
)

with tempfile.TemporaryDirectory() as out:
    report = cs.run_grid(config, out_dir=out, jobs=2)
    print(f"artifacts written: {sorted(os.listdir(out))[:6]} ...\n")
    print(open(os.path.join(out, "summary.txt")).read())

print("equivalent config.json for the CLI:")
print(json.dumps({
    "data": config.data,
    "modes": config.modes,
    "selections": config.selections,
    "weighting": config.weighting,
    "seed": config.seed,
    "ann": {"epochs": 25, "hidden": [128, 64]},
}, indent=2))
