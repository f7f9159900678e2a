"""
The command-line pipeline on the four-dimer tetrahedron
=======================================================

Samples fine-grained frames, precomputes Term-1 HVP targets, trains the three
variants (forces only, forces plus HVP, forces plus covariance-corrected HVP),
simulates each trained model, and prints the nine comparison metrics.
Takes about a minute and a half on one core.
"""

import sys
import tempfile
from pathlib import Path

from hessmatch.cli import main

config = Path(__file__).resolve().parents[1] / "configs" / "cluster3d.ini"
out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="hessmatch-"))
manifest = str(out / "manifest.ini")

steps = [["gen-data", "--config", str(config), "--out", str(out)],
         ["precompute", "--manifest", manifest]]
for variant in ("FM", "FM+AAp", "FM+AAp+Cov"):
    steps += [[cmd, "--manifest", manifest, "--variant", variant]
              for cmd in ("train", "simulate", "evaluate")]
for argv in steps:
    print("$ hessmatch", " ".join(argv), flush=True)
    code = main(argv)
    if code:
        sys.exit(code)
print(f"\noutputs in {out}")
