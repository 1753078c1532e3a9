"""Train a small model end to end through the command line.

Builds a tiny dataset, trains for a few steps, evaluates J, F and J&F on the
validation split and writes predicted masks and overlays for one clip.  The
model is deliberately small so the whole script finishes in seconds;
scores after so few steps are low.
"""

import sys
import tempfile
from pathlib import Path

from refvos.cli import main
from refvos.datagen import list_clips

steps = sys.argv[1] if len(sys.argv) > 1 else "20"
work = Path(tempfile.mkdtemp(prefix="refvos_demo_"))
cfg = work / "small.cfg"
cfg.write_text("\n".join([
    "model.dim=32", "model.ffn_dim=32", "model.heads=2",
    "backbone.stem_channels=8", "backbone.channels=8,16,16", "backbone.fusion_dim=8",
    "text.embed_dim=32", "text.heads=2",
    "transformer.enc_layers=1", "transformer.dec_layers=1", "transformer.heads=2",
    "mti.enc_blocks=1", "mti.dec_blocks=1",
    "data.n_train=6", "data.n_val=3", "train.log_every=5",
]) + "\n")


def run(*args):
    argv = [str(a) for a in args]
    print("$ refvos", " ".join(argv))
    code = main(argv)
    if code:
        sys.exit(code)


run("dataset", "build", "--config", cfg, "--out", work / "data")
run("train", "--config", cfg, "--data", work / "data", "--out", work / "run", "--steps", steps)
run("eval", "--config", cfg, "--data", work / "data", "--checkpoint", work / "run" / "model.ckpt")
run("eval", "--config", cfg, "--data", work / "data", "--bypass")
clip = list_clips(work / "data", "val")[0]
run("infer", "--config", cfg, "--checkpoint", work / "run" / "model.ckpt", "--clip", clip,
    "--out", work / "pred")
print("everything is under", work)
