"""Tour of one synthetic referring clip.

Generates a clip, prints the referring expression and which object it picks,
and writes the frames and ground-truth masks as netpbm files you can open in
any image viewer.

    python3 demos/01_synthetic_clip.py [seed] [out_dir]
"""

import sys
from pathlib import Path

import numpy as np

from refvos import io
from refvos.datagen import random_clip, resolve_reference
from refvos.losses import mask_to_box
from refvos.ref_encoders import stft_magnitude

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 7
out = Path(sys.argv[2] if len(sys.argv) > 2 else "demo_clip")
out.mkdir(exist_ok=True)

clip = random_clip(seed)
words = list(clip.text)
print("expression:", " ".join(words))
print("scene objects:")
for i, obj in enumerate(clip.scene.objects):
    print(f"  [{i}] {obj.color} {obj.shape} {obj.motion}")
print("expression resolves to object(s):", resolve_reference(clip.text, clip.scene))

# The referent's box moves with it; boxes are normalised (cx, cy, w, h).
for t, mask in enumerate(clip.masks):
    box = np.round(mask_to_box(mask), 3)
    print(f"frame {t}: referent pixels={int(mask.sum()):4d} box={box.tolist()}")
    io.write_ppm(out / f"frame_{t}.ppm", clip.frames[t])
    io.write_pgm(out / f"mask_{t}.pgm", mask.astype(np.uint8) * 255)

# The audio reference encodes the same words as tones; its spectrogram peaks
# sit in word-specific frequency bins.
spec = stft_magnitude(clip.audio)
print(f"audio: {clip.audio.size} samples, spectrogram {spec.shape}, "
      f"strongest bins {sorted(np.argsort(spec.mean(0))[-len(words):].tolist())}")
print(f"wrote {2 * len(clip.frames)} images to {out}/")
