#!/usr/bin/env python3
# Start the HTTP service on a trained checkpoint, drive it with stdlib
# urllib as a client would, and save the edited image plus its mixing map.
#
# Run:  python3 demos/03_service_roundtrip.py <stage2.pt> [image.png]
# (train one with demos/02_desk_pipeline.py if you don't have a checkpoint)

import base64
import io
import json
import sys
import tempfile
import threading
import urllib.request
from pathlib import Path

import numpy as np
from PIL import Image

from obfuskit import serve
from obfuskit.data import gen_shape_attr, to_uint8

if len(sys.argv) < 2:
    sys.exit("usage: 03_service_roundtrip.py <stage2.pt> [image.png]")
ckpt = sys.argv[1]

# Any PNG works; without one we grab a sample from the synthetic eval split.
if len(sys.argv) > 2:
    png_bytes = Path(sys.argv[2]).read_bytes()
else:
    ds = gen_shape_attr(1, size=32, seed=7, split="eval")
    buf = io.BytesIO()
    Image.fromarray(to_uint8(ds.images[0], (-1.0, 1.0))).save(buf, "PNG")
    png_bytes = buf.getvalue()

server = serve.start(ckpt, host="127.0.0.1", port=0)  # port 0 = pick a free one
port = server.server_address[1]
threading.Thread(target=server.serve_forever, daemon=True).start()
base = f"http://127.0.0.1:{port}"
print(f"service up at {base}")

with urllib.request.urlopen(f"{base}/attrs") as r:
    attrs = json.load(r)
print(f"model {attrs['model_version']} serves attrs {attrs['attrs']}")

# Ask for an uncertainty-style edit on the first attribute and the lambda
# map that shows where the mixer kept original pixels (white = original).
payload = {
    "image": base64.b64encode(png_bytes).decode(),
    "edits": [[attrs["attrs"][0], "obfuscate"]],
    "return_lambda_map": True,
}
req = urllib.request.Request(
    f"{base}/obfuscate",
    data=json.dumps(payload).encode(),
    headers={"Content-Type": "application/json"},
)
with urllib.request.urlopen(req) as r:
    out = json.load(r)

print(f"applied edits: {out['applied_edits']}")
art_dir = Path(tempfile.mkdtemp(prefix="service_demo_"))
(art_dir / "edited.png").write_bytes(base64.b64decode(out["image"]))
print(f"wrote {art_dir / 'edited.png'}")
if out["lambda_map"]:
    lam = np.asarray(Image.open(io.BytesIO(base64.b64decode(out["lambda_map"]))))
    (art_dir / "lambda.png").write_bytes(base64.b64decode(out["lambda_map"]))
    print(f"wrote {art_dir / 'lambda.png'} (mean lambda {lam.mean() / 255.0:.2f})")

server.shutdown_clean()
print("service stopped")
