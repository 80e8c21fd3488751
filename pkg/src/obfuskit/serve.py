"""Local HTTP inference service over frozen checkpoints.

Endpoints (JSON bodies, base64-encoded PNG image payloads):

* ``GET /attrs``     -> attribute names and the model version (checkpoint hash)
* ``POST /obfuscate`` -> apply code edits to one image, optionally returning
  the mixing-weight map as a grayscale PNG
* ``GET /health``    -> model version and uptime

Images are preprocessed server-side (center-crop to the short side, resize to
the training resolution, normalize), so clients send plain encoded images.
Model state is read-only and shared; inference runs under a lock so identical
requests produce byte-identical responses at any concurrency. Payloads are
capped at 8 MiB. Errors: 400 with a field-level message, 413 for oversized
bodies, 500 for internal failures.
"""

from __future__ import annotations

import base64
import binascii
import io
import json
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .data import PreprocessSpec, preprocess_pil, to_uint8
from .modelio import EDIT_ACTIONS, ModelBundle, images_to_tensor, tensor_to_images

__all__ = ["MAX_BODY_BYTES", "RequestError", "ObfuscationService", "start"]

MAX_BODY_BYTES = 8 * 1024 * 1024


class RequestError(ValueError):
    """Client-side request problem; message names the offending field."""

    def __init__(self, message: str, status: int = 400):
        super().__init__(message)
        self.status = status


class ObfuscationService:
    """Request validation and inference over one frozen model bundle."""

    def __init__(self, bundle: ModelBundle):
        if not bundle.attr_names:
            raise ValueError("checkpoint carries no attribute names")
        self.bundle = bundle
        self._lock = threading.Lock()
        self._started = time.monotonic()
        self._self_test()

    @classmethod
    def from_checkpoint(cls, path: str | Path) -> "ObfuscationService":
        return cls(ModelBundle.load(path))

    def _self_test(self) -> None:
        """One forward pass through the full editing path before serving."""
        cfg = self.bundle.config
        x = torch.zeros(1, cfg.channels, cfg.image_size, cfg.image_size)
        action = "obfuscate" if self.bundle.mixer is not None else "invert"
        out, _ = self.bundle.apply_edits(x, [(0, action)])
        if out.shape != x.shape:
            raise RuntimeError(f"self-test output shape {tuple(out.shape)} != input")

    # ---- endpoint payloads ----

    def attrs(self) -> dict:
        return {
            "attrs": list(self.bundle.attr_names),
            "model_version": self.bundle.model_version,
        }

    def health(self) -> dict:
        return {
            "status": "ok",
            "model_version": self.bundle.model_version,
            "uptime_seconds": round(time.monotonic() - self._started, 3),
        }

    def obfuscate(self, payload) -> dict:
        if not isinstance(payload, dict):
            raise RequestError("body: expected a JSON object")
        known = {"image", "edits", "return_lambda_map"}
        for key in payload:
            if key not in known:
                raise RequestError(f"{key}: unexpected field")
        x = self._decode_image(payload)
        edits = self._parse_edits(payload)
        want_lam = payload.get("return_lambda_map", False)
        if not isinstance(want_lam, bool):
            raise RequestError("return_lambda_map: expected a boolean")

        with self._lock:
            try:
                out, lam = self.bundle.apply_edits(x, edits)
            except ValueError as exc:
                raise RequestError(f"edits: {exc}") from exc

        value_range = (self.bundle.config.value_low, self.bundle.config.value_high)
        out_u8 = to_uint8(tensor_to_images(out)[0], value_range)
        lam_b64 = None
        if want_lam and lam is not None:
            lam_u8 = np.clip(np.round(lam[0].numpy() * 255.0), 0, 255).astype(np.uint8)
            lam_b64 = _encode_png(lam_u8, mode="L")
        names = self.bundle.attr_names
        return {
            "image": _encode_png(out_u8),
            "lambda_map": lam_b64,
            "applied_edits": [[names[i], a] for i, a in sorted(edits)],
            "model_version": self.bundle.model_version,
        }

    # ---- request parsing ----

    def _decode_image(self, payload: dict) -> torch.Tensor:
        raw = payload.get("image")
        if not isinstance(raw, str) or not raw:
            raise RequestError("image: expected a base64-encoded image string")
        try:
            blob = base64.b64decode(raw, validate=True)
        except (binascii.Error, ValueError) as exc:
            raise RequestError(f"image: invalid base64 ({exc})") from exc
        cfg = self.bundle.config
        try:
            with Image.open(io.BytesIO(blob)) as img:
                spec = PreprocessSpec(
                    crop=min(img.size),
                    resize=cfg.image_size,
                    value_range=(cfg.value_low, cfg.value_high),
                )
                arr = preprocess_pil(img, spec)
        except RequestError:
            raise
        except Exception as exc:
            raise RequestError(f"image: cannot decode ({exc})") from exc
        return images_to_tensor(arr[None])

    def _parse_edits(self, payload: dict) -> list[tuple[int, str]]:
        raw = payload.get("edits", [])
        if not isinstance(raw, list):
            raise RequestError("edits: expected a list of [attribute, action] pairs")
        names = self.bundle.attr_names
        edits: list[tuple[int, str]] = []
        seen: set[int] = set()
        for i, item in enumerate(raw):
            if not (isinstance(item, (list, tuple)) and len(item) == 2
                    and all(isinstance(v, str) for v in item)):
                raise RequestError(f"edits[{i}]: expected an [attribute, action] string pair")
            name, action = item
            if name not in names:
                raise RequestError(f"edits[{i}]: unknown attribute {name!r}; "
                                   f"model has {list(names)}")
            if action not in EDIT_ACTIONS:
                raise RequestError(f"edits[{i}]: unknown action {action!r}; "
                                   f"one of {list(EDIT_ACTIONS)}")
            idx = names.index(name)
            if idx in seen:
                raise RequestError(f"edits[{i}]: multiple actions for attribute {name!r}")
            seen.add(idx)
            edits.append((idx, action))
        return edits


def _encode_png(u8: np.ndarray, mode: str | None = None) -> str:
    buf = io.BytesIO()
    Image.fromarray(u8, mode).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    server_version = "obfuskit-serve"

    def log_message(self, format, *args):  # quiet by default
        pass

    @property
    def svc(self) -> ObfuscationService:
        return self.server.service

    def _send_json(self, status: int, obj: dict) -> None:
        body = json.dumps(obj, sort_keys=True).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        # the browser console is served from another origin (static file or
        # dev server); the service is local-only and unauthenticated anyway
        self.send_header("Access-Control-Allow-Origin", "*")
        self.end_headers()
        self.wfile.write(body)

    def do_OPTIONS(self):
        self.send_response(204)
        self.send_header("Access-Control-Allow-Origin", "*")
        self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
        self.send_header("Access-Control-Allow-Headers", "Content-Type")
        self.send_header("Content-Length", "0")
        self.end_headers()

    def do_GET(self):
        if self.path == "/attrs":
            self._send_json(200, self.svc.attrs())
        elif self.path == "/health":
            self._send_json(200, self.svc.health())
        else:
            self._send_json(404, {"error": f"no such endpoint: {self.path}"})

    def _drain(self, length: int, cap: int = 8 * MAX_BODY_BYTES) -> None:
        remaining = min(length, cap)
        while remaining > 0:
            chunk = self.rfile.read(min(65536, remaining))
            if not chunk:
                break
            remaining -= len(chunk)

    def do_POST(self):
        if self.path != "/obfuscate":
            self._send_json(404, {"error": f"no such endpoint: {self.path}"})
            return
        length_raw = self.headers.get("Content-Length")
        if length_raw is None or not length_raw.isdigit():
            self._send_json(400, {"error": "Content-Length: required"})
            return
        length = int(length_raw)
        if length > MAX_BODY_BYTES:
            self._drain(length)  # let well-behaved clients finish writing
            self.close_connection = True
            self._send_json(413, {"error": f"body exceeds {MAX_BODY_BYTES} bytes"})
            return
        body = self.rfile.read(length)
        try:
            payload = json.loads(body)
        except json.JSONDecodeError as exc:
            self._send_json(400, {"error": f"body: invalid JSON ({exc.msg})"})
            return
        try:
            self._send_json(200, self.svc.obfuscate(payload))
        except RequestError as exc:
            self._send_json(exc.status, {"error": str(exc)})
        except Exception as exc:
            self._send_json(500, {"error": f"internal: {type(exc).__name__}: {exc}"})


class _Server(ThreadingHTTPServer):
    daemon_threads = False  # drain in-flight requests on close
    block_on_close = True

    def __init__(self, address, service: ObfuscationService):
        super().__init__(address, _Handler)
        self.service = service

    def shutdown_clean(self) -> None:
        self.shutdown()
        self.server_close()


def start(checkpoint: str | Path, host: str = "127.0.0.1", port: int = 8008) -> _Server:
    """Load the checkpoint, self-test it, and return a ready (unstarted)
    threading HTTP server; call ``serve_forever`` to block, ``port=0`` picks a
    free port."""
    torch.set_num_threads(1)
    service = ObfuscationService.from_checkpoint(checkpoint)
    return _Server((host, port), service)
