"""Newline-delimited JSON protocol for out-of-process model clients.

One request per line, exactly one response per line, over a subprocess's
stdio or a TCP socket:

    {"op": "hello"}                         -> {"dim": D, "concurrent": bool}
    {"op": "embed", "texts": [...]}         -> {"vectors": [[...], ...]}
    {"op": "describe", "prompt": "...",
     "images": ["<base64 png>", ...]}       -> {"names": [...]}

Failures come back as `{"error": {"code": ..., "message": ...}}`; malformed
JSON yields one error object rather than a dropped connection.

`serve_mock` runs the deterministic in-process mock behind this protocol so
external adapters can be validated against the exact same conformance suite.
"""
from __future__ import annotations

import base64
import io
import json
import shlex
import socket
import subprocess
import time

import numpy as np
from PIL import Image

from .distill import MockEmbeddingClient, MockVlmClient
from .errors import ClientError

CONNECT_RETRIES = 3


def encode_image(image: np.ndarray) -> str:
    """Float RGB array in [0, 1] -> base64 PNG string."""
    arr = np.clip(np.asarray(image) * 255.0, 0, 255).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(arr, mode="RGB").save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def decode_image(data: str) -> np.ndarray:
    raw = base64.b64decode(data)
    img = Image.open(io.BytesIO(raw)).convert("RGB")
    return np.asarray(img, dtype=np.float64) / 255.0


class AdapterTransport:
    """Line-oriented request/response over stdio or TCP."""

    def __init__(self, endpoint: str):
        self.endpoint = endpoint
        self._proc: subprocess.Popen | None = None
        self._sock_file = None
        self._connect()

    def _connect(self) -> None:
        last: Exception | None = None
        for attempt in range(CONNECT_RETRIES):
            try:
                if self.endpoint.startswith("tcp://"):
                    host, _, port = self.endpoint[len("tcp://"):].partition(":")
                    sock = socket.create_connection((host, int(port)), timeout=30)
                    self._sock_file = sock.makefile("rwb")
                else:
                    self._proc = subprocess.Popen(
                        shlex.split(self.endpoint),
                        stdin=subprocess.PIPE,
                        stdout=subprocess.PIPE,
                    )
                return
            except (OSError, ValueError) as e:
                last = e
                time.sleep(0.2 * 2**attempt)
        raise ClientError(f"cannot reach adapter '{self.endpoint}': {last}")

    def request(self, payload: dict) -> dict:
        line = (json.dumps(payload) + "\n").encode("utf-8")
        if self._sock_file is not None:
            self._sock_file.write(line)
            self._sock_file.flush()
            reply = self._sock_file.readline()
        else:
            assert self._proc is not None
            if self._proc.poll() is not None:
                raise ClientError("adapter process exited")
            self._proc.stdin.write(line)
            self._proc.stdin.flush()
            reply = self._proc.stdout.readline()
        if not reply:
            raise ClientError("adapter closed the connection")
        try:
            doc = json.loads(reply)
        except json.JSONDecodeError as e:
            raise ClientError(f"adapter sent invalid JSON: {e}") from e
        if "error" in doc:
            err = doc["error"]
            raise ClientError(f"adapter error [{err.get('code')}]: {err.get('message')}")
        return doc

    def close(self) -> None:
        if self._sock_file is not None:
            self._sock_file.close()
            self._sock_file = None
        if self._proc is not None:
            if self._proc.stdin:
                self._proc.stdin.close()
            self._proc.wait(timeout=10)
            self._proc = None


class AdapterClient:
    """VlmClient + EmbeddingClient backed by a protocol transport.

    The handshake fixes the embedding dimension and whether the server
    tolerates concurrent requests (this client is serial either way).
    """

    def __init__(self, endpoint: str):
        self.transport = AdapterTransport(endpoint)
        hello = self.transport.request({"op": "hello"})
        if "dim" not in hello:
            raise ClientError("adapter handshake did not report an embedding dim")
        self._dim = int(hello["dim"])
        self.concurrent = bool(hello.get("concurrent", False))

    @property
    def dim(self) -> int:
        return self._dim

    def embed(self, texts: list[str]) -> np.ndarray:
        reply = self.transport.request({"op": "embed", "texts": list(texts)})
        vectors = np.asarray(reply["vectors"], dtype=np.float64)
        if vectors.shape != (len(texts), self._dim):
            raise ClientError(
                f"adapter embed returned shape {vectors.shape}, "
                f"expected ({len(texts)}, {self._dim})"
            )
        return vectors

    def describe(self, images, prompt, track_key=None):
        reply = self.transport.request(
            {
                "op": "describe",
                "prompt": prompt,
                "images": [encode_image(img) for img in images],
            }
        )
        return [str(n) for n in reply.get("names", [])]

    def close(self) -> None:
        self.transport.close()


def handle_request(
    line: str,
    embedder: MockEmbeddingClient,
    vlm: MockVlmClient,
) -> dict:
    """One protocol request -> one response object (never raises)."""
    try:
        doc = json.loads(line)
    except json.JSONDecodeError as e:
        return {"error": {"code": "malformed", "message": str(e)}}
    if not isinstance(doc, dict) or "op" not in doc:
        return {"error": {"code": "malformed", "message": "missing 'op' field"}}
    op = doc["op"]
    try:
        if op == "hello":
            return {"dim": embedder.dim, "concurrent": True}
        if op == "embed":
            texts = doc.get("texts")
            if not isinstance(texts, list):
                return {"error": {"code": "bad_request", "message": "'texts' must be a list"}}
            vectors = embedder.embed([str(t) for t in texts])
            return {"vectors": [[float(x) for x in row] for row in vectors]}
        if op == "describe":
            images = [decode_image(d) for d in doc.get("images", [])]
            names = vlm.describe(images, doc.get("prompt", ""))
            return {"names": names}
        return {"error": {"code": "bad_request", "message": f"unknown op '{op}'"}}
    except Exception as e:  # protocol servers must answer, not crash
        return {"error": {"code": "internal", "message": str(e)}}


def serve_mock(
    stdin=None,
    stdout=None,
    *,
    dim: int = 512,
    names_by_track=None,
) -> None:
    """Serve the deterministic mock clients over stdio until EOF."""
    import sys

    stdin = stdin if stdin is not None else sys.stdin
    stdout = stdout if stdout is not None else sys.stdout
    embedder = MockEmbeddingClient(dim=dim)
    vlm = MockVlmClient(names_by_track=names_by_track)
    for line in stdin:
        if not line.strip():
            continue
        reply = handle_request(line, embedder, vlm)
        stdout.write(json.dumps(reply) + "\n")
        stdout.flush()


def main() -> None:
    serve_mock()


if __name__ == "__main__":
    main()
