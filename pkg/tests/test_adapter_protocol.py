"""Protocol conformance suite.

Runs the same checks against every available adapter implementation: the
in-repo mock server always, and the sidecar adapter build when present.
Each server speaks newline-delimited JSON over stdio.
"""
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from splatquery.adapter import AdapterClient, encode_image

REPO_ROOT = Path(__file__).resolve().parent.parent
SIDECAR = REPO_ROOT / "adapter" / "dist" / "server.js"

ENDPOINTS = [
    pytest.param(f"{sys.executable} -m splatquery.adapter", id="mock"),
    pytest.param(
        f"node {SIDECAR}",
        id="sidecar",
        marks=pytest.mark.skipif(
            not SIDECAR.exists(), reason="sidecar adapter not built"
        ),
    ),
]


@pytest.fixture(params=ENDPOINTS)
def server(request):
    proc = subprocess.Popen(
        request.param.split(),
        stdin=subprocess.PIPE,
        stdout=subprocess.PIPE,
        text=True,
    )
    yield proc
    proc.stdin.close()
    proc.wait(timeout=10)


def ask(proc, payload) -> dict:
    line = payload if isinstance(payload, str) else json.dumps(payload)
    proc.stdin.write(line + "\n")
    proc.stdin.flush()
    reply = proc.stdout.readline()
    assert reply, "server closed the stream instead of answering"
    return json.loads(reply)


class TestProtocolConformance:
    def test_handshake(self, server):
        hello = ask(server, {"op": "hello"})
        assert isinstance(hello["dim"], int) and hello["dim"] > 0
        assert isinstance(hello["concurrent"], bool)

    def test_embed_shape_and_unit_norm(self, server):
        dim = ask(server, {"op": "hello"})["dim"]
        reply = ask(server, {"op": "embed", "texts": ["alpha", "beta"]})
        vectors = np.asarray(reply["vectors"])
        assert vectors.shape == (2, dim)
        np.testing.assert_allclose(np.linalg.norm(vectors, axis=1), 1.0,
                                   atol=1e-5)

    def test_embed_deterministic(self, server):
        a = ask(server, {"op": "embed", "texts": ["a", "a"]})["vectors"]
        b = ask(server, {"op": "embed", "texts": ["a"]})["vectors"]
        assert a[0] == a[1] == b[0]

    def test_embed_empty_list(self, server):
        assert ask(server, {"op": "embed", "texts": []})["vectors"] == []

    def test_describe_returns_names(self, server):
        image = encode_image(np.full((8, 8, 3), [0.9, 0.1, 0.1]))
        reply = ask(server, {"op": "describe", "prompt": "name it",
                             "images": [image]})
        if "error" in reply:
            # A sidecar without credentials must answer with a typed error
            # object, never drop the request.
            assert reply["error"]["code"]
        else:
            assert reply["names"] and all(isinstance(n, str)
                                          for n in reply["names"])

    def test_malformed_json_yields_one_error(self, server):
        reply = ask(server, "{not json")
        assert reply["error"]["code"] == "malformed"
        # the stream is still usable afterwards
        assert "dim" in ask(server, {"op": "hello"})

    def test_unknown_op_yields_error(self, server):
        reply = ask(server, {"op": "transmogrify"})
        assert "error" in reply

    def test_bad_embed_payload_yields_error(self, server):
        reply = ask(server, {"op": "embed", "texts": "not-a-list"})
        assert "error" in reply

    def test_one_response_per_request(self, server):
        for i in range(5):
            reply = ask(server, {"op": "embed", "texts": [f"t{i}"]})
            assert len(reply["vectors"]) == 1


class TestAdapterClient:
    def test_client_against_mock_server(self):
        client = AdapterClient(f"{sys.executable} -m splatquery.adapter")
        try:
            assert client.dim == 512
            vecs = client.embed(["one", "two"])
            assert vecs.shape == (2, 512)
            names = client.describe(
                [np.full((8, 8, 3), [0.1, 0.1, 0.9])], "prompt")
            assert names == ["blue object"]
        finally:
            client.close()

    def test_unreachable_endpoint_raises_client_error(self):
        from splatquery.errors import ClientError
        with pytest.raises(ClientError):
            AdapterClient("tcp://127.0.0.1:1")
