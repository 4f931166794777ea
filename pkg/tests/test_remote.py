import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
import pytest

from greedypixel.models import Model, cw_loss, random_linear
from greedypixel.remote import (
    HTTPStatusError,
    MalformedResponseError,
    RemoteModel,
    ShapeMismatchError,
    TransportError,
    serve_in_thread,
)


class Fixed(Model):
    num_classes = 2
    input_shape = (3, 2, 2)

    def logits(self, x):
        return np.array([1.0, 0.0])


def test_fixed_logits_stub():
    with serve_in_thread(Fixed()) as server:
        client = RemoteModel(server.base_url)
        assert client.input_shape == (3, 2, 2) and client.num_classes == 2
        assert cw_loss(client.logits(np.zeros((3, 2, 2))), 0) == 1.0
        assert client.queries == 1 and server.images_served == 1


def test_shape_mismatch_refused_locally():
    with serve_in_thread(Fixed()) as server:
        client = RemoteModel(server.base_url)
        with pytest.raises(ShapeMismatchError):
            client.logits(np.zeros((3, 2, 3)))
        assert client.queries == 0 and server.requests_served == 0
        with pytest.raises(ShapeMismatchError):
            RemoteModel(server.base_url, input_shape=(1, 2, 2))


def test_loopback_logits_identical(rng):
    net = random_linear((3, 4, 4), 3, seed=17)
    with serve_in_thread(net) as server:
        client = RemoteModel(server.base_url)
        for _ in range(100):
            x = rng.random((3, 4, 4))
            assert np.array_equal(client.logits(x), net.logits(x))
        assert client.queries == 100 == server.images_served


def test_batched_and_parallel_requests(rng):
    net = random_linear((3, 4, 4), 3, seed=18)
    xs = rng.random((8, 3, 4, 4))
    with serve_in_thread(net) as server:
        batched = RemoteModel(server.base_url, batch=True)
        assert np.array_equal(batched.logits_batch(xs), net.logits_batch(xs))
        assert batched.queries == 8 and batched.round_trips == 1
        parallel = RemoteModel(server.base_url, workers=4)
        assert np.array_equal(parallel.logits_batch(xs), net.logits_batch(xs))
        assert parallel.queries == 8 and parallel.round_trips == 8
        assert server.images_served == 16


def test_concurrent_clients_share_one_model(rng):
    net = random_linear((3, 4, 4), 3, seed=19)
    xs = rng.random((40, 3, 4, 4))
    with serve_in_thread(net) as server:
        client = RemoteModel(server.base_url)
        results = [None] * 4

        def work(i):
            results[i] = client.logits_batch(xs[i * 10:(i + 1) * 10])

        threads = [threading.Thread(target=work, args=(i,)) for i in range(4)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert np.array_equal(np.concatenate(results), net.logits_batch(xs))
        assert client.queries == 40


def test_server_rejects_wrong_shape():
    with serve_in_thread(Fixed()) as server:
        client = RemoteModel(server.base_url, input_shape=(1, 1, 1), num_classes=2)
        with pytest.raises(HTTPStatusError) as err:
            client.logits(np.zeros((1, 1, 1)))
        assert err.value.status == 400 and client.queries == 0


class _Garbage(BaseHTTPRequestHandler):
    def log_message(self, *args):
        pass

    def do_POST(self):
        body = b"not json" if self.path.endswith("logits") else b'{"logits": [1, 2, 3]}'
        self.send_response(200)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    do_GET = do_POST


@pytest.fixture
def garbage_server():
    server = ThreadingHTTPServer(("127.0.0.1", 0), _Garbage)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_address[1]}"
    server.shutdown()
    server.server_close()


def test_malformed_responses(garbage_server):
    client = RemoteModel(garbage_server + "/", input_shape=(1, 1, 1), num_classes=2)
    with pytest.raises(MalformedResponseError):
        client.logits(np.zeros((1, 1, 1)))
    with pytest.raises(MalformedResponseError):
        RemoteModel(garbage_server)
    assert client.queries == 0


def test_unreachable_endpoint_retries_without_counting():
    with serve_in_thread(Fixed()) as server:
        url = server.base_url
    client = RemoteModel(url, input_shape=(3, 2, 2), num_classes=2, retries=2, timeout=1.0)
    with pytest.raises(TransportError):
        client.logits(np.zeros((3, 2, 2)))
    assert client.attempts == 3 and client.queries == 0


def test_wire_format():
    captured = {}

    class Spy(Fixed):
        def logits(self, x):
            captured["x"] = x
            return super().logits(x)

    x = np.arange(12, dtype=float).reshape(3, 2, 2) / 11
    with serve_in_thread(Spy()) as server:
        import requests

        body = {"shape": [3, 2, 2], "image": x.ravel().tolist()}
        resp = requests.post(server.base_url + "/v1/logits", data=json.dumps(body), timeout=5)
        assert resp.json() == {"logits": [1.0, 0.0]}
        assert np.array_equal(captured["x"], x)
        info = requests.get(server.base_url + "/v1/info", timeout=5).json()
        assert info == {"k": 2, "shape": [3, 2, 2]}
        assert requests.get(server.base_url + "/nope", timeout=5).status_code == 404
