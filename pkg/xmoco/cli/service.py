from __future__ import annotations

import json
import logging
from http import HTTPStatus
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import TYPE_CHECKING, Any

import numpy as np

from xmoco.constants import Modality
from xmoco.errors import RequestError, XmocoError
from xmoco.model.encoders import embed_matrix, encode
from xmoco.retrieval.index import RetrievalIndex, build_index, top_k
from xmoco.utils.file import canonical_json

if TYPE_CHECKING:
    from xmoco.data.pairs import PairDataset
    from xmoco.model.moco import TwoTowerState

LOGGER = logging.getLogger(__name__)

Payload = dict[str, Any]


def _field(body: Payload, key: str, kind: type | tuple[type, ...]) -> Any:  # noqa: ANN401
    if key not in body:
        raise RequestError(f"Missing field {key!r}")
    value = body[key]
    if not isinstance(value, kind) or isinstance(value, bool):
        raise RequestError(f"Field {key!r} has the wrong type")
    return value


def _vector(value: Any, key: str) -> list[float]:  # noqa: ANN401
    if not isinstance(value, list) or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in value):
        raise RequestError(f"Field {key!r} must be a list of numbers")
    return [float(x) for x in value]


def _modality(body: Payload) -> Modality:
    raw = _field(body, "modality", str)
    try:
        return Modality(raw)
    except ValueError as e:
        raise RequestError(f"Unknown modality {raw!r} (expected 'a' or 'b')") from e


class EmbeddingService:
    """
    Stateless request handling over an immutable model and corpus.

    Attributes:
        state (TwoTowerState): The trained model; only the query encoders are used.
        indices (dict[Modality, RetrievalIndex]): Corpus embeddings per modality (empty without a corpus).

    """

    def __init__(self, state: TwoTowerState, corpus: PairDataset | None = None) -> None:
        self.state = state
        self.indices: dict[Modality, RetrievalIndex] = {}
        if corpus is not None:
            corpus.require_nonempty("corpus")
            for modality in Modality:
                embeddings = embed_matrix(state.query_encoder(modality), corpus.features(modality))
                self.indices[modality] = build_index(corpus.ids, embeddings)
            LOGGER.info(f"[EmbeddingService] Indexed a corpus of {len(corpus)} pairs")

    def handle(self, method: str, path: str, body: bytes) -> tuple[int, Payload]:
        """
        Answer one request.

        Args:
            method (str): HTTP method.
            path (str): Request path.
            body (bytes): Raw request body (JSON for POST).

        Returns:
            tuple[int, Payload]: HTTP status and JSON payload; errors carry ``{"error": message}``.

        """
        routes = {
            ("GET", "/v1/health"): self.health,
            ("POST", "/v1/embed"): self.embed,
            ("POST", "/v1/match"): self.match,
            ("POST", "/v1/retrieve"): self.retrieve,
        }
        route = routes.get((method, path))
        if route is None:
            known_path = any(p == path for _m, p in routes)
            status = HTTPStatus.METHOD_NOT_ALLOWED if known_path else HTTPStatus.NOT_FOUND
            return status, {"error": f"No route for {method} {path}"}
        try:
            payload = self._decode(body) if method == "POST" else {}
            return HTTPStatus.OK, route(payload)
        except (XmocoError, ValueError) as e:
            return HTTPStatus.BAD_REQUEST, {"error": str(e)}
        except Exception:
            LOGGER.exception(f"[EmbeddingService] Failed to serve {method} {path}")
            return HTTPStatus.INTERNAL_SERVER_ERROR, {"error": "internal error"}

    @staticmethod
    def _decode(body: bytes) -> Payload:
        try:
            payload = json.loads(body.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise RequestError(f"Malformed JSON body: {e}") from e
        if not isinstance(payload, dict):
            raise RequestError("Request body must be a JSON object")
        return payload

    def health(self, _body: Payload) -> Payload:
        """Report liveness."""
        return {"status": "ok"}

    def embed(self, body: Payload) -> Payload:
        """Embed a list of feature vectors of one modality."""
        modality = _modality(body)
        rows = _field(body, "features", list)
        vectors = [_vector(row, f"features[{i}]") for i, row in enumerate(rows)]
        embeddings = embed_matrix(self.state.query_encoder(modality), vectors)
        return {"embeddings": embeddings.tolist()}

    def match(self, body: Payload) -> Payload:
        """Score a cross-modal pair by the dot product of its embeddings."""
        z_a = encode(self.state.query_a, _vector(_field(body, "feat_a", list), "feat_a"))
        z_b = encode(self.state.query_b, _vector(_field(body, "feat_b", list), "feat_b"))
        return {"score": float(np.dot(z_a, z_b))}

    def retrieve(self, body: Payload) -> Payload:
        """Rank corpus items of the other modality for one query."""
        if not self.indices:
            raise RequestError("No corpus is loaded")
        modality = _modality(body)
        features = _vector(_field(body, "features", list), "features")
        k = _field(body, "k", int)
        query = encode(self.state.query_encoder(modality), features)
        return top_k(self.indices[modality.other], query, k).to_json_dict()


def make_handler(service: EmbeddingService) -> type[BaseHTTPRequestHandler]:
    """Build a request handler class bound to a service."""

    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def _respond(self, method: str) -> None:
            raw_length = self.headers.get("Content-Length") or "0"
            try:
                length = int(raw_length)
            except ValueError:
                length = -1
            if length < 0:
                # unknown body length: close after answering
                self.close_connection = True
                self._send(HTTPStatus.BAD_REQUEST, {"error": f"Invalid Content-Length {raw_length!r}"})
                return
            body = self.rfile.read(length) if length > 0 else b""
            self._send(*service.handle(method, self.path, body))

        def _send(self, status: int, payload: Payload) -> None:
            data = canonical_json(payload).encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json; charset=utf-8")
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)

        def do_GET(self) -> None:  # noqa: N802
            self._respond("GET")

        def do_POST(self) -> None:  # noqa: N802
            self._respond("POST")

        def log_message(self, format: str, *args: Any) -> None:  # noqa: A002
            LOGGER.debug(f"[Handler] {self.address_string()} {format % args}")

    return Handler


def make_server(service: EmbeddingService, host: str, port: int) -> ThreadingHTTPServer:
    """Bind a threading HTTP server to the service (port 0 picks a free port)."""
    server = ThreadingHTTPServer((host, port), make_handler(service))
    server.daemon_threads = True
    return server


def serve(service: EmbeddingService, host: str, port: int) -> None:
    """Serve until interrupted."""
    server = make_server(service, host, port)
    bound_host, bound_port = server.server_address[:2]
    LOGGER.info(f"Serving on http://{bound_host}:{bound_port}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        LOGGER.info("=== Stopping service... ===")
    finally:
        server.server_close()
