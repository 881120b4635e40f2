"""HTTP annotation service: serves pending pairs and images, accepts votes.

Votes arrive in presentation space ("a"/"b"); the server derives the
left/right randomization for each (pair, annotator) from a presentation seed
and translates to {prev, cur} before storing, so clients never learn which
image came from the newer stage. One serialized writer guards the label
store; image serving is read-only.
"""

from __future__ import annotations

import json
import mimetypes
import re
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import parse_qs, urlparse


from .annotation import LabelStore, VoteRecord
from .exceptions import DuplicateVoteError
from .loop import STATUSES, StagePaths, _read_records
from .rng import derive_seed, make_rng

_IMAGE_ID = re.compile(r"^(\d+)/([A-Za-z0-9._-]+\.png)$")


def presentation_swap(presentation_seed: int) -> bool:
    """True when side "a" shows the newer-stage image (odd seeds swap)."""
    return bool(presentation_seed & 1)


class ServiceState:
    """Server-side view of the stage currently collecting votes."""

    def __init__(self, workdir, votes_per_pair: int = 3, seed: int = 0):
        self.workdir = Path(workdir)
        self.votes_per_pair = votes_per_pair
        self.seed = seed
        self.lock = threading.Lock()
        self.stage_n: int | None = None
        self.store: LabelStore | None = None
        self.records = []
        self.by_id = {}

    # -- stage discovery -------------------------------------------------------

    def _find_voting_stage(self) -> int | None:
        stages_dir = self.workdir / "stages"
        if not stages_dir.is_dir():
            return None
        for entry in sorted(stages_dir.iterdir(), key=lambda p: p.name):
            if entry.name.isdigit():
                paths = StagePaths(self.workdir, int(entry.name))
                if paths.read_status() == "voting":
                    return int(entry.name)
        return None

    def refresh(self):
        with self.lock:
            n = self._find_voting_stage()
            if n == self.stage_n:
                return
            self.stage_n = n
            if n is None:
                self.store = None
                self.records = []
                self.by_id = {}
                return
            paths = StagePaths(self.workdir, n)
            self.records = _read_records(paths.selected)
            self.by_id = {r.pair_id: r for r in self.records}
            self.store = LabelStore(paths.dir, votes_per_pair=self.votes_per_pair)

    # -- api operations ---------------------------------------------------------

    def stage_info(self) -> dict | None:
        self.refresh()
        with self.lock:
            if self.stage_n is None:
                return None
            total = len(self.records)
            fully = sum(1 for r in self.records
                        if self.store.vote_count(r.pair_id) >= self.votes_per_pair)
            pending = sum(max(0, self.votes_per_pair - self.store.vote_count(r.pair_id))
                          for r in self.records)
            return {"stage": self.stage_n, "pairs_total": total,
                    "pairs_fully_voted": fully, "votes_pending": pending}

    def _presentation_seed(self, pair_id: str, annotator_id: str) -> int:
        return derive_seed(self.seed, "present", self.stage_n, pair_id,
                           annotator_id) & 0x7FFFFFFF

    def _annotator_order(self, annotator_id: str):
        rng = make_rng(derive_seed(self.seed, "order", self.stage_n, annotator_id))
        order = rng.permutation(len(self.records))
        return [self.records[i] for i in order]

    def _image_id(self, rel_path: str) -> str:
        # rel paths look like stages/<n>/outputs/<name>.png
        parts = Path(rel_path).parts
        return f"{parts[1]}/{parts[-1]}"

    def next_pair(self, annotator_id: str) -> dict | None:
        self.refresh()
        with self.lock:
            if self.stage_n is None:
                return None
            ordered = self._annotator_order(annotator_id)
            remaining = [r for r in ordered if not self.store.has_vote(r.pair_id, annotator_id)]
            if not remaining:
                return None
            record = remaining[0]
            seed = self._presentation_seed(record.pair_id, annotator_id)
            prev_url = f"/api/images/{self._image_id(record.image_prev)}"
            cur_url = f"/api/images/{self._image_id(record.image_cur)}"
            if presentation_swap(seed):
                image_a, image_b = cur_url, prev_url
            else:
                image_a, image_b = prev_url, cur_url
            return {"pair_id": record.pair_id, "image_a_url": image_a,
                    "image_b_url": image_b, "presentation_seed": seed,
                    "remaining": len(remaining)}

    def submit_vote(self, pair_id: str, annotator_id: str, choice: str) -> int:
        """Returns an HTTP status: 204 stored, 404/409/422 on the error cases."""
        if choice not in ("a", "b"):
            return 422
        self.refresh()
        with self.lock:
            if self.stage_n is None or pair_id not in self.by_id:
                return 404
            seed = self._presentation_seed(pair_id, annotator_id)
            swapped = presentation_swap(seed)
            side_is_cur = (choice == "a") == swapped
            vote = VoteRecord(pair_id=pair_id, annotator_id=annotator_id,
                              choice="cur" if side_is_cur else "prev",
                              timestamp=_now_ms())
            try:
                self.store.append_vote(vote)
            except DuplicateVoteError:
                return 409
            return 204

    def image_path(self, image_id: str) -> Path | None:
        match = _IMAGE_ID.match(image_id)
        if not match:
            return None
        stage, name = match.groups()
        path = (self.workdir / "stages" / stage / "outputs" / name).resolve()
        root = (self.workdir / "stages").resolve()
        if root not in path.parents:
            return None
        return path


def _now_ms() -> int:
    import time
    return int(time.time() * 1000)


class _Handler(BaseHTTPRequestHandler):
    server_version = "rankloop-annotation"

    @property
    def state(self) -> ServiceState:
        return self.server.state  # type: ignore[attr-defined]

    @property
    def ui_dir(self) -> Path | None:
        return self.server.ui_dir  # type: ignore[attr-defined]

    def log_message(self, fmt, *args):  # quiet by default
        if getattr(self.server, "verbose", False):
            super().log_message(fmt, *args)

    # -- helpers ---------------------------------------------------------------

    def _send_json(self, status: int, payload: dict):
        body = json.dumps(payload).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json; charset=utf-8")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _send_empty(self, status: int):
        self.send_response(status)
        self.send_header("Content-Length", "0")
        self.end_headers()

    def _send_file(self, path: Path, cacheable: bool = False):
        data = path.read_bytes()
        ctype = mimetypes.guess_type(path.name)[0] or "application/octet-stream"
        self.send_response(200)
        self.send_header("Content-Type", ctype)
        self.send_header("Content-Length", str(len(data)))
        if cacheable:
            self.send_header("Cache-Control", "public, max-age=31536000, immutable")
        self.end_headers()
        self.wfile.write(data)

    # -- routing -----------------------------------------------------------------

    def do_GET(self):
        url = urlparse(self.path)
        if url.path == "/api/stage":
            info = self.state.stage_info()
            if info is None:
                self._send_json(503, {"error": "no stage is collecting votes"})
            else:
                self._send_json(200, info)
            return
        if url.path == "/api/pairs/next":
            params = parse_qs(url.query)
            annotator = (params.get("annotator") or [""])[0].strip()
            if not annotator:
                self._send_json(400, {"error": "missing annotator id"})
                return
            desc = self.state.next_pair(annotator)
            if desc is None:
                info = self.state.stage_info()
                if info is None:
                    self._send_json(503, {"error": "no stage is collecting votes"})
                else:
                    self._send_empty(204)
            else:
                self._send_json(200, desc)
            return
        if url.path.startswith("/api/images/"):
            image_id = url.path[len("/api/images/"):]
            path = self.state.image_path(image_id)
            if path is None:
                self._send_json(400, {"error": "invalid image id"})
            elif not path.is_file():
                self._send_json(404, {"error": "unknown image"})
            else:
                self._send_file(path, cacheable=True)
            return
        self._serve_static(url.path)

    def do_POST(self):
        url = urlparse(self.path)
        if url.path != "/api/votes":
            self._send_json(404, {"error": "unknown endpoint"})
            return
        try:
            length = int(self.headers.get("Content-Length", "0"))
            payload = json.loads(self.rfile.read(length) or b"{}")
            pair_id = payload["pair_id"]
            annotator_id = payload["annotator_id"]
            choice = payload["choice"]
        except (json.JSONDecodeError, KeyError, ValueError):
            self._send_json(400, {"error": "body must be JSON with pair_id, "
                                           "annotator_id, choice"})
            return
        if not isinstance(annotator_id, str) or not annotator_id:
            self._send_json(400, {"error": "annotator_id must be a nonempty string"})
            return
        status = self.state.submit_vote(str(pair_id), annotator_id, choice)
        if status == 204:
            self._send_empty(204)
        elif status == 404:
            self._send_json(404, {"error": f"unknown pair {pair_id!r}"})
        elif status == 409:
            self._send_json(409, {"error": "duplicate vote"})
        else:
            self._send_json(422, {"error": "choice must be 'a' or 'b'"})

    def _serve_static(self, path: str):
        if self.ui_dir is None:
            self._send_json(404, {"error": "no UI bundle configured"})
            return
        rel = path.lstrip("/") or "index.html"
        target = (self.ui_dir / rel).resolve()
        if self.ui_dir.resolve() not in target.parents and target != self.ui_dir.resolve():
            self._send_json(400, {"error": "bad path"})
            return
        if target.is_dir():
            target = target / "index.html"
        if not target.is_file():
            self._send_json(404, {"error": "not found"})
            return
        self._send_file(target)


def create_server(workdir, port: int = 8787, ui_dir=None, votes_per_pair: int = 3,
                  seed: int = 0, host: str = "127.0.0.1") -> ThreadingHTTPServer:
    """Build (but do not start) the annotation HTTP server."""
    server = ThreadingHTTPServer((host, port), _Handler)
    server.state = ServiceState(workdir, votes_per_pair=votes_per_pair, seed=seed)
    server.ui_dir = Path(ui_dir) if ui_dir else None
    return server
