"""Annotation HTTP service.

Serves cluster summaries and applies cluster-level label submissions using
exactly the same pure/mixed rules as the simulated annotator, so a session
that repeats the oracle's clicks reproduces its label files byte for byte.
Payloads are line-oriented text records; the schema lives in docs/api.md.
"""

from __future__ import annotations

import os
import threading
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import numpy as np

from . import synth
from .activelabel import (
    LabelSet,
    SceneLabels,
    apply_mixed,
    apply_pure,
    label_statistics,
    load_labels,
    save_labels,
)
from .geometry import project_points


class AnnotateError(Exception):
    def __init__(self, status: int, category: str, message: str):
        super().__init__(message)
        self.status = status
        self.category = category


MAX_SCATTER_POINTS = 2000


@dataclass
class SceneStore:
    scene_id: str
    frame: synth.SceneFrame
    labels: SceneLabels
    clusters: list[np.ndarray]
    finalized: set[int] = field(default_factory=set)

    @classmethod
    def load(cls, scene_id: str, scene_path: Path, labels_path: Path) -> "SceneStore":
        frame = synth.load_scene(scene_path)
        labels = load_labels(labels_path)
        clusters = labels.annotation_clusters()
        store = cls(scene_id=scene_id, frame=frame, labels=labels, clusters=clusters)
        covered = labels.label_set.all_indices()
        for cid, members in enumerate(clusters):
            if any(int(i) in covered for i in members):
                store.finalized.add(cid)
        return store

    def status(self, cid: int) -> str:
        if cid not in self.finalized:
            return "pending"
        members = self.clusters[cid]
        if any(int(i) in self.labels.label_set.negative for i in members):
            return "mixed-labeled"
        return "pure-labeled"


class AnnotationService:
    """In-memory label store with single-writer mutation and idempotent
    submissions keyed by client request id."""

    def __init__(self, scenes_dir: Path, labels_dir: Path, readonly: bool = False):
        self.labels_dir = Path(labels_dir)
        self.readonly = readonly
        self._write_lock = threading.Lock()
        self._request_cache: dict[str, str] = {}
        self.stores: dict[str, SceneStore] = {}
        for labels_path in sorted(self.labels_dir.glob("labels_*.wlb")):
            scene_id = labels_path.stem.removeprefix("labels_")
            scene_path = Path(scenes_dir) / f"scene_{scene_id}.wlb"
            if not scene_path.exists():
                raise FileNotFoundError(f"no scene file for labels {labels_path.name}")
            self.stores[scene_id] = SceneStore.load(scene_id, scene_path, labels_path)
        if not self.stores:
            raise FileNotFoundError(f"no labels_*.wlb files in {labels_dir}")

    # ------------------------------------------------------------------
    def scene(self, scene_id: str) -> SceneStore:
        store = self.stores.get(scene_id)
        if store is None:
            raise AnnotateError(404, "not_found", f"unknown scene {scene_id!r}")
        return store

    def clusters_payload(self, scene_id: str) -> str:
        store = self.scene(scene_id)
        frame = store.frame
        lines = [
            f"scene id={scene_id} points={frame.num_points} classes={frame.num_classes}"
        ]
        for c, name in enumerate(frame.config.class_names):
            rgb = (synth.CLASS_COLORS[c] * 255).astype(int)
            color = f"#{rgb[0]:02x}{rgb[1]:02x}{rgb[2]:02x}"
            lines.append(f"class id={c} name={name} color={color}")
        for cid, members in enumerate(store.clusters):
            pts = frame.points[members]
            bbox = (
                f"{pts[:, 0].min():.3f},{pts[:, 1].min():.3f},"
                f"{pts[:, 0].max():.3f},{pts[:, 1].max():.3f}"
            )
            line = (
                f"cluster id={cid} count={len(members)} status={store.status(cid)} bbox={bbox}"
            )
            crop = self._crop_reference(frame, members)
            if crop is not None:
                line += " " + crop
            lines.append(line)
            if len(members) > MAX_SCATTER_POINTS:
                stride = int(np.ceil(len(members) / MAX_SCATTER_POINTS))
                shown = members[::stride][:MAX_SCATTER_POINTS]
            else:
                shown = members
            for i in shown:
                p = frame.points[int(i)]
                lines.append(
                    f"point cluster={cid} index={int(i)} x={p[0]:.3f} y={p[1]:.3f} z={p[2]:.3f}"
                )
        return "\n".join(lines) + "\n"

    @staticmethod
    def _crop_reference(frame, members) -> str | None:
        for ci, cam in enumerate(frame.cameras):
            hits = project_points(frame.points[members], cam, ci)
            if len(hits) >= max(1, len(members) // 4):
                return (
                    f"crop camera={ci} u0={hits.u.min():.1f} v0={hits.v.min():.1f} "
                    f"u1={hits.u.max():.1f} v1={hits.v.max():.1f}"
                )
        return None

    def progress_payload(self) -> str:
        label_sets = [s.labels.label_set for s in self.stores.values()]
        stats = label_statistics(label_sets)
        total_clusters = sum(len(s.clusters) for s in self.stores.values())
        done = sum(len(s.finalized) for s in self.stores.values())
        lines = [
            f"progress scenes={len(self.stores)} annotated_clusters={done} total_clusters={total_clusters}",
            f"progress kind=sparse count={stats.sparse} rate={stats.sparse_rate:.6f}",
            f"progress kind=propagated count={stats.propagated} rate={stats.propagated_rate:.6f}",
            f"progress kind=negative count={stats.negative} rate={stats.negative_rate:.6f}",
            f"progress kind=coverage count={stats.sparse_in_training + stats.propagated + stats.negative} rate={stats.coverage:.6f}",
        ]
        return "\n".join(lines) + "\n"

    # ------------------------------------------------------------------
    def submit(self, scene_id: str, body: str) -> str:
        if self.readonly:
            raise AnnotateError(403, "readonly", "label mutation disabled")
        request_id, cluster_id, mode, assigns = _parse_submission(body)
        cache_key = f"{scene_id}:{request_id}" if request_id else None
        with self._write_lock:
            if cache_key and cache_key in self._request_cache:
                return self._request_cache[cache_key]
            store = self.scene(scene_id)
            if not 0 <= cluster_id < len(store.clusters):
                raise AnnotateError(404, "not_found", f"unknown cluster {cluster_id}")
            if cluster_id in store.finalized:
                raise AnnotateError(409, "conflict", f"cluster {cluster_id} already finalized")
            members = store.clusters[cluster_id]
            num_classes = store.frame.num_classes
            member_set = {int(i) for i in members}
            for cls, point in assigns:
                if not 0 <= cls < num_classes:
                    raise AnnotateError(422, "invalid", f"class {cls} out of range")
                if point is not None and point not in member_set:
                    raise AnnotateError(422, "invalid", f"point {point} not in cluster")
            label_set = store.labels.label_set
            before = (len(label_set.sparse), len(label_set.propagated), len(label_set.negative))
            if mode == "pure":
                cls, point = assigns[0]
                if point is None:
                    # the click lands on the cluster medoid, like the oracle
                    from .activelabel import medoid_index

                    point = medoid_index(store.frame.points, members)
                apply_pure(label_set, members, cls, point)
            else:
                picks = []
                for cls, point in assigns:
                    if point is None:
                        raise AnnotateError(422, "invalid", "mixed mode needs a point per class")
                    picks.append((cls, point))
                if len({c for c, _ in picks}) < 2:
                    raise AnnotateError(422, "invalid", "mixed mode needs >= 2 distinct classes")
                apply_mixed(label_set, members, picks)
            label_set.validate()
            store.finalized.add(cluster_id)
            save_labels(store.labels, self.labels_dir / f"labels_{scene_id}.wlb")
            after = (len(label_set.sparse), len(label_set.propagated), len(label_set.negative))
            response = (
                f"ok scene={scene_id} cluster={cluster_id} "
                f"sparse={after[0] - before[0]} propagated={after[1] - before[1]} "
                f"negative={after[2] - before[2]}\n"
            )
            if cache_key:
                self._request_cache[cache_key] = response
            return response


def _parse_submission(body: str):
    request_id = None
    cluster_id = None
    mode = None
    assigns: list[tuple[int, int | None]] = []
    for raw in body.splitlines():
        line = raw.strip()
        if not line:
            continue
        parts = line.split()
        kind = parts[0]
        fields = {}
        for part in parts[1:]:
            key, _, value = part.partition("=")
            fields[key] = value
        try:
            if kind == "request":
                request_id = fields.get("id")
            elif kind == "cluster":
                cluster_id = int(fields["id"])
            elif kind == "mode":
                mode = parts[1] if len(parts) > 1 else None
            elif kind == "assign":
                cls = int(fields["class"])
                point = int(fields["point"]) if "point" in fields else None
                assigns.append((cls, point))
            else:
                raise AnnotateError(422, "invalid", f"unknown record {kind!r}")
        except (KeyError, ValueError, IndexError) as exc:
            raise AnnotateError(422, "invalid", f"malformed record {line!r}") from exc
    if cluster_id is None or mode not in ("pure", "mixed") or not assigns:
        raise AnnotateError(422, "invalid", "submission needs cluster, mode and assignments")
    if mode == "pure" and len(assigns) != 1:
        raise AnnotateError(422, "invalid", "pure mode takes exactly one class")
    if mode == "mixed" and len(assigns) < 2:
        raise AnnotateError(422, "invalid", "mixed mode needs >= 2 assignments")
    return request_id, cluster_id, mode, assigns


_CONTENT_TYPES = {
    ".html": "text/html; charset=utf-8",
    ".js": "text/javascript; charset=utf-8",
    ".css": "text/css; charset=utf-8",
    ".map": "application/json",
    ".png": "image/png",
    ".svg": "image/svg+xml",
}


def make_handler(service: AnnotationService, assets_dir: Path | None):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, fmt, *args):  # quiet by default
            pass

        def _send(self, status: int, body: str, content_type="text/plain; charset=utf-8"):
            data = body.encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", content_type)
            self.send_header("Content-Length", str(len(data)))
            self.send_header("Access-Control-Allow-Origin", "*")
            self.end_headers()
            self.wfile.write(data)

        def _send_error(self, exc: AnnotateError):
            self._send(exc.status, f"error category={exc.category} message=\"{exc}\"\n")

        def do_GET(self):
            try:
                path = self.path.split("?", 1)[0]
                if path == "/api/progress":
                    self._send(200, service.progress_payload())
                elif path.startswith("/api/clusters/"):
                    scene_id = path.removeprefix("/api/clusters/").strip("/")
                    self._send(200, service.clusters_payload(scene_id))
                elif path == "/api/scenes":
                    lines = [f"scene id={sid}" for sid in sorted(service.stores)]
                    self._send(200, "\n".join(lines) + "\n")
                else:
                    self._serve_static(path)
            except AnnotateError as exc:
                self._send_error(exc)

        def do_POST(self):
            try:
                path = self.path.split("?", 1)[0]
                if not path.startswith("/api/labels/"):
                    raise AnnotateError(404, "not_found", f"no POST route {path!r}")
                scene_id = path.removeprefix("/api/labels/").strip("/")
                length = int(self.headers.get("Content-Length", 0))
                body = self.rfile.read(length).decode("utf-8")
                self._send(200, service.submit(scene_id, body))
            except AnnotateError as exc:
                self._send_error(exc)

        def _serve_static(self, path: str):
            if assets_dir is None:
                raise AnnotateError(404, "not_found", "no assets directory configured")
            rel = "index.html" if path in ("", "/") else path.lstrip("/")
            target = (assets_dir / rel).resolve()
            if not str(target).startswith(str(assets_dir.resolve())) or not target.is_file():
                raise AnnotateError(404, "not_found", f"no asset {rel!r}")
            data = target.read_bytes()
            self.send_response(200)
            ctype = _CONTENT_TYPES.get(target.suffix, "application/octet-stream")
            self.send_header("Content-Type", ctype)
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)

    return Handler


class SessionLock:
    """One in-flight annotation session per labels artifact."""

    def __init__(self, labels_dir: Path):
        self.path = Path(labels_dir) / ".weaklab-annotate.lock"

    def __enter__(self):
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise AnnotateError(
                409, "locked", f"another session holds {self.path}"
            ) from None
        with os.fdopen(fd, "w") as fh:
            fh.write(str(os.getpid()))
        return self

    def __exit__(self, *exc):
        self.path.unlink(missing_ok=True)


def serve_annotate(
    scenes_dir,
    labels_dir,
    port: int = 8749,
    assets_dir=None,
    readonly: bool = False,
    ready_callback=None,
):
    """Run the annotation service until interrupted."""
    service = AnnotationService(Path(scenes_dir), Path(labels_dir), readonly=readonly)
    assets = Path(assets_dir) if assets_dir else None
    with SessionLock(Path(labels_dir)):
        server = ThreadingHTTPServer(("127.0.0.1", port), make_handler(service, assets))
        if ready_callback is not None:
            ready_callback(server, service)
        try:
            server.serve_forever()
        finally:
            server.server_close()
