import shutil
import subprocess
import sys
import threading
import urllib.error
import urllib.request
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import pytest

from weaklab.cli import main, parse_seed_range
from weaklab.server import serve_annotate

BENCH_CONFIG = Path(__file__).resolve().parents[1] / "bench" / "config" / "synth.cfg"

SMALL_CONFIG = """
num_classes = 4
object_counts = 2,1,1
points_per_object = 70
ground_points = 350
ground_extent = 20.0
noise_sigma = 0.02
num_cameras = 2
image_width = 64
image_height = 32
mixed_pair_fraction = 0.5
"""


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    config = root / "synth.cfg"
    config.write_text(SMALL_CONFIG, encoding="utf-8")
    assert main(["synth", "--config", str(config), "--seeds", "0..2", "--out", str(root / "scenes")]) == 0
    assert main(["synth", "--config", str(config), "--seeds", "100..100", "--out", str(root / "val")]) == 0
    assert (
        main(
            [
                "label",
                "--scenes",
                str(root / "scenes"),
                "--out",
                str(root / "labels"),
                "--emit-clicks",
                str(root / "clicks.txt"),
                "--text-export",
            ]
        )
        == 0
    )
    assert (
        main(["superpixel", "--scenes", str(root / "scenes"), "--out", str(root / "spx"), "--n", "16", "--iterations", "3"])
        == 0
    )
    return root


def test_parse_seed_range():
    assert parse_seed_range("0..4") == [0, 1, 2, 3, 4]
    assert parse_seed_range("3,5,9") == [3, 5, 9]


def test_missing_config_exit_code_and_category(tmp_path, capsys):
    code = main(["synth", "--config", str(tmp_path / "nope.cfg"), "--seeds", "0..1", "--out", str(tmp_path / "o")])
    assert code == 2
    err = capsys.readouterr().err
    assert err.startswith("weaklab: error: config:")


def test_synth_outputs_and_manifest(workspace):
    scenes = sorted((workspace / "scenes").glob("scene_*.wlb"))
    assert len(scenes) == 3
    manifest = (workspace / "scenes" / "manifest.txt").read_text()
    assert "config_hash" in manifest and "seeds = 0,1,2" in manifest


def test_end_to_end_em_eval(workspace):
    out = workspace / "em_run"
    code = main(
        [
            "em",
            "--scenes", str(workspace / "scenes"),
            "--labels", str(workspace / "labels"),
            "--superpixels", str(workspace / "spx"),
            "--val-scenes", str(workspace / "val"),
            "--out", str(out),
            "--epochs", "2",
            "--em-iterations", "1",
        ]
    )
    assert code == 0
    assert (out / "checkpoint.wlb").is_file()
    assert (out / "metrics.txt").is_file()
    assert (out / "em_miou.png").is_file()
    metrics = (out / "metrics.txt").read_text()
    assert "miou iteration=0" in metrics and "lr=" in metrics

    eval_out = workspace / "eval_run"
    code = main(["eval", "--scenes", str(workspace / "val"), "--checkpoint", str(out / "checkpoint.wlb"), "--out", str(eval_out)])
    assert code == 0
    rep = (eval_out / "report.txt").read_text()
    assert rep.splitlines()[0] == "kind|class|name|value"
    assert "miou|-|all|" in rep
    assert (eval_out / "iou_per_class.png").is_file()


def test_rectify_cli_methods(workspace):
    em_out = workspace / "em_run"
    for method in ("act-fsf", "fix"):
        out = workspace / f"rect_{method.replace('-', '_')}"
        code = main(
            [
                "rectify",
                "--scenes", str(workspace / "scenes"),
                "--labels", str(workspace / "labels"),
                "--superpixels", str(workspace / "spx"),
                "--out", str(out),
                "--checkpoint", str(em_out / "checkpoint.wlb"),
                "--method", method,
            ]
        )
        assert code == 0
        assert (out / "rectify_report.txt").read_text().startswith(f"rectify method={method}")


def test_console_script_installed():
    proc = subprocess.run(["weaklab", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0


# ---------------------------------------------------------------------------
# annotation server


@contextmanager
def running_server(scenes_dir, labels_dir, readonly=False, assets=None):
    holder = {}
    ready = threading.Event()

    def on_ready(server, service):
        holder["server"] = server
        holder["service"] = service
        ready.set()

    thread = threading.Thread(
        target=serve_annotate,
        kwargs=dict(
            scenes_dir=scenes_dir,
            labels_dir=labels_dir,
            port=0,
            assets_dir=assets,
            readonly=readonly,
            ready_callback=on_ready,
        ),
        daemon=True,
    )
    thread.start()
    assert ready.wait(10), "server did not start"
    port = holder["server"].server_address[1]
    try:
        yield port
    finally:
        holder["server"].shutdown()
        thread.join(timeout=5)


def http(method, port, path, body=None):
    req = urllib.request.Request(
        f"http://127.0.0.1:{port}{path}",
        data=body.encode("utf-8") if body else None,
        method=method,
    )
    try:
        with urllib.request.urlopen(req, timeout=10) as resp:
            return resp.status, resp.read().decode("utf-8")
    except urllib.error.HTTPError as exc:
        return exc.code, exc.read().decode("utf-8")


def parse_clicks(path):
    sessions = {}
    scene = None
    for line in Path(path).read_text().splitlines():
        if line.startswith("scene id="):
            scene = line.split("=", 1)[1]
            sessions[scene] = []
        elif line.startswith("click "):
            sessions[scene].append(line)
    return sessions


def click_to_body(line, request_id):
    fields = dict(part.split("=", 1) for part in line.split()[1:])
    body = [f"request id={request_id}", f"cluster id={fields['cluster']}", f"mode {fields['mode']}"]
    if fields["mode"] == "pure":
        body.append(f"assign class={fields['class']}")
    else:
        for pair in fields["assigns"].split(","):
            cls, point = pair.split(":")
            body.append(f"assign class={cls} point={point}")
    return "\n".join(body) + "\n"


@pytest.fixture()
def annotation_setup(workspace, tmp_path):
    labels_dir = tmp_path / "labels_session"
    labels_dir.mkdir()
    assert (
        main(
            [
                "label",
                "--scenes", str(workspace / "scenes"),
                "--out", str(labels_dir),
                "--skip-annotation",
            ]
        )
        == 0
    )
    return labels_dir


def test_server_get_clusters_and_scatter_limits(workspace, annotation_setup):
    with running_server(workspace / "scenes", annotation_setup) as port:
        status, scenes_body = http("GET", port, "/api/scenes")
        assert status == 200
        scene_id = scenes_body.splitlines()[0].split("=")[1]
        status, body = http("GET", port, f"/api/clusters/{scene_id}")
        assert status == 200
        lines = body.splitlines()
        assert lines[0].startswith(f"scene id={scene_id}")
        clusters = [l for l in lines if l.startswith("cluster ")]
        points = [l for l in lines if l.startswith("point ")]
        assert clusters and points
        assert all("status=pending" in c for c in clusters)
        # scatter is capped per cluster
        from collections import Counter

        per_cluster = Counter(l.split()[1] for l in points)
        assert max(per_cluster.values()) <= 2000
        # unknown scene 404
        status, _ = http("GET", port, "/api/clusters/zzz")
        assert status == 404


def test_server_replays_oracle_clicks_byte_identical(workspace, annotation_setup):
    clicks = parse_clicks(workspace / "clicks.txt")
    with running_server(workspace / "scenes", annotation_setup) as port:
        for scene_id, lines in clicks.items():
            for k, line in enumerate(lines):
                status, body = http(
                    "POST", port, f"/api/labels/{scene_id}", click_to_body(line, f"r{scene_id}-{k}")
                )
                assert status == 200, body
        status, progress = http("GET", port, "/api/progress")
        assert status == 200 and "kind=sparse" in progress
    for ref in sorted((workspace / "labels").glob("labels_*.wlb")):
        produced = annotation_setup / ref.name
        assert produced.read_bytes() == ref.read_bytes(), f"mismatch for {ref.name}"


def test_server_conflict_and_idempotency(workspace, annotation_setup):
    clicks = parse_clicks(workspace / "clicks.txt")
    scene_id, lines = next(iter(clicks.items()))
    body = click_to_body(lines[0], "fixed-request-id")
    with running_server(workspace / "scenes", annotation_setup) as port:
        status1, resp1 = http("POST", port, f"/api/labels/{scene_id}", body)
        assert status1 == 200
        # replay with the same request id: cached response, no double apply
        status2, resp2 = http("POST", port, f"/api/labels/{scene_id}", body)
        assert status2 == 200 and resp2 == resp1
        # same cluster, different request id -> 409
        status3, resp3 = http("POST", port, f"/api/labels/{scene_id}", click_to_body(lines[0], "other-id"))
        assert status3 == 409 and "category=conflict" in resp3


def test_server_rejects_malformed_without_mutation(workspace, annotation_setup):
    scene_files = {p.name: p.read_bytes() for p in annotation_setup.glob("labels_*.wlb")}
    clicks = parse_clicks(workspace / "clicks.txt")
    scene_id = next(iter(clicks))
    with running_server(workspace / "scenes", annotation_setup) as port:
        # mixed mode with a single class
        bad = f"request id=x\ncluster id=0\nmode mixed\nassign class=1 point=5\n"
        status, body = http("POST", port, f"/api/labels/{scene_id}", bad)
        assert status == 422 and "category=invalid" in body
        # unknown cluster
        status, _ = http("POST", port, f"/api/labels/{scene_id}", "cluster id=9999\nmode pure\nassign class=1\n")
        assert status == 404
        # garbage record
        status, _ = http("POST", port, f"/api/labels/{scene_id}", "blargh\n")
        assert status == 422
    for name, before in scene_files.items():
        assert (annotation_setup / name).read_bytes() == before


def test_server_readonly_blocks_posts(workspace, annotation_setup):
    clicks = parse_clicks(workspace / "clicks.txt")
    scene_id, lines = next(iter(clicks.items()))
    with running_server(workspace / "scenes", annotation_setup, readonly=True) as port:
        status, body = http("POST", port, f"/api/labels/{scene_id}", click_to_body(lines[0], "x"))
        assert status == 403


def test_server_session_lock(workspace, annotation_setup):
    with running_server(workspace / "scenes", annotation_setup) as port:
        with pytest.raises(Exception):
            serve_annotate(workspace / "scenes", annotation_setup, port=0)
    # lock released after shutdown
    assert not (annotation_setup / ".weaklab-annotate.lock").exists()


def test_server_static_assets(workspace, annotation_setup, tmp_path):
    assets = tmp_path / "assets"
    assets.mkdir()
    (assets / "index.html").write_text("<html>weaklab</html>", encoding="utf-8")
    with running_server(workspace / "scenes", annotation_setup, assets=assets) as port:
        status, body = http("GET", port, "/")
        assert status == 200 and "weaklab" in body
        status, _ = http("GET", port, "/../etc/passwd")
        assert status == 404
