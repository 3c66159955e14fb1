# Copyright 2026 The promptdet Authors.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

import itertools
import struct
import zlib

import pytest

import promptdet

TINY = {
    "dim": 32,
    "num_heads": 4,
    "num_points": 2,
    "enc_layers": 1,
    "dec_layers": 2,
    "prompt_blocks": 2,
    "text_layers": 1,
    "num_queries": 20,
    "select_k": 20,
    "backbone_channels": [8, 16, 24, 32, 32],
    "vocab": ["red", "blue", "circle", "square"],
}


def png(shade: int, size: int = 64) -> bytes:
    row = b"\x00" + bytes([shade, 90, 200 - shade // 2]) * size
    raw = row * size

    def chunk(kind: bytes, data: bytes) -> bytes:
        body = kind + data
        return struct.pack(">I", len(data)) + body + struct.pack(">I", zlib.crc32(body))

    header = struct.pack(">IIBBBBB", size, size, 8, 2, 0, 0, 0)
    return b"\x89PNG\r\n\x1a\n" + chunk(b"IHDR", header) + chunk(b"IDAT", zlib.compress(raw)) + chunk(b"IEND", b"")


@pytest.fixture()
def detector():
    return promptdet.Detector(model_config=TINY, seed=1, max_sessions=4)


def box_prompt(cx, cy, label=None):
    p = {"kind": "box", "boxes": [[cx, cy, 0.2, 0.2]]}
    if label:
        p["label"] = label
    return p


def test_geometry():
    assert promptdet.iou([0.5, 0.5, 0.2, 0.2], [0.5, 0.5, 0.2, 0.2]) == pytest.approx(1.0)
    assert promptdet.giou([0.2, 0.2, 0.1, 0.1], [0.8, 0.8, 0.1, 0.1]) < 0.0


def test_assign_matches_brute_force():
    cost = [[4.0, 1.0, 3.0], [2.0, 0.0, 5.0], [3.0, 2.0, 2.0]]
    pairs, total = promptdet.assign(cost)
    best = min(sum(cost[r][c] for r, c in enumerate(p)) for p in itertools.permutations(range(3)))
    assert total == pytest.approx(best)
    assert sum(cost[r][c] for r, c in pairs) == pytest.approx(best)


def test_generate_corpus_is_deterministic(tmp_path):
    a = promptdet.generate_corpus(str(tmp_path / "a"), seed=7, train_images=6, test_images=2, count_images=1)
    b = promptdet.generate_corpus(str(tmp_path / "b"), seed=7, train_images=6, test_images=2, count_images=1)
    for split in ("train", "test", "counting"):
        assert open(a[split], "rb").read() == open(b[split], "rb").read()


def test_session_and_detect(detector):
    s = detector.create_session(png(30))
    assert s["width"] == 64
    out = detector.detect(s["session_id"], {"mode": "text", "names": ["red circle"], "threshold": 0.0})
    assert len(out["detections"]) == 20
    again = detector.detect(s["session_id"], {"mode": "text", "names": ["red circle"], "threshold": 0.0})
    assert out["detections"] == again["detections"]
    detector.detect(s["session_id"], {"mode": "interactive", "prompts": [box_prompt(0.4, 0.4)]})
    assert detector.backbone_forwards == 1


def test_errors_carry_code_and_field(detector):
    with pytest.raises(promptdet.ApiError) as e:
        detector.create_session(b"not an image")
    assert e.value.status == 400 and e.value.code == "invalid_image"
    s = detector.create_session(png(60))
    with pytest.raises(promptdet.ApiError) as e:
        detector.detect(s["session_id"], {"mode": "text", "prompts": [box_prompt(0.5, 0.5)]})
    assert e.value.field == "prompts"
    with pytest.raises(promptdet.ApiError) as e:
        detector.detect("missing", {"mode": "text", "names": ["x"]})
    assert e.value.status == 404


def test_embedding_library(detector):
    s = detector.create_session(png(90))
    made = detector.create_embedding(
        {"label": "blob", "examples": [{"session_id": s["session_id"], "prompts": box_prompt(0.3, 0.3)}]}
    )
    assert detector.get_embedding("blob")["vector"] == made["vector"]
    assert [e["label"] for e in detector.list_embeddings()] == ["blob"]
    with pytest.raises(promptdet.ApiError) as e:
        detector.create_embedding({"label": "blob", "vector": made["vector"]})
    assert e.value.status == 409
    out = detector.detect(s["session_id"], {"mode": "generic", "embeddings": ["blob"], "threshold": 0.0})
    assert {d["label"] for d in out["detections"]} == {"blob"}
    detector.delete_embedding("blob")
    with pytest.raises(promptdet.ApiError):
        detector.get_embedding("blob")


def test_lru_eviction(detector):
    ids = [detector.create_session(png(10 * i))["session_id"] for i in range(5)]
    with pytest.raises(promptdet.ApiError) as e:
        detector.get_session(ids[0])
    assert e.value.status == 404
    assert detector.get_session(ids[-1])["session_id"] == ids[-1]
    assert detector.model_info()["active_sessions"] == 4

