"""Sidecar acceptance: wire contract and converter determinism.

Run with `pytest -s tests/test_acceptance.py` for the PASS lines.
"""

from __future__ import annotations

import base64
import io
import json
from pathlib import Path

import numpy as np
from fastapi.testclient import TestClient
from PIL import Image

from tripss_sidecar.app import create_app
from tripss_sidecar.backends import HashBackend
from tripss_sidecar.convert import convert_summe, convert_tvsum

FIXTURES = Path(__file__).parent / "fixtures"


def _passed(name: str) -> None:
    print(f"\n[ACCEPTANCE] {name}: PASS")


def _png_b64(seed: int = 0) -> str:
    rng = np.random.default_rng(seed)
    img = Image.fromarray(rng.integers(0, 255, (12, 16, 3), dtype=np.uint8))
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def test_wire_contract():
    client = TestClient(create_app(HashBackend()))
    img = _png_b64(1)

    r_img = client.post("/embed/image", json={"image": img})
    assert r_img.status_code == 200 and r_img.json()["dim"] == 2048
    assert len(r_img.json()["vector"]) == 2048

    r_txt = client.post("/embed/text", json={"text": "hello"})
    assert r_txt.status_code == 200 and r_txt.json()["dim"] == 768
    assert len(r_txt.json()["vector"]) == 768

    assert client.post("/embed/image", json={"image": img}).content == r_img.content
    assert client.post("/embed/text", json={"text": "hello"}).content == r_txt.content
    _passed("wire contract: /embed/image dim 2048, /embed/text dim 768, "
            "repeated requests byte-identical")


def test_converters_deterministic_and_schema_valid(tmp_path):
    def validate(data):
        assert isinstance(data["video_id"], str)
        assert data["fps"] > 0 and isinstance(data["n_frames"], int)
        assert len(data["annotators"]) >= 1
        for ann in data["annotators"]:
            assert ann == sorted(ann)
            assert all(isinstance(i, int) and 0 <= i < data["n_frames"] for i in ann)

    t1 = convert_tvsum(FIXTURES / "tvsum_fixture.tsv", FIXTURES / "tvsum_video_meta.json", tmp_path / "t1")
    t2 = convert_tvsum(FIXTURES / "tvsum_fixture.tsv", FIXTURES / "tvsum_video_meta.json", tmp_path / "t2")
    for p1, p2 in zip(t1, t2):
        assert p1.read_bytes() == p2.read_bytes()
        validate(json.loads(p1.read_text(encoding="utf-8")))

    s1 = convert_summe(FIXTURES / "summe_fixture.mat", tmp_path / "s1")
    s2 = convert_summe(FIXTURES / "summe_fixture.mat", tmp_path / "s2")
    assert s1.read_bytes() == s2.read_bytes()
    validate(json.loads(s1.read_text(encoding="utf-8")))
    _passed("converters deterministic and schema-valid on bundled TVSum-TSV "
            "and SumMe-MAT fixtures")
