# Copyright 2026 The excel-wsss Authors. All Rights Reserved.
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

import math
import os
import subprocess

import numpy as np
import pytest

import excel


def test_softmax_rows_sum_to_one():
    rng = np.random.default_rng(0)
    s = excel.softmax_rows(rng.normal(size=(5, 7)).astype(np.float32))
    assert s.shape == (5, 7)
    np.testing.assert_allclose(s.sum(axis=1), 1.0, atol=1e-6)


def test_cosine_matrix_matches_numpy():
    rng = np.random.default_rng(1)
    a = rng.normal(size=(4, 6)).astype(np.float32)
    b = rng.normal(size=(4, 3)).astype(np.float32)
    expect = (a / np.linalg.norm(a, axis=0)).T @ (b / np.linalg.norm(b, axis=0))
    np.testing.assert_allclose(excel.cosine_matrix(a, b), expect, atol=1e-6)


def test_relation_masking():
    rng = np.random.default_rng(2)
    raw, masked = excel.dynamic_relation(rng.normal(size=(8, 10)).astype(np.float32))
    assert np.all(np.isneginf(masked[raw < 0]))
    assert np.all(np.isfinite(np.diag(masked)))
    s = excel.softmax_rows(masked)
    assert np.all(s[raw < 0] == 0.0)


def test_diversity_loss_collinear_bound():
    fd = np.ones((3, 4), dtype=np.float32)
    labels = np.ones((2, 2), dtype=np.uint8)
    assert excel.diversity_loss(fd, labels) == pytest.approx(1 - 1 / (1 + math.exp(-1)), abs=1e-6)


def test_entropy_of_uniform_rows():
    n = 9
    assert excel.attention_entropy(np.full((n, n), 1.0 / n, np.float32)) == pytest.approx(math.log(n), abs=1e-6)


def test_half_overlap_iou():
    gt = np.zeros((8, 8), np.uint8)
    pred = np.zeros((8, 8), np.uint8)
    gt[:, :4] = 1
    pred[:, 2:6] = 1
    report = excel.evaluate(pred, gt, 2)
    assert report["classes"][1]["iou"] == 1.0 / 3.0
    assert excel.evaluate(gt, gt, 2)["miou"] == 1.0


def test_topk_and_kmeans():
    rng = np.random.default_rng(3)
    bank = rng.normal(size=(5, 12)).astype(np.float32)
    q = rng.normal(size=5).astype(np.float32)
    idx, scores = excel.hunt_attributes(q, bank, 4)
    assert list(idx) == list(np.argsort(-(q @ bank), kind="stable")[:4])
    km = excel.cluster_points(rng.normal(size=(3, 40)).astype(np.float32), 4, seed=7)
    assert all(b <= a * (1 + 1e-12) for a, b in zip(km["objective"], km["objective"][1:]))
    assert sorted(set(km["assignment"])) == [0, 1, 2, 3]


def test_errors_map_to_python_exceptions():
    with pytest.raises(excel.NumericError):
        excel.dynamic_relation(np.zeros((2, 3), np.float32))
    with pytest.raises(excel.DataError):
        excel.run_pipeline("/nonexistent/config.json", "/tmp/none")
    assert issubclass(excel.UsageError, excel.ExcelError)


def test_static_pipeline_on_fixture(tmp_path):
    paths = excel.generate_fixtures(str(tmp_path / "fx"), 42)
    summary = excel.run_pipeline(paths["config"], str(tmp_path / "out"), mode="static-only")
    assert summary["stages"] == ["attrs", "static", "eval"]
    assert summary["static_miou"] > summary["vanilla_miou"]
    assert (tmp_path / "out" / "eval.json").exists()


@pytest.mark.skipif("EXCEL_CLI" not in os.environ, reason="CLI path not provided")
def test_cli_usage_exit_code():
    assert subprocess.run([os.environ["EXCEL_CLI"], "frobnicate"], capture_output=True).returncode == 1
