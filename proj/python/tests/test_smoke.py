# Copyright 2026 The capreg Authors.
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


import json
import math
import pathlib

import jsonschema
import numpy as np
import pytest

import capreg

ROOT = pathlib.Path(__file__).resolve().parents[2]
SMOKE = """
[train]
mode = dim-c
batch_size = 8
steps = 15
[data]
episodes = 8
episode_length = 20
[probe]
steps = 50
"""


def schema(name):
    return json.loads((ROOT / "schemas" / f"{name}.schema.json").read_text())


def numpy_info_nce(s):
    shifted = s - s.max(axis=1, keepdims=True)
    log_softmax = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    return -np.mean(np.diag(log_softmax))


def test_info_nce_matches_numpy():
    rng = np.random.default_rng(0)
    s = rng.normal(size=(7, 7))
    value, (grad,) = capreg.info_nce(s)
    assert value == pytest.approx(numpy_info_nce(s), abs=1e-12)
    # central differences on one entry
    h = 1e-6
    e = np.zeros_like(s)
    e[2, 5] = h
    numeric = (numpy_info_nce(s + e) - numpy_info_nce(s - e)) / (2 * h)
    assert grad[2, 5] == pytest.approx(numeric, rel=1e-5, abs=1e-9)


def test_info_nce_all_equal_is_log_batch():
    value, _ = capreg.info_nce(np.full((16, 16), 0.3))
    assert value == pytest.approx(math.log(16), abs=1e-12)
    assert capreg.estimate_mi_lower_bound(value, 16) == pytest.approx(0.0, abs=1e-12)


def test_nuclear_norm_and_svd_against_numpy():
    rng = np.random.default_rng(1)
    a = rng.normal(size=(9, 5))
    value, (grad,) = capreg.nuclear_norm(a)
    u, s, vt = np.linalg.svd(a, full_matrices=False)
    assert value == pytest.approx(s.sum(), abs=1e-10)
    np.testing.assert_allclose(grad, u @ vt, atol=1e-9)
    cu, cs, cv = capreg.svd(a)
    np.testing.assert_allclose(np.sort(cs)[::-1], s, atol=1e-10)
    np.testing.assert_allclose(cu @ np.diag(cs) @ cv.T, a, atol=1e-10)


def test_pairwise_and_atlas_losses():
    rng = np.random.default_rng(2)
    z = rng.normal(size=(10, 4))
    bt, (ga, gb) = capreg.barlow_twins(z, z, 0.0)
    assert bt == pytest.approx(0.0, abs=1e-10)
    assert ga.shape == z.shape and gb.shape == z.shape
    nt, _ = capreg.nt_xent(z, z + 0.01 * rng.normal(size=z.shape), 0.5)
    assert math.isfinite(nt)
    ua, _ = capreg.ua_discrepancy(np.eye(4)[[1]])
    assert ua == pytest.approx(0.75, abs=1e-12)
    heads = rng.normal(size=(6, 3, 8))
    mm, (g,) = capreg.mmcr_loss(heads)
    assert -min(8, 6) - 1e-9 <= mm <= 0
    assert g.shape == heads.shape


def test_macro_f1():
    assert capreg.macro_f1([0, 1, 0, 1], [0, 1, 0, 1]) == pytest.approx(1.0)
    assert capreg.macro_f1([0, 0, 1, 1], [0, 0, 0, 0]) == pytest.approx(1 / 3)


def test_gradcheck_suite_passes():
    rows = capreg.gradcheck("all", 20, 0)
    assert rows and all(r["passed"] for r in rows)
    assert {r["group"] for r in rows} == {"op", "loss", "composite", "model"}


def test_config_errors_raise():
    with pytest.raises(capreg.ConfigError):
        capreg.canonical_config("[train]\nmode = nonsense\n")
    text = capreg.canonical_config(SMOKE)
    assert capreg.canonical_config(text) == text


def test_pretrain_probe_and_schemas(tmp_path):
    run = capreg.pretrain(SMOKE, str(tmp_path / "run"))
    assert len(run["trace"]) == 15
    assert [r["step"] for r in run["trace"]] == list(range(15))
    manifest = json.loads(pathlib.Path(run["manifest"]).read_text())
    jsonschema.validate(manifest, schema("run_manifest"))

    report = capreg.probe(str(tmp_path / "run" / "checkpoint.bin"))
    jsonschema.validate(report, schema("probe_report"))
    assert 0.0 <= report["mean_f1"] <= 1.0


def test_cli_outputs_match_schemas(tmp_path):
    cfg = tmp_path / "smoke.ini"
    cfg.write_text(SMOKE)
    code, _, err = capreg.run_cli(["dataset-gen", "--config", str(cfg), "--out-dir", str(tmp_path / "ds")])
    assert code == 0, err
    jsonschema.validate(json.loads((tmp_path / "ds" / "dataset.json").read_text()), schema("dataset"))

    code, _, err = capreg.run_cli(["pretrain", "--config", str(cfg), "--out-dir", str(tmp_path / "r")])
    assert code == 0, err
    header = (tmp_path / "r" / "trace.csv").read_text().splitlines()[0]
    assert header == "step,loss_total,loss_global,loss_local,loss_ua,loss_mmcr"
    code, _, _ = capreg.run_cli(["pretrain", "--config", str(tmp_path / "missing.ini")])
    assert code != 0
