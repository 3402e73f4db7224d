import pytest
from fastapi.testclient import TestClient

from dualimpute.service import create_app


@pytest.fixture(scope="module")
def client():
    return TestClient(create_app())


def synth_payload(rows=40, cols=3, seed=0):
    return {"spec": {"rows": rows, "cols": cols,
                     "corr": {"kind": "ar1", "rho": 0.7}},
            "seed": seed}


TRAIN_CONFIG = {
    "seed": 1,
    "train": {"epochs": 2, "embed_dim": 4, "d_k": 4, "d_v": 4,
              "d_feat": 4, "trunk_hidden": 4},
    "gain": {"epochs": 2, "hidden": [8, 8], "attn_dim": 4},
    "mice": {"max_iterations": 2},
}


class TestHealth:
    def test_health(self, client):
        resp = client.get("/health")
        assert resp.status_code == 200
        body = resp.json()
        assert body["status"] == "ok"
        assert "version" in body


class TestSynth:
    def test_synth_shapes(self, client):
        resp = client.post("/synth", json=synth_payload())
        assert resp.status_code == 200
        body = resp.json()
        assert len(body["data"]) == 40
        assert len(body["columns"]) == 3
        assert set(body["labels"]) <= {0.0, 1.0}

    def test_synth_deterministic(self, client):
        r1 = client.post("/synth", json=synth_payload(seed=5)).json()
        r2 = client.post("/synth", json=synth_payload(seed=5)).json()
        assert r1 == r2

    def test_unknown_key_is_422(self, client):
        resp = client.post("/synth", json={"bogus": 1})
        assert resp.status_code == 422


class TestMask:
    def test_mask_hides_cells(self, client):
        data = client.post("/synth", json=synth_payload()).json()["data"]
        resp = client.post("/mask", json={
            "data": data,
            "spec": {"mechanism": "MCAR", "mcar_rate_low": 0.3,
                     "mcar_rate_high": 0.3},
            "seed": 3})
        assert resp.status_code == 200
        body = resp.json()
        nulls = sum(v is None for row in body["data"] for v in row)
        zeros = sum(b == 0 for row in body["mask"] for b in row)
        assert nulls == zeros > 0


class TestTrainImputeEvaluate:
    def test_full_cycle(self, client):
        synth = client.post("/synth", json=synth_payload(rows=50)).json()
        resp = client.post("/train", json={
            "data": synth["data"], "columns": synth["columns"],
            "labels": synth["labels"], "config": TRAIN_CONFIG})
        assert resp.status_code == 200, resp.text
        body = resp.json()
        assert len(body["history"]) == 2
        checkpoint = body["checkpoint"]
        assert checkpoint["format"] == "dualimpute-checkpoint"

        masked = client.post("/mask", json={
            "data": synth["data"],
            "spec": {"mechanism": "MCAR", "mcar_rate_low": 0.2,
                     "mcar_rate_high": 0.2},
            "seed": 4}).json()

        imp = client.post("/impute", json={
            "checkpoint": checkpoint, "data": masked["data"],
            "columns": synth["columns"], "k_passes": 2})
        assert imp.status_code == 200, imp.text
        ibody = imp.json()
        # observed cells pass through exactly
        for row_in, row_out, row_mask in zip(masked["data"], ibody["imputed"],
                                             masked["mask"]):
            for v_in, v_out, bit in zip(row_in, row_out, row_mask):
                if bit == 1:
                    assert v_out == v_in
                else:
                    assert v_out is not None
        assert abs(sum(ibody["path_fractions"].values()) - 1.0) < 1e-9
        codes = {c for row in ibody["provenance"] for c in row}
        assert codes <= {"O", "M", "G", "F"}

        ev = client.post("/evaluate", json={
            "truth": synth["data"], "imputed": ibody["imputed"],
            "mask": masked["mask"], "labels": synth["labels"],
            "scores": ibody["predictions"]})
        assert ev.status_code == 200
        ebody = ev.json()
        assert ebody["rmse"] >= 0.0
        assert 0.0 <= ebody["auroc"] <= 1.0

    def test_impute_column_mismatch_is_422(self, client):
        synth = client.post("/synth", json=synth_payload(rows=30)).json()
        ck = client.post("/train", json={
            "data": synth["data"], "columns": synth["columns"],
            "labels": synth["labels"], "config": TRAIN_CONFIG}).json()["checkpoint"]
        resp = client.post("/impute", json={
            "checkpoint": ck,
            "data": [[1.0, None]], "columns": ["a", "b"], "k_passes": 1})
        assert resp.status_code == 422


class TestBenchmarkEndpoint:
    def test_benchmark_runs(self, client):
        resp = client.post("/benchmark", json={"config": {
            "seed": 2,
            "dataset": {"synth": {"rows": 120, "cols": 4}},
            "masking": {"spec": {"mechanism": "MCAR", "mcar_rate_low": 0.2,
                                 "mcar_rate_high": 0.2}},
            "methods": [{"name": "mean"}, {"name": "mice"}],
            "mice": {"max_iterations": 2},
        }})
        assert resp.status_code == 200, resp.text
        report = resp.json()["report"]
        assert set(report["methods"]) == {"mean", "mice"}
        for res in report["methods"].values():
            assert res["error"] is None

    def test_bad_benchmark_config_is_422(self, client):
        resp = client.post("/benchmark", json={"config": {
            "dataset": {"synth": {"rows": 10}}, "nonsense": True}})
        assert resp.status_code == 422
