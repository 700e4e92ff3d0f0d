"""Smoke test for the Python bindings.

Install first with
    pip install -e crates/python --no-build-isolation
then run
    python python/smoke_test.py
"""

import math
import tempfile
from pathlib import Path

import selforget


def close(a, b, tol=1e-9):
    return abs(a - b) <= tol


def check_config():
    cfg = selforget.RunConfig()
    assert cfg.get("dataset.kind") == "two-moons"
    cfg.set("unlearn.objective", "siss")
    cfg.seed = 5
    back = selforget.RunConfig.parse(cfg.to_text())
    assert back == cfg and back.hash() == cfg.hash()
    assert selforget.RunConfig("image").get("dataset.kind") == "synthetic-textures"
    try:
        cfg.set("no.such.key", "1")
    except ValueError as e:
        assert "no.such.key" in str(e)
    else:
        raise AssertionError("unknown key accepted")


def check_ops():
    pmf = selforget.time_window_pmf(0.2, 250, 750, 1000)
    assert close(pmf[500], 1.6e-3) and close(pmf[900], 4e-4) and close(sum(pmf), 1.0)
    draws = selforget.sample_timesteps(0.0, 10, 20, 50, 1000, seed=1)
    assert all(10 <= t < 20 for t in draws)

    board = [[1.0 if (r + c) % 2 == 0 else -1.0 for c in range(8)] for r in range(8)]
    assert max(abs(v) for row in selforget.low_pass(board, 0.15, 0.0) for v in row) < 1e-9
    const = [[0.5] * 6 for _ in range(6)]
    radius, power, counts = selforget.psd_radial(const, 5)
    assert close(power[0], (0.5 * 36) ** 2) and sum(counts) == 36 and len(radius) == 5

    x = [0.1 * i for i in range(16)]
    assert close(selforget.sscd_plain(x, x), 1.0)
    assert close(selforget.sscd_norm(x, x, rho=3.0), 1.0)
    wk, wf = selforget.siss_weights([1.0], [0.0], [4.0], 1, 0.5, 2, 0.5, 0.5)
    assert close(wk, 1.0) and close(wf, 1.0)


def check_pipeline():
    cfg = selforget.RunConfig()
    for key, value in [
        ("model.hidden", "16,16"),
        ("train.steps", "200"),
        ("train.min_steps", "200"),
        ("unlearn.steps", "3"),
        ("eval.samples", "100"),
        ("eval.metrics", "hit_rate,coverage"),
    ]:
        cfg.set(key, value)
    data = selforget.make_dataset(cfg)
    assert len(data["data"]) == 1000 and len(data["forget_idx"]) == 6

    base, train_rows = selforget.train_base(cfg)
    assert base.data_dim == 2 and base.steps == 200
    assert any(r[3] == "train_loss" for r in train_rows)
    eps = base.predict([[0.0, 0.0], [1.0, 0.5]], [0, 199])
    assert len(eps) == 2 and all(math.isfinite(v) for row in eps for v in row)

    model, rows = selforget.run_unlearn(cfg, base)
    assert {r[3] for r in rows} >= {"forget_hit_rate", "retain_coverage", "unlearn_loss"}
    assert len(model.sample(10, seed=2)) == 10

    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "m.ckpt"
        model.save(path)
        again = selforget.Denoiser.load(path)
        assert again.predict([[0.3, 0.2]], [50]) == model.predict([[0.3, 0.2]], [50])

        fig = selforget.toy_figure(cfg, Path(tmp) / "fig")
        assert [w[0] for w in fig] == ["base", "early", "middle", "late"]
        assert (Path(tmp) / "fig" / "samples" / "middle.bin").exists()
        assert selforget.cli(["train", "--out", str(Path(tmp) / "x"), "--bogus"]) != 0


if __name__ == "__main__":
    check_config()
    check_ops()
    check_pipeline()
    print("python smoke test passed")
