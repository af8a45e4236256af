"""End-to-end check of the Python bindings on the toy fixture.

Build first:  pip install --no-build-isolation ./crates/py
"""
import pathlib
import sys
import tempfile

import odforge_py as of

ROOT = pathlib.Path(__file__).resolve().parent.parent
TOY = ROOT / "crates/core/tests/fixtures/toy"


def pipeline(out):
    cfg = of.PipelineConfig.load(str(TOY / "toy.toml"))
    cfg.output_dir = out
    cfg.validate()
    manifest = of.run_pipeline(cfg)
    assert any(f["path"] == "calibrated_trips.csv" for f in manifest["files"])

    report = of.validate(cfg)
    assert report.passed, report.to_text()
    assert report.jaccard_mean > 0.0
    print("pipeline ok:", len(report.checks()), "checks")

    inst = of.PDInstance.from_json(str(pathlib.Path(out) / "bench" / "instance_0.json"))
    for algo in of.algorithms():
        metrics, routes = inst.solve(algo, budget_s=1.0, max_iters=100, seed=3)
        served = sum(len(r) for r in routes) // 2
        assert abs(100.0 * served / inst.requests - metrics["coverage_pct"]) < 1e-9, (algo, metrics)
    print("vrp ok:", inst.requests, "requests,", len(of.algorithms()), "algorithms")


def calibration():
    p = of.CalibrationProblem(
        dest_targets=[1, 1],
        block_targets=[1, 1],
        bin_targets=[0, 0, 1, 1],
        initial=[[1, 0], [0, 1]],
        bin_of=[[0, 2], [3, 1]],
        alpha=2.0,
    )
    sol = p.solve()
    assert sol["counts"] == [[0, 1], [1, 0]], sol
    assert sol["optimal"]
    assert p.objective(sol["counts"]) == sol["objective"] == 4.0
    assert p.objective([[1, 1], [0, 0]]) is None
    print("calibration ok")


def errors():
    try:
        of.PipelineConfig.load("/nonexistent/config.toml")
    except OSError:
        pass
    else:
        raise AssertionError("expected OSError")
    try:
        of.CalibrationProblem([1], [2], [1], [[0]], [[0]])
    except ValueError:
        pass
    else:
        raise AssertionError("expected ValueError")
    print("errors ok")


def graph():
    g = of.RoadGraph.load(str(TOY / "nodes.csv"), str(TOY / "edges.csv"))
    ids = [g.snap(0.0025, 0.0025), g.snap(0.0175, 0.0075)]
    dist, mins = g.route(ids[0], ids[1], 420)
    g.scale_speeds(2.0)
    _, faster = g.route(ids[0], ids[1], 420)
    assert dist > 0 and abs(faster - mins / 2) < 1e-9 * mins + 1e-12
    print("graph ok:", len(g), "nodes")


if __name__ == "__main__":
    with tempfile.TemporaryDirectory() as d:
        pipeline(d)
    calibration()
    errors()
    graph()
    print("smoke test passed")
    sys.exit(0)
