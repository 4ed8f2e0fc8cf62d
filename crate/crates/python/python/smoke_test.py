"""Smoke test for the edgenas extension module.

Run after `pip install --no-build-isolation -e crates/python` (or
`maturin develop`):

    python crates/python/python/smoke_test.py
"""

import json
import pathlib
import sys

import edgenas

ROOT = pathlib.Path(__file__).resolve().parents[3]


def main() -> int:
    minimal = (ROOT / "fixtures" / "minimal.json").read_text()
    graph = edgenas.ModelGraph.from_json(minimal)
    assert graph.name == "minimal"
    assert graph.input == (16, 16, 8)
    assert graph.macs() == 295072 and graph.params() == 1312

    toy = edgenas.AcceleratorConfig.toy()
    apm = edgenas.estimate(graph, toy)
    assert [l.latency_us for l in apm.per_layer] == [18432.0, 4112.0, 186.0]
    assert apm.total_latency_us == 22730.0
    assert apm.per_layer[0].bound == "compute"

    sim = edgenas.simulate(graph, toy)
    assert sim["total_cycles"] == sum(l["cycles"] for l in sim["per_layer"])
    assert edgenas.estimate(graph, toy, "sim").total_latency_us == sim["total_us"]

    swish = json.loads(minimal)
    swish["layers"][0] = {"op": "swish"}
    try:
        edgenas.ModelGraph.from_json(json.dumps(swish))
    except edgenas.EdgenasError as e:
        assert "swish" in str(e)
    else:
        raise AssertionError("swish accepted")
    try:
        edgenas.ModelGraph.from_json("{")
    except ValueError:
        pass
    else:
        raise AssertionError("malformed JSON accepted")

    genome = edgenas.sample(3)
    assert genome == edgenas.sample(3)
    assert len(genome) == edgenas.Skeleton().num_stages == 7
    decoded = edgenas.decode(genome)
    assert edgenas.ModelGraph.from_json(decoded.to_json()) == decoded
    assert edgenas.decode(edgenas.canonical(genome)) == decoded
    child = edgenas.mutate(genome, 1)
    assert edgenas.Genome.from_json(child.to_json()) == child
    assert edgenas.Skeleton().size() == 432 ** 7

    acc = edgenas.predict_accuracy(decoded)
    assert 0.01 < acc < 0.82
    assert edgenas.reward(0.7, 100.0, 100.0) == 0.7
    assert edgenas.reward(0.7, 50.0, 100.0, mode="hard") == 0.7
    assert edgenas.reward(0.7, 200.0, 100.0) < 0.7

    points = [(3.0, 0.5), (1.0, 0.2), (2.0, 0.6), (2.0, 0.6), (4.0, 0.4)]
    assert edgenas.pareto_front(points) == [1, 2]

    print(f"edgenas {edgenas.__version__}: smoke test passed")
    return 0


if __name__ == "__main__":
    sys.exit(main())
