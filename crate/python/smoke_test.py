"""Quick end-to-end check of the latticelink_py extension."""

import json
import tempfile
from pathlib import Path

import latticelink_py as ll


def main():
    ctx = ll.Context(3, 3, [(0, 0), (1, 1), (2, 2)])
    lat = ctx.lattice()
    assert len(lat) == 5, len(lat)
    assert len(lat.covers) == 6
    assert lat.extent(0) == [] and lat.intent(len(lat) - 1) == []
    assert ctx.derive_attributes([1]) == [1]

    try:
        ctx.lattice(max_concepts=2)
    except ll.BudgetExceeded:
        pass
    else:
        raise AssertionError("budget not enforced")

    assert ll.roc_auc([0.9, 0.1, 0.8, 0.3], [True, False, True, False]) == 1.0
    f1, threshold = ll.best_f1([0.9, 0.1], [True, False])
    assert f1 == 1.0 and 0.0 <= threshold < 0.9
    report = ll.evaluate([0.2, 0.7, 0.4], [False, True, True])
    assert set(report) >= {"f1", "auc", "aupr"}

    net = ll.Context.planted(n_blocks=3, objects_per_block=5, attributes_per_block=2, seed=4)
    inp, target = net.split_random(0.2, seed=1)
    assert inp.n_edges < target.n_edges == net.n_edges

    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        net.save(str(tmp / "net.json"))
        config = {
            "input": str(tmp / "net.json"),
            "split": {"kind": "random", "fraction": 0.2},
        }
        run = ll.Pipeline(str(tmp / "run"), json.dumps(config))
        run.ingest()
        run.split()
        assert run.concepts() > 0
        cn = run.baseline("oa", "cn")
        assert 0.0 <= cn["f1"] <= 1.0
        try:
            ll.Pipeline(str(tmp / "other")).split()
        except ll.LatticeLinkError:
            pass
        else:
            raise AssertionError("split without ingest should fail")

    print("smoke test ok")


if __name__ == "__main__":
    main()
