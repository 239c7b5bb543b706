"""Smoke test for the atl extension module."""

import json

import atl


def main():
    tax = atl.Taxonomy(["ride", "feed"], ["horse", "dog"], [(0, 0), (1, 0), (1, 1)])
    assert tax.n_hoi == 3
    assert tax.compose_label([True, False], [False, True]) == [False, True, False]
    assert tax.compose_label([False, True], [True, False]) == [False, False, False]
    assert tax.decouple_verb([True, False, True]) == [True, True]
    assert tax.affordances_of(0) == [0, 1]

    assert atl.iou([0, 0, 2, 2], [1, 1, 3, 3]) == 1 / 7
    assert atl.average_precision([True, True, True], 3) == 1.0
    assert atl.average_precision([False, True], 1) == 0.5
    sp = atl.spatial_pattern([0, 0, 1, 1], [0, 0, 1, 1], 8)
    assert len(sp) == 128 and sum(sp) == 128

    report = atl.gradcheck(configs=20, seed=1)
    assert report["passed"], report

    cfg = json.loads(atl.default_config())
    cfg["world"].update(n_verbs=5, n_objects=6, n_pairs=14, feat_dim=4, nominal_train=200)
    cfg["data"].update(n_train=200, n_test=40, n_external=40)
    cfg["train"].update(hidden=16, iterations=200, spatial_res=4)
    world = atl.World(json.dumps(cfg), seed=3)
    assert world.sizes == (200, 40, 40)
    assert world.unseen_objects

    model, trace = world.train()
    assert trace[-1]["step"] == 199
    hoi = world.evaluate(model)
    groups = {g["group"]: g["map"] for g in hoi["groups"]}
    assert {"Full", "Unseen", "Seen"} <= set(groups)

    bank = world.build_bank(20)
    assert max(bank.counts) <= 20
    obj = world.unseen_objects[0]
    scores = model.recognize(world.object_queries(obj)[0], bank, world.taxonomy)
    assert all(p is None or 0.0 <= p <= 1.0 for p in scores["probability"])
    aff = world.evaluate_affordance(model, bank)
    assert 0.0 <= aff["prf"]["micro"]["f1"] <= 1.0

    try:
        atl.World('{"bank": {"m": 0}}')
    except atl.AtlConfigError as e:
        assert "bank.m" in str(e)
    else:
        raise AssertionError("invalid config accepted")

    print("smoke test passed:", {k: round(v, 4) for k, v in groups.items() if v is not None})


if __name__ == "__main__":
    main()
