import math

import pytest

import planattr


def test_generate_solve_validate():
    inst = planattr.generate_instance(4, seed=3, min_optimal=4)
    plan = planattr.solve(inst)
    assert plan is not None
    report = planattr.validate(inst, plan)
    assert report["ok"] and report["goal_satisfied"]
    assert len(planattr.parse_plan(plan)) >= 4
    assert planattr.generate_dataset(5, seed=2) == planattr.generate_dataset(5, seed=2)


def test_instance_dicts_round_trip():
    inst = planattr.generate_instance(3, seed=1)
    assert planattr.generate_dataset(1, 3, 3, 1, 1)[0].keys() == inst.keys()
    assert "My goal is to have that" in planattr.question(inst)


def test_validation_failure_index():
    report = planattr.validate(planattr.generate_instance(3, seed=8), "put down the red block\n")
    assert not report["ok"]
    assert report["failure_index"] == 1
    assert report["violation"] == "NotHolding"


def test_errors_carry_their_kind():
    with pytest.raises(planattr.PlanattrError, match="^EmptyPlan"):
        planattr.parse_plan("no actions here")


def test_attribution_with_mock():
    inst = planattr.generate_instance(4, seed=5, min_optimal=4)
    out = planattr.attribute(inst, fine_grained=True)
    assert out["segments"][0] == "ActionDefs"
    assert len(out["values"]) == len(out["segments"])
    assert all(len(row) == len(out["tokens"]) for row in out["values"])
    assert all(-1.0 <= v <= 1.0 for row in out["values"] for v in row)
    assert set(out["steps"]) <= set(range(1, len(out["step_labels"]) + 1))
    assert out["components"]["Question"] > 0


def test_normalize():
    assert planattr.normalize([[0.2, -0.4]]) == [[0.5, -1.0]]
    assert planattr.normalize([[0.0, 0.0]], "per-row") == [[0.0, 0.0]]


def test_insight_votes():
    ref = planattr.reference_insights()
    assert len(planattr.visible_insights(ref)) == len(ref["insights"])
    updated = planattr.apply_insight_actions(ref, "[Oppose] [Insight 1]\n[Add] [Insight 9]: Keep the hand empty.")
    assert updated["insights"][0]["votes"] == 5
    assert updated["insights"][-1]["votes"] == 1
    assert len(planattr.visible_insights(updated)) == len(ref["insights"]) - 1


def test_prompt_segments_tile():
    inst = planattr.generate_instance(3, seed=2)
    text, segments = planattr.render_prompt(inst, fine_grained=True)
    pos = 0
    for _, seg in segments:
        found = text.index(seg, pos)
        pos = found + len(seg)


def test_small_experiment(tmp_path):
    cfg = {
        "generate": {"count": 40, "min_blocks": 3, "max_blocks": 4, "min_optimal": 2, "seed": 1},
        "train_size": 10,
        "validation_size": 30,
        "sample_cap": 10,
        "out_dir": str(tmp_path),
    }
    result = planattr.run_experiment(cfg)
    assert 0.0 <= result["accuracy"] <= 1.0
    assert "run.json" in result["files"]
    assert math.isfinite(result["components"]["Question"])
