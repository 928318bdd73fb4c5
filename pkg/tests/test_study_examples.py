"""Monte-Carlo examples listed for the individual studies, run at their
default sweep sizes. These take minutes, so they are kept apart from the
unit suite. Examples that do not hold at desk scale are marked
``xfail(strict=True)``: they report XFAIL while they keep failing and turn
into hard failures if they ever start passing."""

import pytest

from pamc.experiments import STUDIES, SweepSpec, run_study

LOOP_NOISE = ("loop regret carries Q-learning noise (standard error 0.2-0.4 per cell) "
              "that swamps this ordering at 10 seeds x 30k steps")


@pytest.fixture(scope="module")
def tables(tmp_path_factory):
    cache = {}

    def get(name, spec=None):
        key = (name, None if spec is None else spec.config_hash())
        if key not in cache:
            cache[key] = run_study(name, spec or STUDIES[name][1], tmp_path_factory.mktemp(name))
        return cache[key]

    return get


def _cell(table, parameter, value):
    return next(r for r in table.rows if r[parameter] == value)


def test_rank_full_rank_abstains_more_than_matched(tables):
    t = tables("rank")
    assert _cell(t, "rank", 5)["abstention_rate"] > _cell(t, "rank", 2)["abstention_rate"]


def test_rank_abstention_nondecreasing(tables):
    assert tables("rank").summary["abstention_inversions"] <= 1


@pytest.mark.xfail(strict=True, reason=LOOP_NOISE)
def test_rank_matched_cell_has_lowest_regret(tables):
    t = tables("rank")
    assert min(t.rows, key=lambda r: r["regret"])["rank"] == 2


def test_alignment_exact_features_best_random_worst(tables):
    t = tables("alignment")
    errors = [r["error"] for r in t.rows]
    assert _cell(t, "mixing", 0.0)["error"] == min(errors)
    assert _cell(t, "mixing", 1.0)["error"] == max(errors)


def test_drift_raises_abstention(tables):
    t = tables("drift")
    assert _cell(t, "drift", 0.2)["abstention_rate"] > _cell(t, "drift", 0.0)["abstention_rate"]


@pytest.mark.xfail(strict=True, reason=LOOP_NOISE)
def test_drift_regret_trend(tables):
    assert tables("drift").summary["spearman_drift_vs_regret"] >= 0.7


@pytest.mark.xfail(strict=True, reason="the learned Q-policy keeps about 2 units of regret at "
                                       "30k steps even with an exact completion")
def test_regret_noiseless_cell_near_zero(tables):
    base = STUDIES["regret"][1]
    row = tables("regret", SweepSpec("sigma", (0.0,), base.seeds, base.base)).rows[0]
    assert row["regret_gated"] <= 0.1 and row["regret_ungated"] <= 0.1
