import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from armtune.errors import UsageError
from armtune.study import (
    JOURNAL_FIELDS,
    StudyConfig,
    TrialRecord,
    best_trial,
    evaluate_trial,
    read_journal,
    resume,
    run_study,
    sub_seeds,
    trial_seed,
)
from armtune.tpe import ParamDomain, SearchSpace
from objectives import Crash, crash_at, fail_on_odd_seed, nan_objective, quadratic

SPACE = SearchSpace((ParamDomain("x", "uniform", 0.0, 1.0), ParamDomain("y", "uniform", -1.0, 1.0)))


def config(tmp_path, name="j.jsonl", **kw):
    base = dict(algo=None, n_trials=14, n_startup_trials=5, journal=tmp_path / name, space=SPACE)
    base.update(kw)
    return StudyConfig(**base)


def record(i, value, state="complete"):
    return TrialRecord(id=i, params={}, value=value, state=state)


class TestBestTrial:
    def test_single(self):
        r = record(1, -2.0)
        assert best_trial([r]) is r

    def test_max(self):
        assert best_trial([record(1, -3.0), record(2, -1.0), record(3, -2.0)]).id == 2

    def test_tie_lower_id(self):
        assert best_trial([record(4, 1.0), record(2, 1.0)]).id == 2

    def test_ignores_failed(self):
        assert best_trial([record(1, None, "failed"), record(2, -5.0)]).id == 2

    def test_none(self):
        with pytest.raises(UsageError):
            best_trial([record(1, None, "failed")])


class TestSeeds:
    def test_trial_seed(self):
        assert trial_seed(100, 3) == 103

    def test_sub_seeds_distinct_and_stable(self):
        a, b = sub_seeds(7), sub_seeds(7)
        assert a == b and len(set(a.values())) == 3


class TestJournal:
    def test_fields_and_ids(self, tmp_path):
        cfg = config(tmp_path)
        run_study(cfg, quadratic)
        lines = cfg.journal.read_text().splitlines()
        assert len(lines) == 14
        docs = [json.loads(l) for l in lines]
        assert all(tuple(d) == JOURNAL_FIELDS for d in docs)
        assert [d["id"] for d in docs] == list(range(1, 15))
        assert [d["seed"] for d in docs] == list(range(1, 15))
        assert [d["history_size_at_suggest"] for d in docs] == list(range(14))
        assert all(d["started_at"] is None for d in docs)

    def test_bytes_reproducible(self, tmp_path):
        a, b = config(tmp_path, "a.jsonl"), config(tmp_path, "b.jsonl")
        run_study(a, quadratic)
        run_study(b, quadratic)
        assert a.journal.read_bytes() == b.journal.read_bytes()

    def test_warmup_only_equals_random(self, tmp_path):
        a = config(tmp_path, "a.jsonl", n_trials=6, n_startup_trials=6)
        b = config(tmp_path, "b.jsonl", n_trials=6, n_startup_trials=6, tpe=a.tpe.__class__(n_ei_candidates=3))
        run_study(a, quadratic)
        run_study(b, quadratic)
        assert a.journal.read_bytes() == b.journal.read_bytes()

    def test_failures_recorded_with_null_value(self, tmp_path):
        cfg = config(tmp_path)
        best = run_study(cfg, fail_on_odd_seed)
        recs = read_journal(cfg.journal)
        assert len(recs) == 14
        failed = [r for r in recs if r.state == "failed"]
        assert {r.seed % 2 for r in failed} == {1}
        assert all(json.loads(l)["value"] is None for l in cfg.journal.read_text().splitlines() if '"failed"' in l)
        assert best.seed % 2 == 0

    def test_non_finite_objective_fails_trial(self, tmp_path):
        cfg = config(tmp_path, n_trials=2, n_startup_trials=2)
        with pytest.raises(UsageError):  # no complete trials to pick from
            run_study(cfg, nan_objective)
        assert {r.state for r in read_journal(cfg.journal)} == {"failed"}

    def test_wallclock_opt_in(self, tmp_path):
        cfg = config(tmp_path, n_trials=2, n_startup_trials=2, record_wallclock=True)
        run_study(cfg, quadratic)
        rec = read_journal(cfg.journal)[0]
        assert rec.started_at and rec.finished_at and "duration_s" in rec.breakdown

    def test_corrupt_line(self, tmp_path):
        p = tmp_path / "bad.jsonl"
        p.write_text('{"id": 1}\nnot json\n')
        with pytest.raises(UsageError, match=":1:"):
            read_journal(p)

    @settings(max_examples=15)
    @given(st.integers(0, 100), st.floats(-1e6, 1e6), st.sampled_from(["complete", "failed"]))
    def test_record_round_trip(self, i, value, state):
        rec = TrialRecord(id=i, params={"x": 0.25}, value=value if state == "complete" else None, state=state, seed=i + 3)
        again = TrialRecord.from_json(rec.to_json())
        assert again == rec


class TestResume:
    def test_complete_study_is_noop(self, tmp_path):
        cfg = config(tmp_path)
        first = run_study(cfg, quadratic)
        before = cfg.journal.read_bytes()
        again = resume(cfg, quadratic)
        assert cfg.journal.read_bytes() == before
        assert again == first

    def test_crash_then_resume(self, tmp_path):
        cfg = config(tmp_path)
        with pytest.raises(Crash):
            run_study(cfg, crash_at(trial_seed(0, 8)))
        assert len(read_journal(cfg.journal)) == 7
        assert cfg.journal.with_name("j.jsonl.running.json").exists()
        resume(cfg, quadratic)
        recs = read_journal(cfg.journal)
        assert sum(r.state == "complete" for r in recs) == 14
        orphans = [r for r in recs if r.breakdown.get("orphan")]
        assert len(orphans) == 1 and orphans[0].id == 8 and orphans[0].value is None

    def test_resume_matches_uninterrupted_prefix(self, tmp_path):
        clean = config(tmp_path, "clean.jsonl")
        run_study(clean, quadratic)
        cut = config(tmp_path, "cut.jsonl", n_trials=6)
        run_study(cut, quadratic)
        resume(config(tmp_path, "cut.jsonl"), quadratic)
        assert clean.journal.read_bytes() == cut.journal.read_bytes()

    def test_space_mismatch_refused(self, tmp_path):
        cfg = config(tmp_path, n_trials=2, n_startup_trials=2)
        run_study(cfg, quadratic)
        other = SearchSpace((ParamDomain("x", "uniform", 0.0, 2.0), SPACE["y"]))
        with pytest.raises(UsageError, match="x"):
            run_study(config(tmp_path, n_trials=3, n_startup_trials=2, space=other), quadratic)

    def test_resume_needs_journal(self, tmp_path):
        with pytest.raises(UsageError):
            resume(config(tmp_path), quadratic)


class TestParallel:
    def test_parallel_journal_complete_and_ordered(self, tmp_path):
        cfg = config(tmp_path, n_trials=6, n_startup_trials=6, jobs=2)
        run_study(cfg, quadratic)
        recs = read_journal(cfg.journal)
        assert [r.id for r in recs] == list(range(1, 7))
        serial = config(tmp_path, "serial.jsonl", n_trials=6, n_startup_trials=6)
        run_study(serial, quadratic)
        # warm-up suggestions do not depend on history, so parallel matches serial
        # apart from how many trials had finished when each was suggested
        strip = lambda r: (r.id, r.seed, r.params, r.value, r.state)
        assert [strip(r) for r in recs] == [strip(r) for r in read_journal(serial.journal)]
        assert not cfg.journal.with_name("j.jsonl.running.json").exists()


class TestRlObjective:
    def test_same_seed_same_value(self):
        from armtune.spaces import PPO_DEFAULTS

        a = evaluate_trial(PPO_DEFAULTS, "ppo", 3, seed=11, eval_episodes=2, hidden=(8, 8))
        b = evaluate_trial(PPO_DEFAULTS, "ppo", 3, seed=11, eval_episodes=2, hidden=(8, 8))
        assert a == b and a[1]["episodes"] == 3

    def test_invalid_params(self):
        with pytest.raises(UsageError):
            evaluate_trial({"learning_rate": 1.0}, "ppo", 3, seed=0)

    def test_sac_objective_runs(self):
        from armtune.spaces import SAC_DEFAULTS

        params = {**SAC_DEFAULTS, "learning_starts": 100, "batch_size": 16}
        value, info = evaluate_trial(params, "sac", 3, seed=0, eval_episodes=2, hidden=(8, 8))
        assert np.isfinite(value) and 0.0 <= info["tail_success_rate"] <= 1.0
