import json

import pytest

from spanqa.cli import build_parser, run_command
from spanqa.config import DEFAULTS, ConfigError, RunConfig


class TestConfig:
    def test_defaults(self):
        cfg = RunConfig()
        assert cfg.budget().total == 128
        assert cfg.reward().alpha == 0.1
        assert cfg.split_ratios() == (0.9, 0.05, 0.05)
        assert "this clip" in cfg.deictic_terms()

    def test_file_and_overrides(self, tmp_path):
        p = tmp_path / "run.ini"
        p.write_text("[run]\nseed = 5\n[budget]\nn_g = 16\n[reward]\nshaping_thresholds = 0.3:0.1,0.5:0.1\n")
        cfg = RunConfig.load(p, ["budget.n_l=8"])
        assert cfg.seed == 5
        assert (cfg.budget().n_g, cfg.budget().n_l) == (16, 8)
        assert cfg.reward().shaping_thresholds == ((0.3, 0.1), (0.5, 0.1))

    def test_rejects_unknown(self, tmp_path):
        with pytest.raises(ConfigError):
            RunConfig.load(None, ["budget.n_x=1"])
        p = tmp_path / "bad.ini"
        p.write_text("[nosuch]\na = 1\n")
        with pytest.raises(ConfigError):
            RunConfig.load(p)

    def test_bad_value(self):
        with pytest.raises(ConfigError):
            RunConfig.load(None, ["budget.n_g=many"])

    def test_seed_required(self):
        with pytest.raises(ConfigError, match="run.seed"):
            RunConfig().seed

    def test_dump_documents_every_key(self):
        text = RunConfig().dump()
        for section, keys in DEFAULTS.items():
            assert f"[{section}]" in text
            for key in keys:
                assert f"\n{key} = " in text


@pytest.fixture(scope="module")
def built(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    code = run_command(["dataset", "build", "--synthetic", "8", "--manifest-dir", str(d / "man"), "--seed", "2", "--out", str(d / "data.ndjson")])
    assert code == 0
    return d


class TestCommands:
    def test_build_reproducible(self, built, tmp_path):
        out = tmp_path / "again.ndjson"
        assert run_command(["dataset", "build", "--synthetic", "8", "--seed", "2", "--out", str(out)]) == 0
        assert out.read_bytes() == (built / "data.ndjson").read_bytes()

    def test_build_needs_seed(self, capsys):
        assert run_command(["dataset", "build", "--synthetic", "2"]) == 1
        assert "run.seed" in capsys.readouterr().err

    def test_seed_from_config(self, tmp_path):
        cfg = tmp_path / "c.ini"
        cfg.write_text("[run]\nseed = 2\n")
        out = tmp_path / "d.ndjson"
        assert run_command(["dataset", "build", "--synthetic", "8", "--config", str(cfg), "--out", str(out)]) == 0

    def test_unknown_subcommand(self, capsys):
        assert run_command(["frobnicate"]) == 2
        assert run_command(["dataset", "explode"]) == 2

    def test_review_split_stats(self, built, tmp_path, capsys):
        data = str(built / "data.ndjson")
        assert run_command(["dataset", "review", "--in", data, "--out", str(tmp_path / "kept.ndjson"), "--report", str(tmp_path / "rep.ndjson")]) == 0
        assert run_command(["dataset", "split", "--in", data, "--seed", "1", "--set", "dataset.split_ratios=0.5,0.25,0.25"]) == 0
        split = json.loads(capsys.readouterr().out)
        assert sum(len(v) for v in split.values()) == 8
        assert run_command(["dataset", "stats", "--in", data]) == 0
        stats = json.loads(capsys.readouterr().out)
        assert sum(stats["label_histogram"].values()) == stats["count"]

    def test_pipeline_and_eval(self, built, tmp_path, capsys):
        data, man = str(built / "data.ndjson"), str(built / "man")
        pred = tmp_path / "pred.ndjson"
        assert run_command(["pipeline", "run", "--data", data, "--manifests", man, "--seed", "1", "--preset", "D", "--out", str(pred)]) == 0
        assert run_command(["eval", "grounding", "--pred", str(pred), "--gold", data]) == 0
        out = capsys.readouterr().out
        assert "R@0.7" in out and "100.00" in out
        assert run_command(["eval", "qa", "--pred", str(pred), "--gold", data, "--format", "ndjson"]) == 0
        rows = [json.loads(l) for l in capsys.readouterr().out.splitlines()]
        assert {"metric": "accuracy", "value": 100.0} in rows

    def test_pipeline_missing_manifest(self, built, tmp_path):
        assert run_command(["pipeline", "run", "--data", str(built / "data.ndjson"), "--manifests", str(tmp_path), "--seed", "1"]) == 1

    def test_ablate(self, built, capsys):
        assert run_command(["pipeline", "ablate", "--data", str(built / "data.ndjson"), "--manifests", str(built / "man"), "--seed", "1"]) == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert len(lines) == 6 and lines[-1].startswith("D)")

    def test_reward_score(self, built, tmp_path, capsys):
        data = str(built / "data.ndjson")
        first = json.loads((built / "data.ndjson").read_text().splitlines()[0])
        item = f"{first['video_id']}:{first['event_id']}"
        spans = " ".join(f"<span>[{a:.2f},{b:.2f}]</span>" for a, b in first["time_spans"])
        resp = tmp_path / "resp.ndjson"
        resp.write_text(json.dumps({"item_id": item, "response_text": f"{spans} <answer>{first['correct_answer']}</answer>", "duration_s": 500}) + "\n")
        assert run_command(["reward", "score", "--data", data, "--responses", str(resp)]) == 0
        assert json.loads(capsys.readouterr().out)["r_total"] == 1.0

    def test_grpo(self, tmp_path, capsys):
        path = tmp_path / "roll.ndjson"
        rows = [
            {"prompt_id": "p", "response_text": "", "r_total": r, "policy_logprob_sum": lp, "ref_logprob_sum": lp, "token_count": 4}
            for r, lp in ((1.0, -10), (0.0, -20), (0.5, -30))
        ]
        path.write_text("".join(json.dumps(r) + "\n" for r in rows))
        assert run_command(["grpo", "advantages", "--in", str(path)]) == 0
        advs = [json.loads(l)["advantage"] for l in capsys.readouterr().out.splitlines()]
        assert advs == [0.5, -0.5, 0.0]
        assert run_command(["grpo", "objective", "--in", str(path), "--kl-coef", "0.1"]) == 0
        assert json.loads(capsys.readouterr().out)["objective"] == -5.0

    def test_bad_data_file(self, tmp_path):
        p = tmp_path / "junk.ndjson"
        p.write_text("{not json\n")
        assert run_command(["dataset", "stats", "--in", str(p)]) == 1
        assert run_command(["dataset", "stats", "--in", str(tmp_path / "absent")]) == 1


def test_help_lists_defaults():
    parser = build_parser()
    sub = parser._subparsers._group_actions[0].choices["eval"]._subparsers._group_actions[0].choices["grounding"]
    text = sub.format_help()
    for flag in ("--pred", "--gold", "--thresholds", "--single-best", "--format", "--config", "--set", "--seed", "--jobs", "--out"):
        assert flag in text
    assert "(default: table)" in text
    assert "(default: None)" in text
