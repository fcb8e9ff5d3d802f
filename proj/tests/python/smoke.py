"""Smoke tests for the _calvin extension module and the CLI binary."""

import json
import os
import subprocess
import sys
import tempfile

import _calvin as cv


def test_maze_generation():
    maze = cv.make_world(7, 3)
    assert maze.height == 15 and maze.width == 15
    art = maze.ascii()
    assert art.count("\n") == 15
    assert "S" in art and "T" in art
    # Deterministic in the seed.
    again = cv.make_world(7, 3)
    assert again.ascii() == art
    occ = maze.occupancy()
    assert occ.shape == (15, 15)
    assert occ[0, 0] == 1  # border wall

    parsed = cv.maze_from_json(maze.to_json())
    assert parsed.ascii() == art


def test_expert_reaches_target():
    maze = cv.make_world(7, 11)
    actions = cv.expert_actions(maze)
    assert actions[-1] == 8  # positional done action
    assert len(actions) >= maze.height  # minimum topological distance

    embodied = cv.expert_actions(maze, embodied=True, seed=5)
    assert embodied[-1] == 4  # embodied done action


def test_exact_vi_and_oracle_planner_agree():
    maze = cv.make_world(7, 21)
    values, policy = cv.vi_values(maze)
    tr, tc = maze.target
    target_index = tr * maze.width + tc
    assert abs(values[target_index] - 1.0) < 1e-6  # done reward at the target
    assert policy[target_index] == 8

    calvin_values = cv.calvin_oracle_values(maze).reshape(-1)
    occ = maze.occupancy().reshape(-1)
    for i in range(values.shape[0]):
        if occ[i] == 0:
            assert abs(values[i] - calvin_values[i]) <= 1e-6


def test_gradcheck_and_rollout():
    assert cv.gradcheck_ops(seeds=2)
    maze = cv.make_world(5, 2)
    outcome, steps, collisions = cv.rollout_outcome(maze, max_steps=50)
    assert outcome in ("success", "false-done", "step-limit", "stuck-oscillation")
    assert 0 <= steps <= 50
    assert collisions >= 0


def test_checkpoint_roundtrip():
    with tempfile.TemporaryDirectory() as tmp:
        assert cv.checkpoint_roundtrip(os.path.join(tmp, "probe.ckpt"))


def test_cli_usage_and_gradcheck():
    cli = os.environ.get("CALVIN_CLI")
    if not cli:
        return
    # Unknown flags are usage errors (exit 2).
    bad = subprocess.run([cli, "eval", "--nonsense"], capture_output=True)
    assert bad.returncode == 2, bad.stderr

    tiny = [
        "--lattice-n", "3", "--k", "6", "--hidden", "8", "--hidden-actions", "4",
        "--lr", "0.01", "--val-frac", "0.34", "--val-rollouts", "1", "--patience", "0",
    ]
    with tempfile.TemporaryDirectory() as tmp:
        data = os.path.join(tmp, "tiny.jsonl")
        gen = subprocess.run(
            [cli, "gen-data", "--count", "3", "--lattice-n", "3", "--seed", "5",
             "--out", data],
            capture_output=True,
        )
        assert gen.returncode == 0, gen.stderr
        with open(data) as handle:
            rows = [json.loads(line) for line in handle if line.strip()]
        assert len(rows) == 3
        assert all("maze" in r and "actions" in r for r in rows)

        # train -> eval -> render against the written config.
        out = os.path.join(tmp, "run")
        tr = subprocess.run(
            [cli, "train", "--data", data, "--out", out, "--epochs", "1", *tiny],
            capture_output=True,
        )
        assert tr.returncode == 0, tr.stderr
        ckpt = os.path.join(out, "checkpoints", "best.ckpt")
        cfg = os.path.join(out, "config.json")
        assert os.path.exists(ckpt) and os.path.exists(cfg)
        assert os.path.exists(os.path.join(out, "metrics.csv"))

        ev = subprocess.run(
            [cli, "eval", "--ckpt", ckpt, "--config", cfg, "--mazes", "2", "--seeds", "1",
             "--max-steps", "20", "--out", os.path.join(out, "eval")],
            capture_output=True,
        )
        assert ev.returncode == 0, ev.stderr
        metrics = json.loads(ev.stdout)
        assert metrics["version"] == "v1"
        assert 0.0 <= metrics["success_rate"]["mean"] <= 1.0

        rn = subprocess.run(
            [cli, "render", "--ckpt", ckpt, "--config", cfg, "--maze-seed", "3",
             "--out", os.path.join(out, "maps")],
            capture_output=True,
        )
        assert rn.returncode == 0, rn.stderr
        assert os.path.exists(os.path.join(out, "maps", "value.pgm"))

        # ablate writes one row per loss variant.
        ab = subprocess.run(
            [cli, "ablate", "--data", data, "--out", os.path.join(tmp, "ablate"),
             "--epochs", "1", "--mazes", "1", "--seeds", "1", *tiny],
            capture_output=True,
        )
        assert ab.returncode == 0, ab.stderr
        with open(os.path.join(tmp, "ablate", "ablate.csv")) as handle:
            lines = [l for l in handle.read().splitlines() if l]
        assert len(lines) == 4  # header + full + no_loss_a + no_loss_p
        assert lines[1].startswith("full,")
        assert lines[2].startswith("no_loss_a,")
        assert lines[3].startswith("no_loss_p,")

    gc = subprocess.run([cli, "gradcheck", "--quick", "--seeds", "2"], capture_output=True)
    assert gc.returncode == 0, gc.stderr


if __name__ == "__main__":
    for name, fn in sorted(globals().items()):
        if name.startswith("test_"):
            fn()
            print(f"ok {name}")
    print("smoke tests passed")
    sys.exit(0)
