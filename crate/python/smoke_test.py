"""Smoke test for the uuv_hunt_py extension.

Build first with `pip install --no-build-isolation -e crates/python`.
"""

import json
import math
import sys
import tempfile
from pathlib import Path

import uuv_hunt_py as uh


def close(a, b, tol=1e-9):
    return abs(a - b) <= tol


def main():
    assert close(uh.sound_speed(0.0, 35.0, 220.0), 1488.5)
    assert close(uh.sound_speed(10.0, 35.0, 200.0), 1523.4)

    j = uh.rotation_matrix(math.pi / 2)
    assert close(j[0][0], 0.0, 1e-12) and close(j[1][0], 1.0, 1e-12)

    assert close(uh.collision_penalty([(0, 0), (5, 1)], (50, 50), 0, 5.0, 0.5), 1.0)
    assert close(uh.kendall_pair([1, 2, 3], [3, 1, 2]), -1 / 3)
    assert uh.smooth_curve([1.0, 1.0, 1.0], 3) == [1.0, 1.0, 1.0]
    assert uh.delay_slots(2.7) == 2

    cfg = uh.ScenarioConfig()
    cfg.seed = 7
    again = uh.ScenarioConfig.from_toml(cfg.to_toml())
    assert again.hash() == cfg.hash() and again.seed == 7

    small = uh.ScenarioConfig.from_toml(
        "seed = 3\n[system]\nmax_slots = 40\n[dqn]\nepisodes = 2\n"
    )
    with tempfile.TemporaryDirectory() as tmp:
        manifest = json.loads(uh.run("train", small, tmp))
        assert manifest["finished_at"] is not None
        assert "training_log.csv" in manifest["outputs"]
        lines = (Path(tmp) / "training_log.csv").read_text().splitlines()
        assert len(lines) == 3, lines

    try:
        uh.ScenarioConfig.from_toml("[system]\nnum_pursuers = 1\n")
    except ValueError as e:
        assert "num_pursuers" in str(e)
    else:
        raise AssertionError("invalid config accepted")

    print("python smoke test: OK")
    return 0


if __name__ == "__main__":
    sys.exit(main())
