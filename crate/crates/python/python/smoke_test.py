"""Smoke test for the dcscan_py extension.

Build and run from the workspace root:

    cargo build --release -p dcscan-py
    cp target/release/libdcscan_py.so crates/python/python/dcscan_py.so
    python3 crates/python/python/smoke_test.py
"""

import json
import math
import os
import sys
import tempfile

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import dcscan_py as d  # noqa: E402


def main() -> None:
    assert d.scan_order("D-fwd", 3, 3) == [0, 1, 3, 2, 4, 6, 5, 7, 8]
    assert sorted(d.scan_order("AD-bwd", 4, 5)) == list(range(20))
    assert abs(d.warmup_weight(0, 100) - 0.1 * math.exp(-5.0)) < 1e-12
    assert abs(d.warmup_weight(100, 100) - 0.1) < 1e-12

    a = [False] * 21
    b = [False] * 21
    a[8], b[11] = True, True
    assert d.surface_distances(a, b, 3, 7) == (3.0, 3.0)
    assert d.surface_distances(a, [False] * 21, 3, 7) is None
    assert d.overlap([0, 1, 1, 0], [0, 1, 1, 0], 2) == (1.0, 1.0)

    image, label = d.synthetic_sample(seed=1, size=16)
    assert len(image) == len(label) == 256 and 1 in label

    net = d.Network("HV", seed=3, image_size=16)
    assert net.route_set == "HV" and 0 < net.num_params < 100_000
    logits = net.logits(image)
    assert len(logits) == 256 * 2 and all(math.isfinite(v) for v in logits)
    assert net.with_route_set("DA").logits(image) != logits
    with tempfile.TemporaryDirectory() as tmp:
        net.save(tmp)
        back = d.Network.load(tmp)
        assert back.logits(image) == logits and back.predict(image) == net.predict(image)
    try:
        d.Network("XY")
    except ValueError:
        pass
    else:
        raise AssertionError("bad route set accepted")

    cfg = {
        "seed": 2,
        "network": {"image_size": 16},
        "trainer": {"t_max": 3, "batch_size": 4, "labeled_batch": 2},
        "synthetic": {"image_size": 16, "num_labeled": 2, "num_unlabeled": 2, "num_test": 2},
    }
    trainer = d.CoTrainer(json.dumps(cfg))
    losses = [trainer.step() for _ in range(3)]
    assert trainer.t == 3
    for b in losses:
        assert abs(b["total"] - (b["sup"] + b["lambda"] * b["unsup"] + b["dfc"])) < 1e-12
    report = json.loads(trainer.evaluate("b"))
    assert 0.0 <= report["dice"] <= 1.0
    assert 0.0 <= trainer.diversity() <= 2.0
    print("dcscan_py smoke test passed")


if __name__ == "__main__":
    main()
