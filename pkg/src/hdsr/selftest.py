"""Quick invariant checks on procedural data, run by ``hdsr selftest``."""

from __future__ import annotations

import itertools
import sys
import time

import numpy as np

from .corpus import SplitPolicy, SynthesisConfig, procedural_glyphs, synth_dataset
from .detector import AnchorSet, Detection, GridConfig, cluster_anchors, decode_grid, encode_targets, nms
from .detector.geometry import iou
from .detector.grid import targets_to_raw
from .detector.resize import PUBLISHED_WIDTHS, input_width_rule
from .losses import cross_entropy, focal_loss, sequence_loss
from .nn import Network, NetworkSpec
from .sequencer import transcribe


def _focal_equivalence(rng):
    p = np.linspace(1e-6, 1 - 1e-6, 1000)
    return all(np.max(np.abs(focal_loss(p, y, 1.0, 0.0) - cross_entropy(p, y))) <= 1e-12 for y in (1, -1))


def _gradients(rng):
    spec = NetworkSpec((6, 8, 1), [
        {"type": "conv", "filters": 3, "kernel": [3, 3], "stride": [1, 1], "padding": "same"},
        {"type": "maxpool", "window": [1, 2], "stride": [1, 2]},
        {"type": "batchnorm"},
        {"type": "leaky_relu", "slope": 0.1},
        {"type": "flatten"},
        {"type": "dense", "units": 4},
    ])
    net = Network(spec, seed=int(rng.integers(1 << 30)), dtype=np.float64)
    x = rng.normal(size=(3, 6, 8, 1))
    g = rng.normal(size=(3, 4))

    def loss():
        return float((net.forward(x, training=True) * g).sum())

    net.forward(x, training=True)
    net.backward(g)
    worst = 0.0
    for (key, w), (_, dw) in zip(list(net.parameters()), list(net.gradients())):
        dw = dw.copy()
        for idx in list(np.ndindex(w.shape))[:4]:
            old = w[idx]
            w[idx] = old + 1e-5
            up = loss()
            w[idx] = old - 1e-5
            down = loss()
            w[idx] = old
            num = (up - down) / 2e-5
            if max(abs(num), abs(dw[idx])) > 1e-6:
                worst = max(worst, abs(num - dw[idx]) / max(abs(num), abs(dw[idx])))
    return worst <= 1e-4


def _sequence_brute_force(rng):
    for _ in range(20):
        t = int(rng.integers(1, 4))
        frames = rng.dirichlet(np.ones(11), size=t)
        target = "".join(str(d) for d in rng.integers(0, 10, size=int(rng.integers(1, t + 1))))
        total = 0.0
        for path in itertools.product(range(11), repeat=t):
            if transcribe(path).label == target:
                total += float(np.prod(frames[np.arange(t), path]))
        if total == 0.0:
            continue
        loss, _ = sequence_loss(frames, target)
        if abs(np.exp(-loss) - total) > 1e-9 * total:
            return False
    return True


def _nms_oracle(rng):
    for _ in range(500):
        n = int(rng.integers(0, 9))
        dets = [Detection(*rng.uniform(0, 20, 2), *rng.uniform(1, 10, 2), int(rng.integers(10)),
                          float(rng.uniform())) for _ in range(n)]
        kept = nms(dets, 0.45)
        ref = []
        for d in sorted(dets, key=lambda d: (-d.score, d.x)):
            if all(iou(d.box, k.box) <= 0.45 for k in ref):
                ref.append(d)
        if sorted(map(id, kept)) != sorted(map(id, ref)):
            return False
    return True


def _round_trip(rng):
    grid = GridConfig()
    anchors = AnchorSet([(0.5, 0.7), (0.6, 0.7), (1.0, 0.7)])
    for _ in range(100):
        boxes = []
        for j in rng.choice(grid.cells_x, size=3, replace=False):
            w, h = rng.uniform(6, 14), rng.uniform(14, 26)
            cx = (j + rng.uniform(0.1, 0.9)) * grid.stride_x
            cy = rng.uniform(12, 20)
            boxes.append((cx - w / 2, cy - h / 2, w, h, int(rng.integers(10))))
        raw = targets_to_raw(encode_targets(boxes, grid, anchors).tensor)
        dets = sorted(decode_grid(raw, grid, anchors), key=lambda d: d.x)
        if len(dets) != len(boxes):
            return False
        for d, b in zip(dets, sorted(boxes)):
            if d.digit_class != b[4] or max(abs(d.x - b[0]), abs(d.y - b[1]), abs(d.w - b[2]), abs(d.h - b[3])) > 0.5:
                return False
    return True


def _resize_table(rng):
    hits = [input_width_rule(sw) == w for _, sw, w in PUBLISHED_WIDTHS]
    return sum(hits) == 9 and not hits[8] and input_width_rule(666) == 1120


def _anchors(rng):
    centres = np.array([0.5, 0.6, 1.0])
    shapes = np.column_stack([np.repeat(centres, 300) + rng.normal(0, 0.01, 900), rng.uniform(0.6, 0.8, 900)])
    got = np.sort(cluster_anchors(shapes, 3, seed=int(rng.integers(1 << 30))).ratios)
    return bool(np.all(np.abs(got - centres) <= 0.05))


def _transcription(rng):
    if transcribe([10, 10, 10]).label != "":
        return False
    for _ in range(2000):
        s = rng.integers(0, 11, size=int(rng.integers(0, 7)))
        lab = transcribe(s).label
        if len(lab) > len(s) or transcribe([int(c) for c in lab]).label != "".join(
                c for i, c in enumerate(lab) if i == 0 or c != lab[i - 1]):
            return False
    return True


def _dataset(rng):
    corpus = procedural_glyphs(int(rng.integers(1 << 30)), 12, writers=12)
    cfg = SynthesisConfig(length_range=(2, 4), rng_seed=int(rng.integers(1 << 30)))
    m = synth_dataset(corpus, cfg, SplitPolicy.proportional(corpus.writers), {"train": 200, "validation": 50, "test": 50})
    writers = {s: set() for s in ("train", "validation", "test")}
    for i, rec in enumerate(m.records):
        writers[rec["split"]] |= set(rec["writers"])
        s = m.sample(i)
        if "".join(str(b.digit_class) for b in s.boxes) != s.label:
            return False
    return not (writers["train"] & writers["validation"] or writers["train"] & writers["test"]
                or writers["validation"] & writers["test"])


CHECKS = [
    ("focal loss with gamma 0 equals cross-entropy", _focal_equivalence),
    ("layer gradients match finite differences", _gradients),
    ("alignment loss matches path enumeration", _sequence_brute_force),
    ("NMS matches greedy suppression oracle", _nms_oracle),
    ("grid encode/decode round trip", _round_trip),
    ("input width rule vs published table", _resize_table),
    ("anchor clustering recovers shape clusters", _anchors),
    ("transcription collapse properties", _transcription),
    ("dataset labels and writer-disjoint splits", _dataset),
]


def run_selftest(seed=0, out=sys.stdout) -> bool:
    rng = np.random.default_rng([seed, 909])
    ok = True
    for name, check in CHECKS:
        start = time.time()
        try:
            passed = bool(check(rng))
        except Exception as exc:  # report and keep going
            passed = False
            name = f"{name} ({type(exc).__name__}: {exc})"
        ok &= passed
        out.write(f"{'PASS' if passed else 'FAIL'} {name} [{time.time() - start:.1f}s]\n")
    out.write("selftest " + ("passed" if ok else "FAILED") + "\n")
    return ok
