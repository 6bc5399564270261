"""Arithmetic audit of published score rows plus kernel micro-benchmarks.

The audit recomputes the combined OpenLane-V2-style score from the four
component scores that public lane-topology leaderboards print alongside it,
and reports whether the printed value survives the recomputation at one
decimal. Rows are labeled positionally (a1..a8 for the first split, b1..b5
for the second) because method names are irrelevant to an arithmetic check.

The benchmarks time the kernels that dominate a forward pass and the
inference-time refinement step, at both desk scale and the larger
published-style dimensions. They are informational; the tracked baselines
live in docs/walkthrough.md.
"""

from __future__ import annotations

import argparse
import csv
import sys
import time

import numpy as np

from .autodiff import Tensor
from .geometry import discrete_frechet, frechet_matrix
from .kernels import biased_self_attention, gcn_layer, layer_norm
from .metrics import ols
from .refine import RefinementConfig, refine
from .scene import DetectionSet

# (label, det_l, det_t, top_ll, top_lt, printed combined score)
REFERENCE_ROWS: tuple[tuple[str, float, float, float, float, float], ...] = (
    ("a1", 12.7, 43.0, 2.9, 19.8, 29.3),
    ("a2", 11.1, 41.7, 2.7, 9.2, 24.9),
    ("a3", 17.7, 43.5, 5.9, 15.1, 31.0),
    ("a4", 28.6, 48.6, 10.9, 23.8, 39.8),
    ("a5", 28.3, 49.5, 21.6, 26.9, 44.1),
    ("a6", 29.9, 47.2, 23.9, 25.4, 44.1),
    ("a7", 34.7, 48.2, 24.1, 29.5, 46.3),
    ("a8", 31.4, 55.3, 28.7, 30.0, 48.8),
    ("b1", 24.3, 55.0, 6.7, 16.7, 36.8),
    ("b2", 26.6, 58.3, 21.0, 19.8, 43.8),
    ("b3", 25.9, 54.7, 21.6, 17.9, 42.3),
    ("b4", 34.8, 58.9, 23.2, 23.3, 47.5),
    ("b5", 31.2, 60.2, 28.3, 27.1, 49.2),
)


def ols_consistency_check(tolerance: float = 0.05) -> list[dict]:
    """Recompute the combined score for every reference row.

    A row passes when the recomputed score, rounded to one decimal, sits
    within ``tolerance`` of the printed value. Returns one dict per row so
    callers can render or assert on the table.
    """
    rows = []
    for label, det_l, det_t, top_ll, top_lt, printed in REFERENCE_ROWS:
        recomputed = ols(det_l, det_t, top_ll, top_lt)
        rounded = round(recomputed, 1)
        rows.append(
            {
                "label": label,
                "det_l": det_l,
                "det_t": det_t,
                "top_ll": top_ll,
                "top_lt": top_lt,
                "printed": printed,
                "recomputed": recomputed,
                "rounded": rounded,
                "passed": abs(rounded - printed) <= tolerance + 1e-12,
            }
        )
    return rows


def render_consistency_table(rows: list[dict]) -> str:
    head = f"{'row':>4} {'det_l':>6} {'det_t':>6} {'top_ll':>6} {'top_lt':>6} {'printed':>8} {'recomputed':>11} {'ok':>3}"
    lines = [head, "-" * len(head)]
    for r in rows:
        lines.append(
            f"{r['label']:>4} {r['det_l']:>6.1f} {r['det_t']:>6.1f} {r['top_ll']:>6.1f}"
            f" {r['top_lt']:>6.1f} {r['printed']:>8.1f} {r['recomputed']:>11.4f}"
            f" {'yes' if r['passed'] else 'NO':>3}"
        )
    n_pass = sum(r["passed"] for r in rows)
    lines.append(f"{n_pass}/{len(rows)} rows consistent at one decimal")
    return "\n".join(lines)


def _time_call(fn, repeats: int) -> float:
    """Median wall time of fn() in milliseconds, one warmup excluded."""
    fn()
    samples = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        samples.append((time.perf_counter() - t0) * 1e3)
    return float(np.median(samples))


def _attention_case(n: int, d: int, rng: np.random.Generator):
    x = Tensor(rng.normal(0.0, 0.1, (n, d)))
    bias = Tensor(rng.normal(0.0, 0.1, (n, n)))
    ws = [Tensor(rng.normal(0.0, d**-0.5, (d, d))) for _ in range(4)]

    def run():
        biased_self_attention(x, bias, *ws)

    return run


def _gcn_case(n: int, d: int, rng: np.random.Generator):
    x = Tensor(rng.normal(0.0, 0.1, (n, d)))
    adj = np.abs(rng.normal(0.0, 1.0, (n, n)))
    w = Tensor(rng.normal(0.0, d**-0.5, (d, d)))

    def run():
        gcn_layer(x, adj, w)

    return run


def _layer_norm_case(n: int, d: int, rng: np.random.Generator):
    x = Tensor(rng.normal(0.0, 1.0, (n, d)))
    g = Tensor(np.ones(d))
    b = Tensor(np.zeros(d))

    def run():
        layer_norm(x, g, b)

    return run


def _frechet_case(k: int, rng: np.random.Generator):
    a = rng.normal(0.0, 5.0, (k, 3))
    b = a + rng.normal(0.0, 0.5, (k, 3))

    def run():
        discrete_frechet(a, b)

    return run


def _frechet_matrix_case(na: int, nb: int, k: int, rng: np.random.Generator):
    la = rng.normal(0.0, 10.0, (na, k, 3))
    lb = rng.normal(0.0, 10.0, (nb, k, 3))

    def run():
        frechet_matrix(la, lb)

    return run


def _refine_case(n_p: int, n_l: int, rng: np.random.Generator):
    points = rng.uniform(-30.0, 30.0, (n_p, 3))
    lanes = rng.uniform(-30.0, 30.0, (n_l, 11, 3))
    dets = DetectionSet(
        pred_points=points,
        point_scores=rng.uniform(0.5, 1.0, n_p),
        pred_lanes=lanes,
        lane_scores=rng.uniform(0.5, 1.0, n_l),
        pred_boxes=np.zeros((0, 4)),
        box_scores=np.zeros((0, 13)),
        pred_g_pl=np.zeros((n_p, n_l)),
        pred_g_ll=np.zeros((n_l, n_l)),
        pred_g_lt=np.zeros((n_l, 0)),
    )
    cfg = RefinementConfig()

    def run():
        refine(dets, cfg)

    return run


def bench_kernels(repeats: int = 5, include_large: bool = True) -> list[dict]:
    """Time the hot kernels; returns rows of {name, config, ms}."""
    rng = np.random.default_rng(0)
    cases = [
        ("biased_attention", "n=100,d=32", _attention_case(100, 32, rng)),
        ("gcn_layer", "n=100,d=32", _gcn_case(100, 32, rng)),
        ("layer_norm", "n=100,d=32", _layer_norm_case(100, 32, rng)),
        ("discrete_frechet", "k=11", _frechet_case(11, rng)),
        ("frechet_matrix", "pairs=60x30,k=11", _frechet_matrix_case(60, 30, 11, rng)),
        ("refine", "n_p=40,n_l=60", _refine_case(40, 60, rng)),
    ]
    if include_large:
        cases += [
            ("biased_attention", "n=500,d=256", _attention_case(500, 256, rng)),
            ("gcn_layer", "n=500,d=256", _gcn_case(500, 256, rng)),
            ("refine", "n_p=200,n_l=300", _refine_case(200, 300, rng)),
        ]
    return [
        {"name": name, "config": config, "ms": _time_call(run, repeats)}
        for name, config, run in cases
    ]


def write_bench_csv(rows: list[dict], path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=["name", "config", "ms"])
        writer.writeheader()
        writer.writerows(rows)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(
        prog="lanetopo-bench",
        description="score-arithmetic audit and kernel timings",
    )
    ap.add_argument("--out", help="write kernel timings to this CSV path")
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--quick", action="store_true", help="skip the large configurations")
    args = ap.parse_args(argv)

    table = ols_consistency_check()
    print(render_consistency_table(table))
    print()
    rows = bench_kernels(repeats=args.repeats, include_large=not args.quick)
    for r in rows:
        print(f"{r['name']:<18} {r['config']:<16} {r['ms']:9.3f} ms")
    if args.out:
        write_bench_csv(rows, args.out)
        print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
