"""Smoke test for the ltm_lcip_py extension module."""

import math
import os
import sys

import ltm_lcip_py as ltm

HERE = os.path.dirname(os.path.abspath(__file__))
TOY = os.path.join(HERE, "..", "..", "..", "data", "toy_undirected.txt")


def main():
    assert abs(ltm.phi_kr(3, 2, 0.5) - 0.5) < 1e-15

    stats = ltm.Statistics.from_edge_list(TOY, undirected=True)
    summary = stats.summary()
    assert summary["n"] == 60 and summary["edges"] == 228, summary
    assert len(stats) == summary["types"]
    assert stats.psi(1.0) == 1.0

    plan = ltm.plan(stats, eps=0.1, grid_n=100, delta=0.05)
    assert plan["lp"]["status"] == "optimal"
    assert plan["audit"]["original_margin"] > 0.0
    seeding = ltm.plan(stats, eps=0.1, grid_n=100, delta=0.05, seeding_only=True)
    assert seeding["cost"] >= plan["cost"] - 1e-12

    mixed = ltm.Statistics.from_counts([(4, 4, 1, 30), (4, 4, 2, 40), (4, 4, 3, 30)])
    mixed_plan = ltm.plan(mixed, eps=0.1)
    report = ltm.monte_carlo(mixed, mixed_plan, n=20000, replicates=4, seed=3)
    assert report["success_rate"] == 1.0, report["success_rate"]

    again = ltm.Statistics.from_records(mixed.records())
    assert again.records() == mixed.records()

    lp = ltm.solve_lp([1.0, 1.0], [([(0, 1.0), (1, 2.0)], ">=", 2.0), ([(0, 3.0), (1, 1.0)], ">=", 3.0)])
    assert lp["status"] == "optimal" and math.isclose(lp["objective"], 1.4, abs_tol=1e-12), lp

    print("smoke test ok: plan cost %.6f, seeding cost %.6f" % (plan["cost"], seeding["cost"]))
    return 0


if __name__ == "__main__":
    sys.exit(main())
