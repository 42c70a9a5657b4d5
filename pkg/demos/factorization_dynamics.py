#!/usr/bin/env python3
"""Why joint descent can stall on a rank-one factorization while alternating
minimization cannot.

Target: X = a b^T + b a^T with unit vectors at alignment c = a.b. The best
rank-one approximation has loss (1-c)^2/2. Simultaneous descent on (u, v)
from a mirror start moves tau = z.w+ and nu = z.w- independently; a start
with tau0 = 0 flows to the spurious point |u|^2 = 1-c with loss (1+c)^2/2.
Alternating minimization applies M^2 to the coordinates every step, so any
start with tau0 != 0 converges to the optimum.

Writes per-step traces to trace_gd_cXX.csv / trace_alt_cXX.csv.
"""

from pathlib import Path

from slicemix import bilinear as bl

print(f"{'c':>4} | {'gd from tau0=0':>16} | {'alternating':>12} | "
      f"{'optimal':>9} | {'spurious':>9}")
print("-" * 64)
for c in (0.1, 0.3, 0.5, 0.7, 0.9):
    inst = bl.make_instance(d=16, c=c, seed=3)
    gd = bl.run_experiment(inst, init="antisym", method="gd",
                           steps=100_000, eta=0.01, stop_tol=None)
    alt = bl.run_experiment(inst, init="generic", method="alternating",
                            steps=120, stop_tol=None)
    print(f"{c:>4} | {gd.final_loss:16.8f} | {alt.final_loss:12.8f} | "
          f"{inst.optimal_loss:9.5f} | {inst.suboptimal_loss:9.5f}")
    tag = str(c).replace(".", "")
    Path(f"trace_gd_c{tag}.csv").write_text(gd.to_csv())
    Path(f"trace_alt_c{tag}.csv").write_text(alt.to_csv())

print("""
Joint descent lands exactly on the spurious plateau in every row; the
alternating runs land on the optimum. The spurious point repels the tau
direction, so raw-vector arithmetic eventually drifts off it through
rounding noise alone:""")

inst = bl.make_instance(d=16, c=0.9, seed=3)
vec = bl.run_experiment(inst, init="antisym", method="gd_vector",
                        steps=20_000, eta=0.01, stop_tol=None)
hold = next((i for i, l in enumerate(vec.loss)
             if abs(l - inst.suboptimal_loss) < 1e-3), None)
leave = next((i for i, l in enumerate(vec.loss)
              if l < 0.5 * (inst.optimal_loss + inst.suboptimal_loss)), None)
print(f"  c=0.9 raw vectors: near the plateau by step {hold}, "
      f"escaped by step {leave}, final loss {vec.final_loss:.6f} (the optimum).")
print("  The eigen-coordinate runner keeps tau = 0 exact, which is why the")
print("  table above can exhibit the spurious fixed point at machine precision.")
