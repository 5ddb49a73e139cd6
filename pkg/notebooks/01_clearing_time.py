"""
Critical clearing time on the SMIB and 39-bus cases
===================================================

Bisection on the fault duration against the equal-area value for a
machine connected to an infinite bus, then the same search on the 39-bus
case with a high share of inverter-based generation.
"""

# %%
import math

import numpy as np

from tsvis.dispatch import solve_vis
from tsvis.grid import load_case
from tsvis.tds import FaultScenario, SimConfig, classify_tis, compute_cct, simulate

smib = load_case("case_smib")
disp = solve_vis(smib)

# %% Equal-area estimate from the case data: bolted fault at the terminal, P_e = 0 while on.
g, ln = smib.sgs[0], smib.lines[0]
pm = smib.loads[2]
th = math.asin(pm * ln.reactance)
v1 = complex(math.cos(th), math.sin(th))
e = v1 + 1j * g.transient_reactance * (v1 - 1.0) / (1j * ln.reactance)
pmax = abs(e) / (g.transient_reactance + ln.reactance)
d0 = math.atan2(e.imag, e.real)
dmax = math.pi - d0
dc = math.acos(pm / pmax * (dmax - d0) + math.cos(dmax))
eac = math.sqrt(4 * g.inertia * (dc - d0) / (2 * math.pi * smib.nominal_freq * pm))

cct = compute_cct(smib, disp, (1, 0.0), SimConfig(horizon=5.0))
print(f"SMIB CCT: bisection {cct:.4f} s, equal area {eac:.4f} s")

# %% Either side of the CCT the status flips.
for tau in (cct - 0.01, cct + 0.01):
    tr = simulate(smib, disp, FaultScenario(1, tau, 0.0), SimConfig(horizon=5.0))
    lab = classify_tis(tr)
    print(f"  tau {tau:.3f} s -> class {lab.cls}, max separation {lab.lambda_max:.1f} deg")

# %% The 39-bus case: line 33 (buses 19-33), fault near the far end.
case = load_case("case39")
d39 = solve_vis(case)
cct39 = compute_cct(case, d39, (33, 0.95), SimConfig(horizon=7.0))
print(f"case39 line 33 at x = 0.95: CCT {cct39:.4f} s ({cct39 * case.nominal_freq:.2f} cycles)")

# %% COI frequency after a cleared fault just below the CCT.
tr = simulate(case, d39, FaultScenario(33, cct39 - 0.01, 0.95), SimConfig(horizon=7.0))
dev = (tr.coi - 1.0) * case.nominal_freq
print(f"largest COI excursion {dev[np.argmax(np.abs(dev))]:+.3f} Hz")
