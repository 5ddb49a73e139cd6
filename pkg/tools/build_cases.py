"""Regenerate the bundled case files under src/tsvis/cases/.

case39 follows the New England 39-bus topology (46 branches, generators
on buses 30-39) with classical machine data on a 100 MVA base. Every
generator site is split into a synchronous unit keeping 40% of the
original rating and a grid-forming IBR carrying the rest, which puts
roughly 70% of the scheduled energy on IBRs.
"""

import json
from pathlib import Path

OUT = Path(__file__).resolve().parents[1] / "src" / "tsvis" / "cases"

# from, to, x, rateA (MVA)
BRANCHES_39 = [
    (1, 2, 0.0411, 600), (1, 39, 0.0250, 1000), (2, 3, 0.0151, 500), (2, 25, 0.0086, 500),
    (2, 30, 0.0181, 900), (3, 4, 0.0213, 500), (3, 18, 0.0133, 500), (4, 5, 0.0128, 600),
    (4, 14, 0.0129, 500), (5, 6, 0.0026, 1200), (5, 8, 0.0112, 900), (6, 7, 0.0092, 900),
    (6, 11, 0.0082, 480), (6, 31, 0.0250, 1800), (7, 8, 0.0046, 900), (8, 9, 0.0363, 900),
    (9, 39, 0.0250, 900), (10, 11, 0.0043, 600), (10, 13, 0.0043, 600), (10, 32, 0.0200, 900),
    (12, 11, 0.0435, 500), (12, 13, 0.0435, 500), (13, 14, 0.0101, 600), (14, 15, 0.0217, 600),
    (15, 16, 0.0094, 600), (16, 17, 0.0089, 600), (16, 19, 0.0195, 600), (16, 21, 0.0135, 600),
    (16, 24, 0.0059, 600), (17, 18, 0.0082, 600), (17, 27, 0.0173, 600), (19, 20, 0.0138, 900),
    (19, 33, 0.0142, 900), (20, 34, 0.0180, 900), (21, 22, 0.0140, 900), (22, 23, 0.0096, 600),
    (22, 35, 0.0143, 900), (23, 24, 0.0350, 600), (23, 36, 0.0272, 900), (25, 26, 0.0323, 600),
    (25, 37, 0.0232, 900), (26, 27, 0.0147, 600), (26, 28, 0.0474, 600), (26, 29, 0.0625, 600),
    (28, 29, 0.0151, 600), (29, 38, 0.0156, 1200),
]

# bus: (Pd MW, Qd MVAr)
LOADS_39 = {
    3: (322.0, 2.4), 4: (500.0, 184.0), 7: (233.8, 84.0), 8: (522.0, 176.0), 12: (7.5, 88.0),
    15: (320.0, 153.0), 16: (329.0, 32.3), 18: (158.0, 30.0), 20: (628.0, 103.0),
    21: (274.0, 115.0), 23: (247.5, 84.6), 24: (308.6, -92.2), 25: (224.0, 47.2),
    26: (139.0, 17.0), 27: (281.0, 75.5), 28: (206.0, 27.6), 29: (283.5, 26.9),
    31: (9.2, 4.6), 39: (1104.0, 250.0),
}

# bus: (Pmax MW, Vset, H s, xd' pu, MVAr rating)
GENS_39 = {
    30: (1040.0, 1.0499, 42.0, 0.0310, 400.0),
    31: (646.0, 0.9820, 30.3, 0.0697, 300.0),
    32: (725.0, 0.9841, 35.8, 0.0531, 300.0),
    33: (652.0, 0.9972, 28.6, 0.0436, 1174.8),
    34: (508.0, 1.0123, 26.0, 0.1320, 167.0),
    35: (687.0, 1.0494, 34.8, 0.0500, 300.0),
    36: (580.0, 1.0636, 26.4, 0.0490, 240.0),
    37: (564.0, 1.0275, 24.3, 0.0570, 250.0),
    38: (865.0, 1.0265, 34.5, 0.0570, 300.0),
    39: (1100.0, 1.0300, 500.0, 0.0060, 300.0),
}

SG_SHARE = 0.4


def case39():
    base = 100.0
    lines = []
    for k, (f, t, x, rate) in enumerate(BRANCHES_39, start=1):
        lim = 2.0 * rate / base
        lines.append({
            "id": k, "from": f, "to": t, "x": x,
            "flow_min": -lim, "flow_max": lim,
            # transformers (generator step-ups) fault less often than overhead lines
            "fault_rate": round(0.5 + 20.0 * x, 4) if t < 30 and f < 30 else 0.3,
            "in_service": 1,
        })
    sgs, ibrs = [], []
    for bus, (pmax, vset, H, xdp, mvar) in GENS_39.items():
        s = SG_SHARE
        p_sg = s * pmax / base
        sgs.append({
            "bus": bus, "name": f"SG{bus}", "H": round(s * H, 4), "damping": round(2.0 * s * H / 10.0, 4),
            "xd_prime": round(xdp / s, 5), "p_min": 0.0, "p_max": round(p_sg, 4),
            "ramp_up": round(p_sg, 4), "ramp_down": round(p_sg, 4),
            "c0": 6.0, "c1": 3.0, "c2": 0.20,
            "reserve_up_price": 1.5, "reserve_down_price": 1.0,
            "prev_output": round(0.5 * p_sg, 4), "mvar_rating": mvar, "v_set": vset,
        })
        p_ibr = (1 - s) * pmax / base
        ibrs.append({
            "bus": bus, "name": f"IBR{bus}", "p_max": round(p_ibr, 4),
            "inertia_max": round(2.0 * (1 - s) * H, 3), "damping_max": round(6.0 * p_ibr, 3),
            "c3": 2.0, "c4": 1.0, "c5": 0.05,
            "inertia_price": INERTIA_PRICE_39.get(bus, 0.10), "damping_price": 0.20,
            "x": round(0.20 * base / ((1 - s) * pmax), 5), "v_set": vset,
        })
    evs = [
        {"bus": b, "name": f"EV{b}", "reg_up_max": 0.6, "reg_down_max": 0.6,
         "reg_up_price": 1.2, "reg_down_price": 0.8}
        for b in (4, 8, 20, 39)
    ]
    loads = [{"bus": b, "p": round(p / base, 5), "q": round(q / base, 5)} for b, (p, q) in LOADS_39.items()]
    return {
        "system": {"name": "case39", "base_power": base, "nominal_freq": 60.0,
                   "slack_bus": 39, "fault_conductance": 1e6, "min_virtual_inertia": 0.5},
        "buses": list(range(1, 40)),
        "lines": lines,
        "sgs": sgs,
        "ibrs": ibrs,
        "evs": evs,
        "loads": loads,
        "requirements": {"imbalance_up": 2.0, "imbalance_down": 1.5,
                         "inertia": 310.0, "damping": 120.0},
        "ace": {"frequency_bias": -0.6, "tie_flow_change": 0.0},
    }


# Virtual-inertia merit order: the bus-33 plant is the marginal provider and the
# bus-39 aggregate (external system) the most expensive one.
INERTIA_PRICE_39 = {33: 0.15, 39: 0.30}


def case_smib():
    return {
        "system": {"name": "case_smib", "base_power": 100.0, "nominal_freq": 60.0,
                   "infinite_bus": 2, "slack_bus": 2},
        "buses": [1, 2],
        "lines": [{"id": 1, "from": 1, "to": 2, "x": 0.5, "flow_min": -5.0, "flow_max": 5.0,
                   "fault_rate": 1.0, "in_service": 1}],
        "sgs": [{"bus": 1, "name": "SG1", "H": 3.5, "damping": 0.0, "xd_prime": 0.3,
                 "p_min": 0.0, "p_max": 2.0, "ramp_up": 2.0, "ramp_down": 2.0,
                 "c0": 1.0, "c1": 2.0, "c2": 1.0, "reserve_up_price": 1.0, "reserve_down_price": 1.0,
                 "prev_output": 0.9, "v_set": 1.0}],
        "ibrs": [],
        "evs": [],
        "loads": [{"bus": 2, "p": 0.9, "q": 0.0}],
        "requirements": {"imbalance_up": 0.0, "imbalance_down": 0.0, "inertia": 0.0, "damping": 0.0},
    }


def case9ish():
    branches = [(1, 4, 0.0576), (4, 5, 0.092), (5, 6, 0.17), (3, 6, 0.0586), (6, 7, 0.1008),
                (7, 8, 0.072), (8, 2, 0.0625), (8, 9, 0.161), (9, 4, 0.085)]
    lines = [{"id": k, "from": f, "to": t, "x": x, "flow_min": -4.0, "flow_max": 4.0,
              "fault_rate": round(0.5 + 10 * x, 3), "in_service": 1}
             for k, (f, t, x) in enumerate(branches, start=1)]
    gens = [(1, 2.5, 23.64, 0.0608, 1.04), (2, 2.0, 6.4, 0.1198, 1.025), (3, 1.3, 3.01, 0.1813, 1.025)]
    sgs = [{"bus": b, "name": f"SG{b}", "H": H, "damping": round(0.2 * H, 3), "xd_prime": xdp,
            "p_min": 0.0, "p_max": pmax, "ramp_up": pmax, "ramp_down": pmax,
            "c0": 4.0, "c1": 3.0, "c2": 0.3, "reserve_up_price": 1.5, "reserve_down_price": 1.0,
            "prev_output": round(0.5 * pmax, 3), "v_set": v}
           for b, pmax, H, xdp, v in gens]
    ibrs = [{"bus": 3, "name": "IBR3", "p_max": 0.8, "inertia_max": 6.0, "damping_max": 10.0,
             "c3": 1.0, "c4": 1.0, "c5": 0.1, "inertia_price": 0.1, "damping_price": 0.2,
             "x": 0.2, "v_set": 1.025}]
    evs = [{"bus": 5, "name": "EV5", "reg_up_max": 0.3, "reg_down_max": 0.3,
            "reg_up_price": 1.2, "reg_down_price": 0.8}]
    loads = [{"bus": 5, "p": 0.9, "q": 0.3}, {"bus": 7, "p": 1.0, "q": 0.35}, {"bus": 9, "p": 1.25, "q": 0.5}]
    return {
        "system": {"name": "case9ish", "base_power": 100.0, "nominal_freq": 60.0, "slack_bus": 1},
        "buses": list(range(1, 10)),
        "lines": lines, "sgs": sgs, "ibrs": ibrs, "evs": evs, "loads": loads,
        "requirements": {"imbalance_up": 0.3, "imbalance_down": 0.2, "inertia": 4.0, "damping": 6.0},
        "ace": {"frequency_bias": -0.5, "tie_flow_change": 0.0},
    }


if __name__ == "__main__":
    OUT.mkdir(parents=True, exist_ok=True)
    for name, fn in (("case39", case39), ("case_smib", case_smib), ("case9ish", case9ish)):
        (OUT / f"{name}.json").write_text(json.dumps(fn(), indent=1) + "\n")
        print("wrote", name)
