"""Independent brute-force oracles shared by unit and acceptance tests."""

import numpy as np

from tsvis.grid import case_from_dict

from conftest import case_doc, line, sg, ibr


def random_small_case(rng):
    """3 SGs, 2 IBRs, 1 EV fleet on a 3-bus triangle with moderate line limits."""
    # capacities, ramps and loads sit on the 0.01 pu grid so the brute-force
    # search below sees the same feasible box as the solver
    pmax_sg = np.round(rng.uniform(0.3, 0.6, 3), 2)
    pmax_ibr = np.round(rng.uniform(0.3, 0.6, 2), 2)
    demand = np.round(rng.uniform(0.35, 0.7) * (pmax_sg.sum() + pmax_ibr.sum()), 2)
    sgs = [sg(b + 1, p_min=0.0, p_max=float(pmax_sg[b]), c0=float(rng.uniform(0, 1)),
              c1=float(rng.uniform(0, 1)), c2=float(rng.uniform(0.5, 2.0)),
              reserve_up_price=float(rng.uniform(0.1, 1.0)), reserve_down_price=float(rng.uniform(0.1, 1.0)),
              prev_output=float(np.round(pmax_sg[b] / 2, 2)), ramp_up=float(np.round(rng.uniform(0.15, 0.4), 2)),
              ramp_down=float(np.round(rng.uniform(0.15, 0.4), 2)))
           for b in range(3)]
    ibrs = [ibr(b + 1, p_max=float(pmax_ibr[b]), inertia_max=2.0, damping_max=2.0, c3=float(rng.uniform(0, 1)),
                c4=float(rng.uniform(0, 0.5)), c5=float(rng.uniform(0.2, 1.0)),
                inertia_price=float(rng.uniform(0.05, 0.5)), damping_price=float(rng.uniform(0.05, 0.5)))
            for b in range(2)]
    evs = [{"bus": 3, "reg_up_max": 0.1, "reg_down_max": 0.1, "reg_up_price": float(rng.uniform(0.1, 1.0)),
            "reg_down_price": float(rng.uniform(0.1, 1.0))}]
    lines = [line(1, 1, 2, x=0.1, flow_min=-0.6, flow_max=0.6), line(2, 2, 3, x=0.15, flow_min=-0.6, flow_max=0.6),
             line(3, 1, 3, x=0.2, flow_min=-0.6, flow_max=0.6)]
    load3 = float(np.round(demand * 0.6, 2))
    loads = {3: load3, 2: float(demand - load3)}
    req = {"imbalance_up": float(rng.uniform(0, 0.2)), "imbalance_down": float(rng.uniform(0, 0.2)),
           "inertia": float(rng.uniform(0, 3)), "damping": float(rng.uniform(0, 3))}
    return case_from_dict(case_doc([1, 2, 3], lines, sgs, loads, ibrs=ibrs, evs=evs, req=req, slack_bus=3))


def _greedy(prices, caps, need):
    """Cheapest fill of ``need`` from units with per-point capacities; inf where infeasible.

    ``caps`` has shape (units, points).
    """
    cost = np.zeros(caps.shape[1])
    left = np.full(caps.shape[1], float(need))
    for k in np.argsort(prices, kind="stable"):
        take = np.minimum(caps[k], left)
        cost += prices[k] * take
        left -= take
    cost[left > 1e-9] = np.inf
    return cost


def grid_search_cost(case, resolution=0.01):
    """Minimum VIS cost over a grid of SG outputs.

    For every grid point the split of the remaining demand between the two
    IBRs is a one-dimensional convex quadratic on an interval (box and line
    limits are linear in the first IBR's output), minimised in closed form.
    Reserves, EV regulation and virtual inertia/damping have linear prices
    and only box/sum constraints once outputs are fixed, so they are filled
    cheapest first. Returns (cost, outputs).
    """
    from tsvis.grid import compute_gsf

    g, r, e = case.sgs, case.ibrs, case.ev_fleets[0]
    demand = case.total_demand
    axes = []
    for u in g:
        lo = max(u.p_min, u.prev_output - u.ramp_down)
        hi = min(u.p_max, u.prev_output + u.ramp_up)
        axes.append(np.arange(np.ceil(lo / resolution - 1e-9), np.floor(hi / resolution + 1e-9) + 1) * resolution)
    mesh = np.meshgrid(*axes, indexing="ij")
    sg_p = np.stack([m.ravel() for m in mesh])  # (3, points)
    rest = demand - sg_p.sum(axis=0)

    # first IBR output x in [lo, hi]; the second takes rest - x
    lo = np.maximum(0.0, rest - r[1].p_max)
    hi = np.minimum(r[0].p_max, rest)
    gsf = compute_gsf(case)
    idx = case.bus_index
    inj = np.zeros((case.n_bus, sg_p.shape[1]))
    for k, u in enumerate(g):
        inj[idx[u.bus]] += sg_p[k]
    inj[idx[r[1].bus]] += rest
    for b, d in case.loads.items():
        inj[idx[b]] -= d
    base = gsf @ inj  # flows with x = 0
    slope = gsf[:, idx[r[0].bus]] - gsf[:, idx[r[1].bus]]
    for ln, f0, s in zip(case.lines, base, slope):
        if abs(s) < 1e-12:
            bad = (f0 > ln.flow_max + 1e-9) | (f0 < ln.flow_min - 1e-9)
            hi = np.where(bad, -np.inf, hi)
            continue
        a1, a2 = (ln.flow_min - f0) / s, (ln.flow_max - f0) / s
        lo = np.maximum(lo, np.minimum(a1, a2))
        hi = np.minimum(hi, np.maximum(a1, a2))
    ok = hi >= lo - 1e-12
    a, b = r[0], r[1]
    x = (2 * b.c5 * rest + b.c4 - a.c4) / (2 * (a.c5 + b.c5))
    x = np.clip(x, lo, np.maximum(lo, hi))
    ibr_p = np.vstack([x, rest - x])

    cost = sum(u.c2 * sg_p[k] ** 2 + u.c1 * sg_p[k] + u.c0 for k, u in enumerate(g))
    cost = cost + sum(u.c5 * ibr_p[k] ** 2 + u.c4 * ibr_p[k] + u.c3 for k, u in enumerate(r))
    cost = np.where(ok, cost, np.inf)

    up_caps = np.vstack([np.array([u.p_max for u in g])[:, None] - sg_p, np.full((1, sg_p.shape[1]), e.reg_up_max)])
    dn_caps = np.vstack([sg_p - np.array([u.p_min for u in g])[:, None], np.full((1, sg_p.shape[1]), e.reg_down_max)])
    cost = cost + _greedy(np.array([u.reserve_up_price for u in g] + [e.reg_up_price]), up_caps,
                          case.zonal_imbalance_up)
    cost = cost + _greedy(np.array([u.reserve_down_price for u in g] + [e.reg_down_price]), dn_caps,
                          case.zonal_imbalance_down)
    one = np.ones((1, 1))
    cost = cost + _greedy(np.array([u.inertia_price for u in r]), np.array([[u.inertia_max] for u in r]) * one,
                          case.inertia_requirement)[0]
    cost = cost + _greedy(np.array([u.damping_price for u in r]), np.array([[u.damping_max] for u in r]) * one,
                          case.damping_requirement)[0]
    k = int(np.argmin(cost))
    return float(cost[k]), np.concatenate([sg_p[:, k], ibr_p[:, k]])


def brute_force_tis(delta_deg):
    """Largest pairwise angle separation by explicit loops over time and machine pairs."""
    lam = 0.0
    for row in np.asarray(delta_deg):
        for i in range(row.size):
            for j in range(row.size):
                if np.isfinite(row[i]) and np.isfinite(row[j]):
                    lam = max(lam, abs(row[i] - row[j]))
    return lam, int(lam >= 360.0)
