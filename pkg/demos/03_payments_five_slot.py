"""Day-ahead transfers on the five-slot benchmark market.

Loads the bundled five-slot instance with two 10 kWh EVs, solves the
dispatch, and prices each EV by its externality: the cost the rest of
the market would face without it, minus what it faces with it.  A
negative transfer means the EV is paid for the flexibility it sells.

The same transfer is computed through two different decompositions
inside the engine; the residual column is their disagreement and should
sit at rounding noise.

Ends with a penetration sweep showing the optimum can only improve as
identical storage is added.
"""
from storemkt.config import load_setup
from storemkt.dispatch import solve_outer
from storemkt.experiments import payments_table
from storemkt.presets import preset_config

setup = load_setup(preset_config("table1:n=2,profile=A"))
m = setup.market
print(f"horizon {m.horizon} slots, demand {m.demand}")
print(f"fleet: {len(setup.specs)} EVs, capacity {[s.capacity for s in setup.specs]} kWh")
print(f"deadline weights {tuple(round(p, 4) for p in setup.params[0].pmf)}")
print()

solve, rows = payments_table(setup)
print(f"optimal dispatch g* = {solve.g_star} kWh")
print(f"expected system cost q* = {solve.q_star:.6f}")
print()
print(f"{'ev':>3}  {'p_da':>12}  {'q* without it':>14}  {'residual':>10}")
for r in rows:
    print(
        f"{r['ev']:>3}  {r['p_da']:>12.6f}  {r['q_star_minus']:>14.6f}"
        f"  {r['identity_residual']:>10.2e}"
    )
    assert abs(r["identity_residual"]) < 1e-9

print()
print("penetration sweep, profile A")
prev = None
for n in range(5):
    s = load_setup(preset_config(f"table1:n={n},profile=A"))
    res = solve_outer(
        tuple(p for p in s.params), s.solver, s.market, s.specs
    )
    trend = "" if prev is None else ("  (down)" if res.q_star < prev - 1e-9 else "  (flat)")
    print(f"  n={n}: q* = {res.q_star:>12.6f}  g* = {res.g_star}{trend}")
    assert prev is None or res.q_star <= prev + 1e-9
    prev = res.q_star
