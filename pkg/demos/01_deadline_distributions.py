"""Deadline distributions: the bid language of the market.

An EV's bid is a probability vector over departure slots, constrained to
a floored simplex so every slot keeps some minimum mass.  This walkthrough
shows the derived quantities the engine relies on: CDF, survival, hazard,
stochastic dominance, and the sup-norm CDF shortfall that prices a
misreport.
"""
import numpy as np

from storemkt import DeadlineDistribution, alpha, coupled_sample, dominates, make_rng

uniform = DeadlineDistribution((0.2,) * 5)
late = DeadlineDistribution((0.0212, 0.0462, 0.1019, 0.2061, 0.6246))

print("uniform bid over 5 slots")
print("  pmf      ", np.round(uniform.pmf, 4))
print("  cdf      ", np.round(uniform.cdf(), 4))
print("  survival ", np.round(uniform.survival(), 4))
print("  mean slot", uniform.mean())

# the hazard is what the storage policy actually consumes: the chance the
# EV leaves *this* slot given it is still plugged in
hazards = [uniform.pmf[t] / uniform.survival()[t] for t in range(5)]
print("  hazards  ", np.round(hazards, 4), "(certain departure by slot 5)")

print()
print("late-departing profile:", np.round(late.pmf, 4))
print("uniform dominates late (departs earlier)?", dominates(uniform, late))
print("late dominates uniform?", dominates(late, uniform))

# alpha measures how much earlier-departure mass a bid understates; it is
# exactly the fraction of days a bid-matching reporter must miss deadlines
print()
print("alpha(truth=uniform, bid=late) =", alpha(uniform, late))
print("alpha(truth=late, bid=uniform) =", alpha(late, uniform))

# coupled sampling draws both distributions through one uniform variate,
# so a dominated pair never crosses: the earlier profile departs first
rng = make_rng(7)
draws = [coupled_sample(late, uniform, rng) for _ in range(8)]
print()
print("coupled draws (uniform slot <= late slot on every draw):")
for t_late, t_uniform in draws:
    print(f"  {t_uniform} <= {t_late}")
assert all(f <= t for t, f in draws)
