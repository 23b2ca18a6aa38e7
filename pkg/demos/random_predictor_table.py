"""Sensitivity range of an unspecific random predictor for a few false prediction rates.

An algorithm is better than chance at a given FPr only if its sensitivity
clears sigma_up, the bound that accounts for having tried many features.

    python3 demos/random_predictor_table.py
"""

from focalpredict.evaluation import RandomPredictorParams, random_predictor_bounds

SOP_HOURS = 10 / 60
SEIZURES = 33

print(f"{'FPr/h':>6}  {'sigma_low':>9}  {'sigma_up':>8}")
for fpr in (0.285, 0.230, 0.186, 0.142, 0.05):
    b = random_predictor_bounds(RandomPredictorParams(SOP_HOURS, fpr, SEIZURES))
    print(f"{fpr:6.3f}  {100 * b.sigma_low:8.1f}%  {100 * b.sigma_up:7.1f}%")
