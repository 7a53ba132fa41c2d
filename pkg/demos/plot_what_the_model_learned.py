"""
What does the classifier look at?
=================================

Train one model per attribute on the full STEPS matrix, list its strongest
features, and export the per-class histograms behind them.
"""

import tempfile
from pathlib import Path

from placeattr import (
    WorldConfig,
    default_attributes,
    export_distributions,
    featurize,
    select_features,
    simulate,
    top_features,
    train,
)
from placeattr.evaluator import distribution_table, total_variation

world, log = simulate(WorldConfig(n_places=500, n_people=1500, n_days=35, attribute_specs=default_attributes(1.0), rng_seed=3))
steps = featurize(log, world.places)

for table in world.labels:
    model = train(steps, table, select_features(steps, table))
    pos, neg = top_features(model, 5)
    print(f"{table.attribute_name}\n  + {', '.join(pos)}\n  - {', '.join(neg)}")

###############################################################################
# Romantic restaurants get their guests from theaters. The previous-visit
# distribution makes that visible without any model at all.

romantic = next(t for t in world.labels if t.attribute_name == "romantic")
for category, p, q in distribution_table(log, romantic, "tprev:4h"):
    if max(p, q) > 0.02:
        print(f"  {category:14s} positive {p:.3f}  negative {q:.3f}")

# the null attribute should look the same on both sides
null = next(t for t in world.labels if t.attribute_name == "null_attribute")
print("null attribute, duration TV distance:", round(total_variation(distribution_table(log, null, "duration")), 4))

out = Path(tempfile.mkdtemp())
for feature in ("duration", "day_of_week", "hour_of_day"):
    print("wrote", export_distributions(log, world.places, romantic, feature, out))
