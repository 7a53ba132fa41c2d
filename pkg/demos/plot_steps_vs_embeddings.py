"""
Hand-built features versus learned place embeddings
===================================================

Featurize the log, factorize the person x place co-visit matrix, and compare
cross-validated AUC for the two feature sources and their concatenation.
"""

from placeattr import (
    WorldConfig,
    build_covisit_matrix,
    combine_sources,
    cross_validate,
    default_attributes,
    featurize,
    macro_average,
    place_embedding_features,
    simulate,
    wals_factorize,
)

world, log = simulate(WorldConfig(n_places=600, n_people=2000, n_days=42, attribute_specs=default_attributes(), rng_seed=2))

steps = featurize(log, world.places)
print("STEPS matrix", steps.shape)

###############################################################################
# Co-visit weights are capped visit counts divided by how many other nearby
# places the same person visited. Rank 32 keeps the script fast.

covisit = build_covisit_matrix(log, world.places)
factors = wals_factorize(covisit, rank=32, lam=0.1, seed=2)
print("WALS objective per sweep:", [round(v, 1) for v in factors.sweep_losses])
emb = place_embedding_features(factors)
both, summary = combine_sources(steps, emb)
print(f"combined matrix {both.shape}, dropped {summary.n_only_a} + {summary.n_only_b} places")

###############################################################################
# Five folds per attribute. Transition attributes are the ones embeddings
# should pick up, since they change who visits a place.

rows = {}
for table in world.labels:
    rows[table.attribute_name] = [cross_validate(m, table, k=5, source=s) for m, s in
                                  ((steps, "steps"), (emb, "embedding"), (both, "combined"))]
print(f"{'attribute':16s} {'steps':>7s} {'emb':>7s} {'both':>7s}")
for name, reps in rows.items():
    print(f"{name:16s} " + " ".join(f"{r.mean_auc:7.3f}" for r in reps))
print(f"{'macro':16s} " + " ".join(f"{macro_average([r[i] for r in rows.values()]):7.3f}" for i in range(3)))
