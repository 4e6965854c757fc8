"""Attribute a trained classifier's outputs to its input features.

Kernel SHAP samples feature coalitions, weights them with the Shapley
kernel, and solves a constrained least squares whose solution adds up to
the model output exactly. A brute-force enumeration oracle confirms the
values, and the global ranking points at the dominant feature.
"""

import numpy as np

import cellsift as cs

# one dominant informative feature so the global ranking has a clear winner
train = cs.generate_synthetic((150, 150, 150), embed_dim=8, informative=1, seed=9)
fit, val = cs.stratified_split(train, 0.1, seed=0)
report = cs.train_mlp(fit, val, epochs=40, hidden=(32, 16), seed=0)
model = lambda rows: cs.predict(report.best_params, rows)[1]  # noqa: E731

x = train.features.data
rng = np.random.default_rng(0)
background = x[rng.choice(x.shape[0], size=50, replace=False)]

print("kernel weight examples: "
      f"w(4,2)={cs.shapley_kernel_weight(4, 2)}, w(2,1)={cs.shapley_kernel_weight(2, 1)}")

print("\nexplaining 10 instances (predicted class, exhaustive coalitions at E=8)")
explanations = []
for i in range(10):
    target = int(cs.predict(report.best_params, x[i : i + 1])[0][0])
    exp = cs.kernel_shap(model, background, x[i], target, samples=2**8, seed=i,
                         instance_index=i)
    explanations.append(exp)
    reconstruction = exp.base_value + exp.phi.sum()
    truth = float(model(x[i : i + 1])[0, target])
    assert abs(reconstruction - truth) < 1e-6

exact = cs.exact_shapley(model, background, x[0], explanations[0].target_class)
print(f"kernel vs exact oracle, instance 0: "
      f"max |diff| {np.abs(explanations[0].phi - exact).max():.2e}")

gi = cs.global_importance(explanations)
print(f"\nglobal ranking (mean |phi|): {gi.rank_order.tolist()}")
print(f"top feature: {gi.top_feature} (informative dim is 0)")

extremes = cs.extreme_value_report(gi, train.features, k=3)
print(f"\nsamples with extreme values of feature {extremes.feature}:")
print(f"  highest: {[(i, round(v, 3)) for i, v in extremes.high]}")
print(f"  lowest:  {[(i, round(v, 3)) for i, v in extremes.low]}")
