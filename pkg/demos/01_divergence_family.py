"""Tour of the divergence family behind the entropy loss.

Shows the two-parameter form, its named limits, and how the entropy loss
reacts as a softmax sharpens away from uniform.
"""

import numpy as np

from genzsl import DivergenceSpec, entropy_loss, sm_divergence, special_case

p = np.array([0.7, 0.2, 0.1])
q = np.array([1 / 3, 1 / 3, 1 / 3])

print("two-parameter divergence on p =", p, "vs uniform")
for gamma, beta in [(2.0, 2.0), (0.5, 3.0), (3.0, 0.5)]:
    print(f"  gamma={gamma}, beta={beta}: {sm_divergence(p, q, gamma, beta):.6f}")

print("\nnamed limits (closed forms, never the raw expression):")
for family, kw in [("kl", {}), ("bhattacharyya", {}),
                   ("renyi", {"gamma": 2.0}), ("tsallis", {"gamma": 2.0})]:
    spec = DivergenceSpec(family, **kw)
    print(f"  {family:14s}: {special_case(p, q, spec):.6f}")

print("\nthe limits agree with the two-parameter form near its singular points:")
renyi = special_case(p, q, DivergenceSpec("renyi", gamma=2.0))
print(f"  SM(2, 1+1e-6) = {sm_divergence(p, q, 2.0, 1.0 + 1e-6):.9f}"
      f"  vs renyi(2) = {renyi:.9f}")

print("\nentropy loss: divergence of a softmax from uniform, per family")
spec = DivergenceSpec("sharma_mittal", 2.0, 2.0)
for sharpness in (0.0, 1.0, 3.0, 8.0):
    logits = sharpness * np.array([1.0, 0.0, -0.5, -0.5, 0.0])
    soft = np.exp(logits) / np.exp(logits).sum()
    print(f"  sharpness {sharpness:3.1f}: L_e = {entropy_loss(soft, spec):.6f}")
print("(zero exactly at uniform, growing with concentration)")
