"""How hallucinated descriptors are sampled.

Each policy draws a combination weight alpha from a union of open intervals
and blends two distinct seen-class descriptors. Interpolation stays inside
the segment between them; extrapolation probes beyond it.
"""

import numpy as np

from genzsl import PRESETS, philox, sample_alphas, sample_hallucinated_text

rng = philox(0, 1)
for name in ("interpolate", "neg_extrapolate", "pos_extrapolate", "neg_pos", "all"):
    alphas = sample_alphas(PRESETS[name], 20000, philox(0, 2))
    print(f"{name:16s} support [{alphas.min():+.3f}, {alphas.max():+.3f}] "
          f"mean {alphas.mean():+.3f}")

print("\nblending two orthogonal descriptors t_a=[1,0], t_b=[0,1]:")
T = np.array([[1.0, 0.0], [0.0, 1.0]])
for name in ("interpolate", "neg_pos"):
    batch = sample_hallucinated_text(T, PRESETS[name], 5, philox(0, 3))
    print(f"  {name}:")
    for row in batch:
        print(f"    {np.round(row, 3)}")
print("(rows sum to 1: every hallucination is an affine combination)")
