"""Dev scratch: verify rounded hug/prehug postures across standoffs."""
import numpy as np
from scratch_tune_hug import contact_eval, posture_from

HUG = [-0.8, -1.2, 0.55, -0.85, 1.05, -0.75]
PREHUG = [-0.9, -0.55, 0.25, -0.45, 0.55, -0.35]

print("HUG across standoff:")
for d in [0.24, 0.26, 0.28, 0.30, 0.32, 0.34, 0.36, 0.38, 0.40, 0.44]:
    att, con, dists, hand_d = contact_eval(posture_from(np.array(HUG), 0.0), d)
    print(f"  d={d:.2f} attached={att} n_contacts={len(con)} hands={np.round(hand_d,3).tolist()}")

print("PREHUG across standoff:")
for d in [0.28, 0.32, 0.36, 0.40]:
    att, con, dists, hand_d = contact_eval(posture_from(np.array(PREHUG), 0.0), d)
    print(f"  d={d:.2f} attached={att} n_contacts={len(con)} contacts={con}")

print("interpolation prehug->hug at d=0.32:")
for a in np.linspace(0, 1, 11):
    q = posture_from((1 - a) * np.array(PREHUG) + a * np.array(HUG), 0.0)
    att, con, dists, hand_d = contact_eval(q, 0.32)
    print(f"  alpha={a:.1f} attached={att} n={len(con)}")
