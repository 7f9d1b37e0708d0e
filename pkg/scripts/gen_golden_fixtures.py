"""Regenerate the recorded fixtures under tests/data/.

Run from the repository root after any intentional change to the observation
layout, the quick-fit recipe in tests/conftest.py, or the prior architecture:

    python3 scripts/gen_golden_fixtures.py
"""

import os
import sys

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from wbm.env import EmbraceConfig, EmbraceEnv, act_through_prior
from wbm.nsdf import NsdfFitConfig, fit_nsdf
from wbm.prior import DistillConfig, PriorBundle
from wbm.robot import default_humanoid


def main() -> None:
    out = os.path.join(os.path.dirname(__file__), "..", "tests", "data")
    os.makedirs(out, exist_ok=True)
    spec = default_humanoid()
    # must match the nsdf_quick fixture in tests/conftest.py
    nsdf = fit_nsdf(spec, NsdfFitConfig(samples_per_link=5000, epochs=2,
                                        holdout=200), seed=0)
    env = EmbraceEnv(spec, nsdf, EmbraceConfig(n_lanes=3))
    obs = env.reset_all(np.random.default_rng(42))

    bundle = PriorBundle.create(spec, DistillConfig(), np.random.default_rng(0))
    bundle.freeze_deployment()
    u = np.random.default_rng(7).normal(size=(3, bundle.manifest["latent_dim"]))
    action = act_through_prior(bundle, obs, u)

    path = os.path.join(out, "golden_env.npz")
    np.savez(path, obs=obs, latent=u, action=action,
             scenario=env.lane_scenario)
    print(f"wrote {path}: obs {obs.shape}, action {action.shape}")


if __name__ == "__main__":
    main()
