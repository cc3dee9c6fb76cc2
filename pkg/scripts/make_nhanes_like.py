"""Regenerate data/nhanes_like.csv, a synthetic stand-in for the school meal data.

Covariate names follow the confounders of the childhood nutrition analysis;
the values are simulated.  BMI does not depend on participation, so every
consistent estimator targets an effect of zero.
"""

from pathlib import Path

import numpy as np
from scipy.special import expit

N = 2330
SEED = 20080101


def main(path: Path) -> None:
    rng = np.random.default_rng(SEED)
    age = rng.integers(4, 18, N)
    male = rng.binomial(1, 0.52, N)
    race = rng.choice(3, N, p=[0.25, 0.30, 0.45])
    black, hispanic = (race == 0).astype(int), (race == 1).astype(int)
    above_poverty = rng.binomial(1, expit(0.3 - 0.8 * black - 0.9 * hispanic))
    wic = rng.binomial(1, expit(-1.5 + 0.6 * (age < 6) - 0.9 * above_poverty))
    food_stamp = rng.binomial(1, expit(-0.6 - 1.6 * above_poverty + 0.4 * black))
    food_secure = rng.binomial(1, expit(1.2 + 0.9 * above_poverty - 0.5 * food_stamp))
    insured = rng.binomial(1, expit(1.8 + 0.5 * above_poverty))
    resp_age = np.round(rng.normal(38 - 2.5 * (1 - above_poverty), 8, N)).clip(18, 80)
    resp_male = rng.binomial(1, 0.35 + 0.1 * above_poverty)
    lin = (
        0.4 + 0.02 * (age - 10) + 0.7 * black + 0.6 * hispanic - 1.1 * above_poverty
        + 0.3 * wic + 0.8 * food_stamp - 0.2 * food_secure - 0.01 * (resp_age - 38)
        - 0.3 * resp_male
    )
    meal = rng.binomial(1, expit(lin))
    bmi = (
        14.0 + 0.55 * age + 0.5 * black + 0.7 * hispanic - 0.4 * above_poverty
        + 0.2 * food_stamp - 0.1 * food_secure + 0.02 * (resp_age - 38)
        + rng.normal(0.0, 3.0, N)
    )
    cols = {
        "id": np.arange(1, N + 1), "age": age, "male": male, "black": black,
        "hispanic": hispanic, "above_poverty": above_poverty, "wic": wic,
        "food_stamp": food_stamp, "food_secure": food_secure, "insured": insured,
        "resp_age": resp_age.astype(int), "resp_male": resp_male,
        "school_meal": meal, "bmi": np.round(bmi, 2),
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(cols) + "\n")
        for i in range(N):
            fh.write(",".join(str(cols[c][i]) for c in cols) + "\n")


if __name__ == "__main__":
    main(Path(__file__).resolve().parent.parent / "data" / "nhanes_like.csv")
