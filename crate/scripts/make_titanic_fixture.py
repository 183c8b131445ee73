"""Writes a synthetic passenger table with the column layout of the
seaborn `titanic` dataset, for offline tests.

    python3 scripts/make_titanic_fixture.py > crates/core/tests/fixtures/titanic.csv
"""

import csv
import sys

import numpy as np

N_ROWS = 300
SEED = 20240

rng = np.random.default_rng(SEED)
out = csv.writer(sys.stdout, lineterminator="\n")
out.writerow(["survived", "pclass", "sex", "age", "sibsp", "parch", "fare", "embarked", "class",
              "who", "adult_male", "deck", "embark_town", "alive", "alone"])

towns = {"S": "Southampton", "C": "Cherbourg", "Q": "Queenstown"}
for _ in range(N_ROWS):
    pclass = int(rng.choice([1, 2, 3], p=[0.25, 0.2, 0.55]))
    sex = "female" if rng.random() < 0.36 else "male"
    age = float(np.clip(rng.normal(30 - 4 * (pclass == 3), 13), 0.5, 78))
    age = round(age) if age >= 1 else round(age, 2)
    sibsp = int(rng.choice([0, 1, 2, 3], p=[0.68, 0.23, 0.05, 0.04]))
    parch = int(rng.choice([0, 1, 2], p=[0.76, 0.14, 0.10]))
    fare = round(float(rng.lognormal({1: 4.2, 2: 3.0, 3: 2.2}[pclass], 0.5)), 4)
    embarked = str(rng.choice(["S", "C", "Q"], p=[0.72, 0.19, 0.09]))
    who = "child" if age < 16 else ("woman" if sex == "female" else "man")
    deck = ""
    if rng.random() < {1: 0.8, 2: 0.15, 3: 0.05}[pclass]:
        deck = str(rng.choice(list("ABCDE" if pclass == 1 else "DEFG")))

    logit = 0.4 + 2.4 * (sex == "female") - 0.9 * (pclass - 1) + 1.0 * (who == "child") - 0.02 * (age - 30)
    logit += 0.3 * (embarked == "C") - 0.3 * (sibsp > 2)
    survived = int(rng.random() < 1 / (1 + np.exp(-logit)))

    if rng.random() < 0.2:
        age = ""
    if rng.random() < 0.01:
        embarked = ""
    out.writerow([
        survived, pclass, sex, age, sibsp, parch, fare, embarked,
        {1: "First", 2: "Second", 3: "Third"}[pclass], who,
        who == "man", deck, towns.get(embarked, ""), "yes" if survived else "no",
        sibsp + parch == 0,
    ])
