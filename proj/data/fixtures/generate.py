#!/usr/bin/env python3
"""Regenerates the bundled fixture CSVs. Output is fixed by the seeds below."""
import csv
import random
from pathlib import Path

HERE = Path(__file__).resolve().parent


def separable(path, n=200, seed=7):
    rng = random.Random(seed)
    colours = ["red", "green", "blue", "yellow"]
    label_of = {"red": "accept", "green": "accept", "blue": "reject", "yellow": "reject"}
    rows = []
    for i in range(n):
        colour = colours[i % 4]
        rows.append({
            "colour": colour,
            "size": rng.choice(["small", "medium", "large"]),
            "material": rng.choice(["wood", "metal", "plastic", "glass"]),
            "weight": f"{rng.gauss(50.0, 12.0):.1f}",
            "age": str(rng.randint(1, 40)),
            "outcome": label_of[colour],
        })
    rng.shuffle(rows)
    write(path, rows)


def imbalanced(path, n=300, seed=11):
    rng = random.Random(seed)
    labels = ["good"] * (n * 7 // 10) + ["bad"] * (n - n * 7 // 10)
    rng.shuffle(labels)
    rows = []
    for label in labels:
        rows.append({
            "checking_status": rng.choice(["<0", "0<=X<200", ">=200", "no checking"]),
            "duration": str(rng.randint(4, 72)),
            "purpose": rng.choice(["radio/tv", "education", "furniture/equipment", "new car", "used car"]),
            "credit_amount": str(rng.randint(250, 18000)),
            "housing": rng.choice(["own", "rent", "for free"]),
            "age": str(rng.randint(19, 75)),
            "class": label,
        })
    write(path, rows)


def write(path, rows):
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=list(rows[0].keys()), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


if __name__ == "__main__":
    separable(HERE / "separable.csv")
    imbalanced(HERE / "credit_like.csv")
