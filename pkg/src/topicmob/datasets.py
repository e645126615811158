"""Synthetic report tables with a planted segmentation, for demos and tests."""

from __future__ import annotations

import csv
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np

from .corpus import COLUMNS

THEMES = {
    "ied": "ied explosion detonated bomb vehicle route patrol suicide bomber vest casualties",
    "contact": "enemy contact small arms fire engaged compound fighters returned troops element",
    "medevac": "medevac helicopter wounded soldier injured evacuated hospital treated nine line",
    "supply": "convoy supply delivered fuel trucks logistics escort arrived base route",
}

REGIONS = ["RC SOUTH", "RC EAST", "RC NORTH", "RC WEST", "RC CAPITAL"]
ATTACK_ON = ["ENEMY", "FRIEND", "NEUTRAL", "UNKNOWN"]


def planted_mean(theme: str, attack_on: str) -> float:
    """Mean fatality count of the planted structure: theme first, then attack target."""
    if theme == "ied":
        return 3.0
    if attack_on == "ENEMY":
        return 1.0
    return 0.15


def make_reports(n: int = 1200, seed=0, words_per_report: int = 25, theta: float = 0.8) -> list[dict]:
    """Rows with the canonical report columns; counts follow a two-level planted tree."""
    rng = np.random.default_rng(seed)
    themes = list(THEMES)
    vocab = {t: THEMES[t].split() for t in themes}
    filler = "the a of was at on reported during area local".split()
    start = datetime(2004, 1, 1)
    rows = []
    for i in range(n):
        theme = themes[rng.integers(len(themes))]
        attack = ATTACK_ON[rng.integers(len(ATTACK_ON))]
        words = list(rng.choice(vocab[theme], size=words_per_report)) + list(rng.choice(filler, size=5))
        rng.shuffle(words)
        mu = planted_mean(theme, attack)
        total = int(rng.poisson(mu * rng.gamma(theta, 1.0 / theta)))
        split = rng.multinomial(total, [0.2, 0.15, 0.05, 0.6])
        rows.append(
            {
                "id": f"R{i:05d}",
                "date": (start + timedelta(hours=int(rng.integers(0, 6 * 365 * 24)))).isoformat(sep=" "),
                "region": REGIONS[rng.integers(len(REGIONS))],
                "attack_on": attack,
                "dcolor": ["RED", "BLUE", "GREEN"][rng.integers(3)],
                "complex_attack": ["TRUE", "FALSE", ""][rng.integers(3)],
                "kia_civilian": int(split[0]),
                "kia_host": int(split[1]),
                "kia_friend": int(split[2]),
                "kia_enemy": int(split[3]),
                "summary": f"On {i % 28 + 1} July at 0{i % 9}30 hrs " + " ".join(words) + ".",
                "_theme": theme,
            }
        )
    return rows


def write_reports(path: str | Path, rows: list[dict]) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(COLUMNS), extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    return path
