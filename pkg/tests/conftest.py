import csv
from pathlib import Path

import numpy as np
import pytest

FIXTURES = Path(__file__).parent / "fixtures"


def write_schema_table(schema: dict, n: int, path, seed: int = 0, missing_rate: float = 0.1):
    """Write a synthetic CSV conforming to ``schema``; impute-policy columns get empty cells."""
    rng = np.random.default_rng(seed)
    cols = schema["columns"]
    rows = []
    for i in range(n):
        row = []
        for c in cols:
            if c["kind"] == "skip":
                row.append(f"id{i}")
            elif c.get("missing") == "impute_mean_with_indicator" and (i < 2 or rng.uniform() < missing_rate):
                row.append("")
            elif c["kind"] == "categorical":
                cats = c["categories"]
                row.append(cats[i % len(cats)] if i < len(cats) else cats[rng.integers(len(cats))])
            elif c["kind"] == "ordinal":
                row.append(str(int(rng.integers(0, 2 if c["name"].endswith("west_bengal") else 6))))
            else:
                row.append(repr(float(rng.normal(10, 3))))
        rows.append(row)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([c["name"] for c in cols])
        w.writerows(rows)
    return Path(path)


@pytest.fixture
def fixtures_dir():
    return FIXTURES
