"""Shared helpers for the light-switch model scripts: the site's sufficient
statistics and a small dense solver. Features are an intercept, work-area
illuminance and occupancy; the target is the switch-on probability.
"""
import csv
import json

FEATURES = ["illuminance", "occupancy"]
TARGET = "switch_prob"


def command():
    fields = dict(line.split("=", 1) for line in open("command.txt").read().split("\n") if "=" in line)
    return fields["COMMAND"], int(fields["ITERATION"])


def rows():
    with open("data/lighting") as f:
        for r in csv.DictReader(f):
            yield [1.0] + [float(r[k]) for k in FEATURES], float(r[TARGET])


def sufficient_stats():
    d = len(FEATURES) + 1
    gram = [[0.0] * d for _ in range(d)]
    xty = [0.0] * d
    yty = 0.0
    n = 0
    for x, y in rows():
        n += 1
        yty += y * y
        for i in range(d):
            xty[i] += x[i] * y
            for j in range(d):
                gram[i][j] += x[i] * x[j]
    return {"n": n, "gram": gram, "xty": xty, "yty": yty}


def gradient(stats, beta):
    """X^T (X beta - y) and the squared error at beta."""
    g = [sum(stats["gram"][i][j] * beta[j] for j in range(len(beta))) - stats["xty"][i] for i in range(len(beta))]
    bgb = sum(beta[i] * stats["gram"][i][j] * beta[j] for i in range(len(beta)) for j in range(len(beta)))
    sse = bgb - 2.0 * sum(b * c for b, c in zip(beta, stats["xty"])) + stats["yty"]
    return g, sse


def solve(a, b):
    """Gaussian elimination with partial pivoting."""
    n = len(b)
    m = [row[:] + [b[i]] for i, row in enumerate(a)]
    for col in range(n):
        piv = max(range(col, n), key=lambda r: abs(m[r][col]))
        if m[piv][col] == 0.0:
            raise ValueError("singular system")
        m[col], m[piv] = m[piv], m[col]
        for r in range(col + 1, n):
            f = m[r][col] / m[col][col]
            for c in range(col, n + 1):
                m[r][c] -= f * m[col][c]
    x = [0.0] * n
    for r in range(n - 1, -1, -1):
        x[r] = (m[r][n] - sum(m[r][c] * x[c] for c in range(r + 1, n))) / m[r][r]
    return x


def dump(path, value):
    with open(path, "w") as f:
        json.dump(value, f, sort_keys=True)


def load(path):
    with open(path) as f:
        return json.load(f)
