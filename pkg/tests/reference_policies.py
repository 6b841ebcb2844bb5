"""Benchmark policy grids shared across the test suite.

Two parameter grids over realistic training horizons (10k and 70k
iterations) exercise every decaying family and the TRI/SIN/COS cyclic
variants at several rate scales; a small extra grid covers the COS2 and
COSEXP waveforms, which carry formula-level tests only.  Each row pairs
a policy document with a published peak top-1 accuracy (as a fraction)
so ranking and database tests can seed realistic leaderboards.
"""

BUDGET_10K = 10_000
BUDGET_70K = 70_000

GRID_10K = [
    {"doc": {"type": "FIX", "k": 0.1}, "acc": 0.1135},
    {"doc": {"type": "FIX", "k": 0.01}, "acc": 0.9911},
    {"doc": {"type": "FIX", "k": 0.001}, "acc": 0.9876},
    {"doc": {"type": "FIX", "k": 0.0001}, "acc": 0.9510},
    {"doc": {"type": "NSTEP", "k": 0.01, "gamma": 0.9,
             "boundaries": [5000, 7000, 8000, 9000, 9500]}, "acc": 0.9912},
    {"doc": {"type": "STEP", "k": 0.01, "gamma": 0.85, "l": 5000}, "acc": 0.9912},
    {"doc": {"type": "EXP", "k": 0.01, "gamma": 0.99994}, "acc": 0.9912},
    {"doc": {"type": "INV", "k": 0.01, "gamma": 0.0001, "p": 0.75}, "acc": 0.9912},
    {"doc": {"type": "POLY", "k": 0.01, "p": 1.2}, "acc": 0.9913},
    {"doc": {"type": "TRI", "k0": 0.01, "k1": 0.06, "l": 2000}, "acc": 0.9928},
    {"doc": {"type": "TRI2", "k0": 0.01, "k1": 0.06, "l": 2000}, "acc": 0.9928},
    {"doc": {"type": "TRIEXP", "k0": 0.01, "k1": 0.06, "l": 2000, "gamma": 0.99994}, "acc": 0.9927},
    {"doc": {"type": "SIN", "k0": 0.01, "k1": 0.06, "l": 2000}, "acc": 0.9931},
    {"doc": {"type": "SIN2", "k0": 0.01, "k1": 0.06, "l": 2000}, "acc": 0.9933},
    {"doc": {"type": "SINEXP", "k0": 0.01, "k1": 0.06, "l": 2000, "gamma": 0.99994}, "acc": 0.9928},
    {"doc": {"type": "COS", "k0": 0.01, "k1": 0.06, "l": 2000}, "acc": 0.9932},
]

GRID_70K = [
    {"doc": {"type": "FIX", "k": 0.1}, "acc": 0.1002},
    {"doc": {"type": "FIX", "k": 0.01}, "acc": 0.6963},
    {"doc": {"type": "FIX", "k": 0.001}, "acc": 0.7862},
    {"doc": {"type": "FIX", "k": 0.0001}, "acc": 0.7528},
    {"doc": {"type": "NSTEP", "k": 0.001, "gamma": 0.1,
             "boundaries": [60000, 65000]}, "acc": 0.8161},
    {"doc": {"type": "STEP", "k": 0.001, "gamma": 0.85, "l": 5000}, "acc": 0.7995},
    {"doc": {"type": "EXP", "k": 0.001, "gamma": 0.99994}, "acc": 0.7928},
    {"doc": {"type": "INV", "k": 0.001, "gamma": 0.0001, "p": 0.75}, "acc": 0.7887},
    {"doc": {"type": "POLY", "k": 0.001, "p": 1.2}, "acc": 0.8151},
    {"doc": {"type": "TRI", "k0": 0.001, "k1": 0.006, "l": 2000}, "acc": 0.7939},
    {"doc": {"type": "TRI2", "k0": 0.001, "k1": 0.006, "l": 2000}, "acc": 0.7995},
    {"doc": {"type": "TRIEXP", "k0": 0.001, "k1": 0.006, "l": 2000, "gamma": 0.99994}, "acc": 0.8016},
    {"doc": {"type": "TRI", "k0": 0.00005, "k1": 0.006, "l": 2000}, "acc": 0.8175},
    {"doc": {"type": "TRI2", "k0": 0.00005, "k1": 0.006, "l": 2000}, "acc": 0.8071},
    {"doc": {"type": "TRIEXP", "k0": 0.00005, "k1": 0.006, "l": 2000, "gamma": 0.99994}, "acc": 0.8192},
    {"doc": {"type": "SIN", "k0": 0.00005, "k1": 0.006, "l": 2000}, "acc": 0.8176},
    {"doc": {"type": "SIN2", "k0": 0.00005, "k1": 0.006, "l": 2000}, "acc": 0.8079},
    {"doc": {"type": "SINEXP", "k0": 0.00005, "k1": 0.006, "l": 2000, "gamma": 0.99994}, "acc": 0.8216},
    {"doc": {"type": "COS", "k0": 0.00005, "k1": 0.006, "l": 2000}, "acc": 0.8143},
]

# COS2/COSEXP have no published parameter rows; exercise the formulas
# on the 10k grid's cyclic parameters.
GRID_EXTRA = [
    {"doc": {"type": "COS2", "k0": 0.01, "k1": 0.06, "l": 2000}, "acc": None},
    {"doc": {"type": "COSEXP", "k0": 0.01, "k1": 0.06, "l": 2000, "gamma": 0.99994}, "acc": None},
]


def probe_iterations(doc: dict, budget: int) -> list[int]:
    """Iterations to probe: 0, cycle edges, every boundary edge, mid, end."""
    ts = {0, budget // 2, budget - 1}
    if "l" in doc:
        l = doc["l"]
        ts.update((l - 1, l, 2 * l))
    for b in doc.get("boundaries", ()):
        ts.update((b - 1, b))
    if doc.get("boundaries"):
        ts.add(2 * doc["boundaries"][0])
    return sorted(t for t in ts if 0 <= t < budget)
