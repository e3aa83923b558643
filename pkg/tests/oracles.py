"""Independent reference implementations used to check the metrics.

These are written from the scoring rules directly and share no code with
``nlsearch.metrics`` apart from the embedding provider, which is an input.
"""

from __future__ import annotations

import math
import re

import numpy as np


def jaccard_bruteforce(a, b) -> float:
    """Count intersection and union by enumerating every element of the universe."""
    a = [x.lower() for x in a]
    b = [x.lower() for x in b]
    universe = []
    for x in a + b:
        if x not in universe:
            universe.append(x)
    if not universe:
        return 1.0
    inter = sum(1 for x in universe if x in a and x in b)
    return inter / len(universe)


def flatten(value) -> str:
    if isinstance(value, str):
        return value.lower()
    return " ".join(sorted(v.lower() for v in value))


def cosine_naive(a, b) -> float:
    """Build dense term-frequency vectors over a shared vocabulary, then dot / norms."""
    fa, fb = flatten(a), flatten(b)
    if fa == fb:
        return 1.0
    ta = re.findall(r"[^\W_]+", fa)
    tb = re.findall(r"[^\W_]+", fb)
    if not ta or not tb:
        return 0.0
    vocab = sorted(set(ta) | set(tb))
    va = [ta.count(w) for w in vocab]
    vb = [tb.count(w) for w in vocab]
    dot = sum(x * y for x, y in zip(va, vb))
    return min(1.0, dot / (math.sqrt(sum(x * x for x in va)) * math.sqrt(sum(y * y for y in vb))))


def semantic_naive(a, b, provider) -> float:
    fa, fb = flatten(a), flatten(b)
    if fa == fb:
        return 1.0
    va, vb = np.asarray(provider.embed(fa)), np.asarray(provider.embed(fb))
    na, nb = math.sqrt(float(va @ va)), math.sqrt(float(vb @ vb))
    if na == 0 or nb == 0:
        return 0.0
    return min(1.0, max(0.0, float(va @ vb) / (na * nb)))


# field name -> (kind, shape) for the 15 default fields; integer fields are
# expanded into two bound units below
DEFAULT_FIELDS = {
    "company_keywords": ("free_text", "list"),
    "company_name": ("free_text", "list"),
    "location": ("categorical", "map"),
    "revenue_bounds": ("integer", "bounds"),
    "employee_bounds": ("integer", "bounds"),
    "technologies": ("categorical", "list"),
    "company_attributes": ("categorical", "list"),
    "company_type": ("categorical", "list"),
    "company_news": ("categorical", "list"),
    "management_levels": ("categorical", "list"),
    "departments": ("categorical", "list"),
    "person_name": ("free_text", "scalar"),
    "titles": ("free_text", "list"),
    "contact_info": ("categorical", "list"),
    "person_or_company": ("categorical", "scalar"),
}


def _as_set(value, shape):
    if shape == "map":
        return [f"{k}:{v}" for k, vs in value.items() for v in vs]
    if shape == "scalar":
        return [value]
    return list(value)


def _exact(a, b, shape) -> float:
    if shape == "scalar":
        return float(a.lower() == b.lower())
    return float(sorted(x.lower() for x in a) == sorted(x.lower() for x in b))


def all_metric_values(gt, pred, provider) -> list[float]:
    """Every metric value of the default schema for one query (34 numbers)."""
    values: list[float] = []
    for name, (kind, shape) in DEFAULT_FIELDS.items():
        if kind == "integer":
            for side in ("min", "max"):
                g = getattr(gt[name], side) if name in gt else None
                p = getattr(pred[name], side) if name in pred else None
                if g is None and p is None:
                    values.append(1.0)
                elif g is None or p is None:
                    values.append(0.0)
                else:
                    values.append(float(g == p))
            continue
        n = 3 if kind == "free_text" else 2
        g, p = gt.get(name), pred.get(name)
        if g is None and p is None:
            values += [1.0] * n
        elif g is None or p is None:
            values += [0.0] * n
        elif kind == "categorical":
            sg, sp = _as_set(g, shape), _as_set(p, shape)
            values += [_exact(sorted(sg), sorted(sp), "list"), jaccard_bruteforce(sg, sp)]
        else:
            values += [_exact(g, p, shape), cosine_naive(g, p), semantic_naive(g, p, provider)]
    return values


def average_oracle(gt, pred, provider) -> float:
    values = all_metric_values(gt, pred, provider)
    assert len(values) == 34
    return math.fsum(values) / 34
