"""Python bindings for the cdrloc pipeline."""

from ._core import (
    CdrlocError,
    chi_squared_p,
    chi_squared_statistic,
    chi_squared_test,
    f1_score,
    haversine_km,
    minmax_scale,
    nearest_rank_percentile,
    planar_km,
    shannon_entropy,
    stage_names,
    weighted_kmeans,
)
from ._core import run as _run

__all__ = [
    "CdrlocError",
    "chi_squared_p",
    "chi_squared_statistic",
    "chi_squared_test",
    "f1_score",
    "haversine_km",
    "minmax_scale",
    "nearest_rank_percentile",
    "planar_km",
    "run",
    "shannon_entropy",
    "stage_names",
    "weighted_kmeans",
]


def run(stage="run", **settings):
    """Run one stage (or "run" for all enabled stages).

    Keyword names match the config file keys; dots become double
    underscores, e.g. ``world__users=50``. Returns (exit_code, stdout, stderr).
    """
    pairs = []
    for key, value in settings.items():
        if isinstance(value, (list, tuple, set)):
            value = ",".join(str(v) for v in value)
        elif isinstance(value, bool):
            value = "1" if value else "0"
        pairs.append((key.replace("__", "."), str(value)))
    return _run(stage, pairs)
