"""Data pipeline: point observations to weekly densities to a directed network.

Observations (one measured value per row, stamped with a date and site
coordinates) are bucketed into weeks, sites are clustered into regions by
k-means followed by a merge pass that removes thinly sampled clusters,
and each (week, region) cell gets a density estimate: the nationwide
weekly fit acts as a Dirichlet prior whose strength is a tuning
parameter, so sparse cells shrink toward the national pattern.  The
resulting weight panel is mapped to logit coordinates and handed to the
factor-adjusted VAR estimator; selected edges are exported as JSON/CSV
networks with a per-factor-count edge tally.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import pandas as pd
from sklearn.cluster import KMeans

from .em import DirichletPrior, fit_map, fit_mle
from .factor_var import FactorVarConfig, TransformedPanel, fit
from .inference import covariance, select_edges, write_network
from .spline import SplineBasis, build_basis
from .transform import TransformConfig, build_metric, logit_delta

OBSERVATION_COLUMNS = ("date", "value", "latitude", "longitude", "site_id")

PRIOR_FLOOR = 1e-10


class PipelineError(RuntimeError):
    """Failure in a named pipeline stage."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


@dataclass
class PipelineConfig:
    """End-to-end settings; defaults follow the baseline analysis."""

    support: tuple[float, float] = (10.0, 40.0)
    J: int = 15
    degree: int = 3
    delta: float = 1.0
    gamma: float = 1.0
    k_init: int = 60
    min_weekly: float = 30.0
    start_date: dt.date = dt.date(2020, 3, 16)
    lag: int = 1
    r: int | list[int] = field(default_factory=lambda: list(range(9)))
    fdr: float = 0.05
    seed: int = 0
    distance: str = "euclidean"
    demean: bool = True

    def __post_init__(self):
        lo, hi = self.support
        if lo >= hi:
            raise ValueError("support must satisfy lo < hi")
        if self.gamma < 0 or self.min_weekly < 0:
            raise ValueError("gamma and min_weekly must be nonnegative")
        if self.k_init < 1 or self.lag < 1:
            raise ValueError("k_init and lag must be positive")
        if not 0 < self.fdr < 1:
            raise ValueError("fdr must lie in (0, 1)")
        if self.distance not in ("euclidean", "haversine"):
            raise ValueError("distance must be 'euclidean' or 'haversine'")
        if isinstance(self.start_date, str):
            self.start_date = dt.date.fromisoformat(self.start_date)

    @property
    def r_values(self) -> list[int]:
        return [self.r] if isinstance(self.r, int) else list(self.r)


def load_config(path) -> PipelineConfig:
    """Read a YAML key-value file mirroring :class:`PipelineConfig` fields."""
    import yaml

    with open(path) as fh:
        raw = yaml.safe_load(fh) or {}
    if not isinstance(raw, dict):
        raise ValueError(f"config file {path} must hold a key-value mapping")
    valid = set(PipelineConfig.__dataclass_fields__)
    unknown = set(raw) - valid
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    if "support" in raw:
        raw["support"] = tuple(raw["support"])
    return PipelineConfig(**raw)


def week_index(date, start_date) -> int:
    """1-based week number: ``1 + floor((date - start_date) / 7 days)``."""
    if isinstance(date, str):
        date = dt.date.fromisoformat(date)
    if isinstance(start_date, str):
        start_date = dt.date.fromisoformat(start_date)
    offset = (date - start_date).days
    if offset < 0:
        raise ValueError(f"date {date} precedes the start date {start_date}")
    return 1 + offset // 7


def load_observations(path, config: PipelineConfig) -> tuple[pd.DataFrame, int]:
    """Read an observation CSV, dropping out-of-support values.

    The file must carry the columns ``date,value,latitude,longitude,site_id``
    (ISO dates, decimal degrees; ``site_id`` may be empty).  Returns the
    kept rows plus a count of dropped ones.
    """
    obs = pd.read_csv(path)
    missing = set(OBSERVATION_COLUMNS) - set(obs.columns)
    if missing:
        raise ValueError(f"observation file lacks columns: {sorted(missing)}")
    obs = obs.copy()
    obs["date"] = pd.to_datetime(obs["date"]).dt.date
    lo, hi = config.support
    in_support = (obs["value"] >= lo) & (obs["value"] <= hi)
    n_dropped = int((~in_support).sum())
    obs = obs[in_support].reset_index(drop=True)
    key = obs["site_id"].astype("string")
    fallback = (
        obs["latitude"].map("{:.6f}".format) + "," + obs["longitude"].map("{:.6f}".format)
    )
    obs["site_key"] = key.where(key.notna() & (key != ""), fallback)
    obs["week"] = [week_index(d, config.start_date) for d in obs["date"]]
    return obs, n_dropped


@dataclass
class RegionAssignment:
    """Site-to-region map with region centroids ordered north to south."""

    region_of_site: dict[str, int]
    centroids: np.ndarray
    C: int


def _centroid_distance(a: np.ndarray, b: np.ndarray, metric: str) -> float:
    if metric == "euclidean":
        return float(np.linalg.norm(a - b))
    lat1, lon1, lat2, lon2 = np.radians([a[0], a[1], b[0], b[1]])
    inner = (
        np.sin((lat2 - lat1) / 2) ** 2
        + np.cos(lat1) * np.cos(lat2) * np.sin((lon2 - lon1) / 2) ** 2
    )
    return float(2 * 6371.0 * np.arcsin(np.sqrt(inner)))


def cluster_regions(
    sites: pd.DataFrame,
    n_weeks: int,
    k_init: int,
    min_weekly: float,
    seed: int = 0,
    distance: str = "euclidean",
) -> RegionAssignment:
    """Spatial k-means with a merge pass enforcing a weekly sample floor.

    ``sites`` needs columns ``site_key``, ``latitude``, ``longitude`` and
    ``n_obs`` (total observations per site).  After k-means++ on the
    coordinates, the cluster with the smallest average weekly count is
    repeatedly merged into its nearest neighbor (centroid distance) until
    every cluster averages at least ``min_weekly`` observations per week
    or one cluster remains.  Merged centroids are observation-count
    weighted means; regions are numbered 1..C by descending latitude.
    """
    if len(sites) == 0:
        raise ValueError("no sites to cluster")
    coords = sites[["latitude", "longitude"]].to_numpy(dtype=float)
    counts = sites["n_obs"].to_numpy(dtype=float)
    k = min(k_init, len(sites))
    if k == 1:
        labels = np.zeros(len(sites), dtype=int)
    else:
        km = KMeans(n_clusters=k, init="k-means++", n_init=10, random_state=seed)
        labels = km.fit_predict(coords)

    def weighted_centroid(members):
        w = counts[members]
        if w.sum() > 0:
            return (coords[members] * w[:, None]).sum(axis=0) / w.sum()
        return coords[members].mean(axis=0)

    clusters = []
    for lab in np.unique(labels):
        members = np.nonzero(labels == lab)[0]
        clusters.append(
            {
                "members": list(members),
                "count": counts[members].sum(),
                "centroid": weighted_centroid(members),
            }
        )

    while len(clusters) > 1:
        weekly = np.array([c["count"] / n_weeks for c in clusters])
        if weekly.min() >= min_weekly:
            break
        i = int(weekly.argmin())
        dists = [
            np.inf
            if j == i
            else _centroid_distance(
                clusters[i]["centroid"], clusters[j]["centroid"], distance
            )
            for j in range(len(clusters))
        ]
        j = int(np.argmin(dists))
        clusters[j]["members"].extend(clusters[i]["members"])
        clusters[j]["count"] += clusters[i]["count"]
        clusters[j]["centroid"] = weighted_centroid(clusters[j]["members"])
        del clusters[i]

    order = np.argsort([-c["centroid"][0] for c in clusters], kind="stable")
    region_of_site = {}
    centroids = np.zeros((len(clusters), 2))
    keys = sites["site_key"].tolist()
    for region, idx in enumerate(order, start=1):
        centroids[region - 1] = clusters[idx]["centroid"]
        for member in clusters[idx]["members"]:
            region_of_site[keys[member]] = region
    return RegionAssignment(
        region_of_site=region_of_site, centroids=centroids, C=len(clusters)
    )


def site_table(obs: pd.DataFrame) -> pd.DataFrame:
    """Per-site coordinates and observation totals from the observation rows."""
    grouped = obs.groupby("site_key", sort=True)
    table = grouped.agg(
        latitude=("latitude", "mean"),
        longitude=("longitude", "mean"),
        n_obs=("value", "size"),
    ).reset_index()
    return table


def weekly_densities(
    obs: pd.DataFrame,
    assignment: RegionAssignment,
    config: PipelineConfig,
    basis: SplineBasis | None = None,
    n_weeks: int | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-(week, region) mixture weights with a nationwide weekly prior.

    Each week's pooled observations are fitted by maximum likelihood to
    give the nationwide weights; every region is then fitted with those
    weights as the Dirichlet prior mean at strength ``gamma``.  Regions
    with no observations in a week inherit the prior mean.  A week with
    no observations anywhere reuses the previous week's nationwide fit;
    the first week cannot be empty.

    Returns ``(region_weights, nationwide)`` of shapes
    ``(T, C, J + 1)`` and ``(T, J + 1)``.
    """
    basis = basis or build_basis(*config.support, config.degree, config.J)
    T = n_weeks or int(obs["week"].max())
    C = assignment.C
    region = obs["site_key"].map(assignment.region_of_site)
    if region.isna().any():
        raise ValueError("observations reference sites missing from the clustering")
    values = obs["value"].to_numpy(dtype=float)
    weeks = obs["week"].to_numpy(dtype=int)
    region = region.to_numpy(dtype=int)

    nationwide = np.zeros((T, basis.num_weights))
    region_weights = np.zeros((T, C, basis.num_weights))
    prev_nat = None
    for t in range(1, T + 1):
        in_week = weeks == t
        x_nat = values[in_week]
        if x_nat.size:
            w_nat, _ = fit_mle(x_nat, basis)
        elif prev_nat is not None:
            w_nat = prev_nat
        else:
            raise ValueError(
                f"week {t} has no observations and no earlier week to borrow from"
            )
        prev_nat = w_nat
        nationwide[t - 1] = w_nat
        floored = np.maximum(w_nat, PRIOR_FLOOR)
        prior = DirichletPrior(alpha0=floored / floored.sum(), gamma=config.gamma)
        for c in range(1, C + 1):
            x_cell = values[in_week & (region == c)]
            w_cell, _ = fit_map(x_cell, basis, prior)
            region_weights[t - 1, c - 1] = w_cell
    return region_weights, nationwide


def weights_to_panel(
    region_weights: np.ndarray, config: PipelineConfig, basis: SplineBasis | None = None
) -> TransformedPanel:
    """Logit-transform a weight cube ``(T, C, J+1)`` into a stacked panel."""
    T, C, _ = region_weights.shape
    basis = basis or build_basis(*config.support, config.degree, config.J)
    tcfg = TransformConfig(delta=config.delta, J=config.J)
    Y = logit_delta(region_weights, tcfg).reshape(T, C * config.J)
    metric = build_metric(basis, tcfg, C)
    return TransformedPanel(Y=Y, C=C, J=config.J, metric=metric)


def weights_frame(region_weights: np.ndarray) -> pd.DataFrame:
    """Long-format weight table with columns ``week, region, w_1..w_{J+1}``."""
    T, C, K = region_weights.shape
    rows = region_weights.reshape(T * C, K)
    frame = pd.DataFrame(rows, columns=[f"w_{j}" for j in range(1, K + 1)])
    frame.insert(0, "region", np.tile(np.arange(1, C + 1), T))
    frame.insert(0, "week", np.repeat(np.arange(1, T + 1), C))
    return frame


def read_weights_csv(path) -> np.ndarray:
    """Inverse of :func:`weights_frame` from a CSV file."""
    frame = pd.read_csv(path)
    weight_cols = [c for c in frame.columns if c.startswith("w_")]
    T = int(frame["week"].max())
    C = int(frame["region"].max())
    cube = np.zeros((T, C, len(weight_cols)))
    cube[frame["week"] - 1, frame["region"] - 1] = frame[weight_cols].to_numpy()
    return cube


def _stage(stage: str, func, *args, **kwargs):
    try:
        return func(*args, **kwargs)
    except PipelineError:
        raise
    except Exception as exc:
        raise PipelineError(stage, str(exc)) from exc


def run_analysis(
    config: PipelineConfig,
    input_path,
    out_dir,
    figures: bool = True,
) -> dict:
    """Full pipeline: ingest, cluster, estimate densities, fit, select edges.

    Writes into ``out_dir``: the weight tables (regional and nationwide),
    one network JSON/CSV pair per requested factor count, an edge-count
    table across factor counts, and optionally an edge-count figure.
    Returns a summary dictionary with file paths and selected networks.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    obs, n_dropped = _stage("ingest", load_observations, input_path, config)
    if len(obs) == 0:
        raise PipelineError("ingest", "no observations inside the support")
    n_weeks = int(obs["week"].max())
    sites = _stage("cluster", site_table, obs)
    assignment = _stage(
        "cluster",
        cluster_regions,
        sites,
        n_weeks,
        config.k_init,
        config.min_weekly,
        config.seed,
        config.distance,
    )
    basis = build_basis(*config.support, config.degree, config.J)
    region_weights, nationwide = _stage(
        "densities", weekly_densities, obs, assignment, config, basis, n_weeks
    )
    panel = _stage("transform", weights_to_panel, region_weights, config, basis)

    weights_path = out / "weights.csv"
    weights_frame(region_weights).to_csv(weights_path, index=False)
    nat_frame = pd.DataFrame(
        nationwide, columns=[f"w_{j}" for j in range(1, nationwide.shape[1] + 1)]
    )
    nat_frame.insert(0, "week", np.arange(1, n_weeks + 1))
    nat_path = out / "nationwide_weights.csv"
    nat_frame.to_csv(nat_path, index=False)

    networks = {}
    edge_counts = []
    for r in config.r_values:
        result = _stage(
            "fit", fit, panel, FactorVarConfig(p=config.lag, r=r, demean=config.demean)
        )
        cov = _stage("inference", covariance, result, panel)
        network = _stage("inference", select_edges, result, cov, config.fdr)
        networks[r] = network
        edge_counts.append(
            {"r": r, "n_edges": len(network.selected_edges)}
        )
        write_network(
            network,
            panel.C,
            out / f"network_r{r}.json",
            out / f"network_r{r}.csv",
            labels=[f"region {i}" for i in range(1, panel.C + 1)],
        )

    counts_frame = pd.DataFrame(edge_counts)
    counts_path = out / "edge_counts.csv"
    counts_frame.to_csv(counts_path, index=False)

    figure_path = None
    if figures and len(edge_counts) > 1:
        from .report import render_edge_counts

        figure_path = out / "edge_counts.png"
        render_edge_counts(counts_frame, figure_path)

    return {
        "n_dropped": n_dropped,
        "n_weeks": n_weeks,
        "assignment": assignment,
        "networks": networks,
        "weights_csv": weights_path,
        "nationwide_csv": nat_path,
        "edge_counts_csv": counts_path,
        "figure": figure_path,
        "out_dir": out,
    }


def fit_from_weights(
    config: PipelineConfig, weights_path, r: int
) -> tuple[TransformedPanel, "FactorVarConfig", object]:
    """Rebuild a panel from a weight CSV and fit at one factor count."""
    cube = read_weights_csv(weights_path)
    panel = weights_to_panel(cube, replace(config, J=cube.shape[2] - 1))
    fit_config = FactorVarConfig(p=config.lag, r=r, demean=config.demean)
    return panel, fit_config, fit(panel, fit_config)
