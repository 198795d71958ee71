"""
Module for hazard clustering and risk-map export: grid contiguity weights,
local and global Moran's I with conditional permutation significance, and
GeoJSON/HTML rendering of scored cells.
"""

from dataclasses import dataclass
import html
import math

import esda
import geojson
import libpysal
from matplotlib import colormaps
from matplotlib.colors import to_hex
import numpy as np

from ._constants import \
    CELL_SIZE_M, METERS_PER_DEGREE, DEFAULT_PERMUTATIONS, DEFAULT_ALPHA, DEFAULT_SEED, \
    RISK_COLORMAP, ClusterClass, WeightsScheme
from .component import RELandComponent
from .exceptions import DegenerateFieldError, DimensionError, DomainError

# Neighbour radius in grid steps; diagonal neighbours sit at sqrt(2).
_ROOK_RADIUS = 1.1
_QUEEN_RADIUS = 1.5
_COORD_DECIMALS = 9
_SVG_WIDTH = 800
_LEGEND_STOPS = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)

# esda quadrants: 1 HH, 2 LH, 3 LL, 4 HL
_QUADRANT_CLASSES = {
    1: ClusterClass.HIGH,
    2: ClusterClass.MEDIUM,
    3: ClusterClass.LOW,
    4: ClusterClass.MEDIUM,
}


@dataclass
class ClusterMap:
    """
    Local Moran's I, pseudo p-value, spatial lag and hazard class per cell.
    """

    local_i: np.ndarray
    p_values: np.ndarray
    lag: np.ndarray
    classes: list
    alpha: float
    islands: np.ndarray

    def counts(self):
        """``{ClusterClass: number of cells}``."""
        return {cls: sum(1 for value in self.classes if value is cls) for cls in ClusterClass}


def _grid_step(values):
    distinct = np.unique(np.round(values, _COORD_DECIMALS))
    if distinct.size < 2:
        return 1.0
    return float(np.min(np.diff(distinct)))


def _grid_positions(lon, lat):
    cols = np.rint((lon - lon.min()) / _grid_step(lon)).astype(np.int64)
    rows = np.rint((lat - lat.min()) / _grid_step(lat)).astype(np.int64)
    seen = {}
    for index, key in enumerate(zip(rows.tolist(), cols.tolist())):
        if key in seen:
            raise DomainError(f"cells {seen[key]} and {index} occupy the same grid position")
        seen[key] = index
    return np.column_stack([cols, rows]).astype(np.float64)


def grid_weights(lon, lat, scheme=WeightsScheme.QUEEN):
    """
    Row-standardized ``libpysal.weights.W`` of cells on a (possibly partial)
    regular grid, ids ``0..n-1`` in input order. The spacing is the smallest
    gap between distinct coordinates; queen links the 8 surrounding cells,
    rook the 4 sharing an edge. Cells without neighbours are the islands of
    the returned weights.
    """
    lon = np.asarray(lon, dtype=np.float64)
    lat = np.asarray(lat, dtype=np.float64)
    if lon.shape != lat.shape:
        raise DimensionError("lon and lat must have the same length")
    if lon.size == 0:
        raise DimensionError("no cells to build weights for")
    scheme = WeightsScheme(scheme)
    radius = _QUEEN_RADIUS if scheme is WeightsScheme.QUEEN else _ROOK_RADIUS
    weights = libpysal.weights.DistanceBand(
        _grid_positions(lon, lat), threshold=radius, binary=True, silence_warnings=True)
    weights.transform = "r"
    return weights


def _active_field(scores, weights):
    """
    Scores of the non-island cells, their indices and the weights restricted
    to them.
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    if scores.size != weights.n:
        raise DimensionError(f"{scores.size} scores for {weights.n} cells")
    islands = set(weights.islands)
    active = np.array([cell for cell in weights.id_order if cell not in islands],
                      dtype=np.int64)
    if active.size == 0:
        raise DegenerateFieldError("every cell is an island")
    values = scores[active]
    if np.ptp(values) == 0:
        raise DegenerateFieldError("scores are constant; Moran's I is undefined")
    if islands:
        weights = libpysal.weights.w_subset(weights, active.tolist(), silence_warnings=True)
        weights.transform = "r"
    return values, active, weights


def global_moran(scores, weights):
    """
    Global Moran's I, ``(m / S0) sum_i z_i lag_i / sum_i z_i^2`` over the
    ``m`` non-island cells.
    """
    values, _, active_weights = _active_field(scores, weights)
    return float(esda.Moran(values, active_weights, transformation="r", permutations=0).I)


def _same_sign_p(observed, simulated, n_permutations):
    # simulated holds one row per permutation
    extreme = np.where(observed >= 0,
                       np.sum(simulated >= observed, axis=0),
                       np.sum(simulated <= observed, axis=0))
    return (1.0 + extreme) / (1.0 + n_permutations)


def cell_polygon(lon, lat, cell_size_m=CELL_SIZE_M):
    """
    Square ``cell_size_m`` polygon centred on ``(lon, lat)``, ring closed and
    counter-clockwise.
    """
    half_lat = cell_size_m / 2.0 / METERS_PER_DEGREE
    half_lon = half_lat / math.cos(math.radians(lat))
    ring = [
        (lon - half_lon, lat - half_lat),
        (lon + half_lon, lat - half_lat),
        (lon + half_lon, lat + half_lat),
        (lon - half_lon, lat + half_lat),
        (lon - half_lon, lat - half_lat),
    ]
    return geojson.Polygon([ring])


def risk_color(value):
    """
    Hex colour of a risk in ``[0, 1]``: lightest at 0, darkest at 1.
    """
    if not 0.0 <= value <= 1.0:
        raise DomainError(f"risk must be in [0, 1], got {value}")
    return to_hex(colormaps[RISK_COLORMAP](float(value)))


def _svg_points(ring, bounds, height):
    min_lon, min_lat, span = bounds
    return " ".join(
        f"{(lon - min_lon) / span * _SVG_WIDTH:.2f},"
        f"{height - (lat - min_lat) / span * _SVG_WIDTH:.2f}"
        for lon, lat in ring)


def render_html(collection, title="Risk map"):
    """
    Self-contained HTML page: inline SVG cells coloured by risk, a static
    legend and the GeoJSON document embedded as data. Nothing is fetched from
    the network.
    """
    rings = [feature["geometry"]["coordinates"][0] for feature in collection["features"]]
    coords = np.array([point for ring in rings for point in ring], dtype=np.float64) \
        if rings else np.zeros((1, 2))
    min_lon, min_lat = coords.min(axis=0)
    max_lon, max_lat = coords.max(axis=0)
    span = max(max_lon - min_lon, max_lat - min_lat) or 1.0
    height = int(math.ceil((max_lat - min_lat) / span * _SVG_WIDTH)) or 1

    shapes = []
    for feature, ring in zip(collection["features"], rings):
        props = feature["properties"]
        label = f"{props['cell_id']}: risk {props['risk']:.4f}"
        if props.get("cluster_class"):
            label += f" ({props['cluster_class']})"
        shapes.append(
            f'<polygon points="{_svg_points(ring, (min_lon, min_lat, span), height)}" '
            f'fill="{risk_color(props["risk"])}" '
            f'data-cluster="{html.escape(str(props.get("cluster_class") or ""))}">'
            f"<title>{html.escape(label)}</title></polygon>")
    legend = "".join(
        f'<span class="swatch" style="background:{risk_color(stop)}"></span>'
        f'<span class="stop">{stop:.1f}</span>' for stop in _LEGEND_STOPS)
    data = geojson.dumps(collection, sort_keys=True).replace("</", "<\\/")
    return (
        "<!DOCTYPE html>\n<html>\n<head>\n<meta charset=\"utf-8\">\n"
        f"<title>{html.escape(title)}</title>\n"
        "<style>body{font-family:sans-serif}.swatch{display:inline-block;width:24px;"
        "height:12px;margin-left:8px}.stop{margin-left:4px;font-size:12px}</style>\n"
        "</head>\n<body>\n"
        f"<h1>{html.escape(title)}</h1>\n"
        f'<div class="legend">Risk{legend}</div>\n'
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_SVG_WIDTH}" height="{height}" '
        f'viewBox="0 0 {_SVG_WIDTH} {height}">\n' + "\n".join(shapes) + "\n</svg>\n"
        f'<script type="application/geo+json" id="riskmap-data">{data}</script>\n'
        "</body>\n</html>\n")


class RELandSpatial(RELandComponent):
    """
    Spatial weights, hazard clusters and map export.
    """

    def build_weights(self, dataset, scheme=WeightsScheme.QUEEN):
        """
        Contiguity weights of the cells of ``dataset``; see :func:`grid_weights`.
        """
        weights = grid_weights(dataset.lon, dataset.lat, scheme)
        if weights.islands:
            self._logger.warning(
                f"{len(weights.islands)} isolated cell(s) excluded from Moran's I")
        return weights

    def global_moran(self, scores, weights):
        """
        Global Moran's I; see :func:`global_moran`.
        """
        return global_moran(scores, weights)

    # pylint: disable=too-many-arguments,too-many-locals
    def local_moran(self, scores, weights, n_permutations=DEFAULT_PERMUTATIONS,
                    seed=DEFAULT_SEED, alpha=DEFAULT_ALPHA):
        """
        Local Moran's I ``I_i = z_i lag_i / m2`` with ``m2 = sum z^2 / n`` over
        the non-island cells, computed with ``esda.Moran_Local``. esda scales
        by ``(n - 1)`` instead of ``n``, which is undone here.

        Significance comes from esda's seeded conditional permutations (cell
        ``i`` held fixed, its neighbours redrawn from the other cells):
        ``p = (1 + #{same-direction permuted I at least as extreme}) / (1 + n_permutations)``.
        Significant cells are classed by their esda quadrant.
        """
        if n_permutations < 0:
            raise DomainError("the number of permutations must be >= 0")
        if not 0 < alpha <= 1:
            raise DomainError(f"alpha must be in (0, 1], got {alpha}")
        values, active, active_weights = _active_field(scores, weights)
        self._logger.debug(
            f"Running {n_permutations} permutations for {active.size} cells...")
        lisa = esda.Moran_Local(values, active_weights, transformation="r",
                                permutations=n_permutations, keep_simulations=True, seed=seed)

        local_i = np.zeros(weights.n)
        local_i[active] = lisa.Is * active.size / (active.size - 1)
        lag = np.zeros(weights.n)
        lag[active] = libpysal.weights.lag_spatial(active_weights, values - values.mean())
        p_values = np.ones(weights.n)
        if n_permutations:
            p_values[active] = _same_sign_p(lisa.Is, lisa.sim, n_permutations)

        classes = [ClusterClass.NOT_SIGNIFICANT] * weights.n
        for slot, cell in enumerate(active):
            if p_values[cell] <= alpha:
                classes[cell] = _QUADRANT_CLASSES[int(lisa.q[slot])]
        islands = np.array(sorted(weights.islands), dtype=np.int64)
        cluster_map = ClusterMap(local_i, p_values, lag, classes, alpha, islands)
        counts = cluster_map.counts()
        self._logger.info(
            f"Clusters: {counts[ClusterClass.HIGH]} high, {counts[ClusterClass.MEDIUM]} medium, "
            f"{counts[ClusterClass.LOW]} low")
        return cluster_map

    def export_riskmap(self, dataset, scores, cluster_map=None, cell_size_m=CELL_SIZE_M):
        """
        GeoJSON FeatureCollection with one square polygon per cell and the
        properties ``cell_id``, ``risk``, ``cluster_class``, ``local_i`` and
        ``p_value`` (the last three ``None`` without a cluster map).
        """
        scores = np.asarray(scores, dtype=np.float64).ravel()
        if scores.size != len(dataset):
            raise DimensionError(f"{scores.size} scores for {len(dataset)} cells")
        if np.any(~np.isfinite(scores)) or np.any((scores < 0) | (scores > 1)):
            raise DomainError("risk scores must lie in [0, 1]")
        features = []
        for index, (cell_id, lon, lat, risk) in enumerate(
                zip(dataset.cell_ids, dataset.lon, dataset.lat, scores)):
            properties = {
                "cell_id": str(cell_id),
                "risk": float(risk),
                "cluster_class": None,
                "local_i": None,
                "p_value": None,
            }
            if cluster_map is not None:
                properties.update(
                    cluster_class=cluster_map.classes[index].value,
                    local_i=float(cluster_map.local_i[index]),
                    p_value=float(cluster_map.p_values[index]))
            features.append(geojson.Feature(
                geometry=cell_polygon(float(lon), float(lat), cell_size_m),
                properties=properties))
        collection = geojson.FeatureCollection(features)
        if not collection.is_valid:
            raise DomainError(f"invalid GeoJSON output: {collection.errors()}")
        self._logger.debug(f"Exported {len(features)} cells")
        return collection

    def write_geojson(self, collection, path):
        """Write ``collection`` with sorted keys."""
        with open(path, "w", encoding="utf-8") as geojson_file:
            geojson.dump(collection, geojson_file, sort_keys=True, indent=2)

    def export_html(self, collection, path=None, title="Risk map"):
        """
        Render :func:`render_html`; write it to ``path`` when given. Returns
        the page.
        """
        page = render_html(collection, title)
        if path is not None:
            with open(path, "w", encoding="utf-8") as html_file:
                html_file.write(page)
        return page
