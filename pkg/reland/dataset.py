"""
Module for the gridded tabular data model: CSV ingestion and export,
Easy/Hard environment tagging, municipality partitions and the synthetic
spatial data generator.
"""

from dataclasses import dataclass
import math

import numpy as np
import pandas as pd
from scipy.ndimage import convolve, distance_transform_edt, gaussian_filter

from ._constants import \
    CELL_ID_COLUMN, LON_COLUMN, LAT_COLUMN, MUNICIPALITY_COLUMN, DEPARTMENT_COLUMN, \
    LABEL_COLUMN, REQUIRED_COLUMNS, DEFAULT_ENV_FEATURE, DEFAULT_SINGLE_FEATURE, CELL_SIZE_M, \
    METERS_PER_DEGREE, SYNTHETIC_ORIGIN_LON, SYNTHETIC_ORIGIN_LAT, SYNTHETIC_DEPARTMENT, \
    SYNTHETIC_HARD_REGION_FRACTION, HARD_FRACTION_TOLERANCE, DEFAULT_SEED, EnvironmentTag
from .component import RELandComponent
from .exceptions import ConfigError, DomainError, ParseError, SchemaError, UniquenessError

_CALIBRATION_GRID = 48
_CALIBRATION_BISECTIONS = 30
_LABEL_NOISE = 0.5
_ROOK_CROSS = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=np.float64)


@dataclass(frozen=True)
class Cell:
    """
    One grid cell with its coordinates, region tags, features and label.
    """

    cell_id: str
    lon: float
    lat: float
    municipality: str
    department: str
    features: tuple
    label: int


class Dataset:
    """
    Immutable column-typed table of cells.

    Columns are numpy arrays marked read-only; ``positive_rate`` is derived
    from the labels on every access.
    """

    # pylint: disable=too-many-arguments
    def __init__(self, cell_ids, lon, lat, municipality, department, features, labels,
                 feature_names, env_feature):
        feature_names = tuple(feature_names)
        if env_feature not in feature_names:
            raise SchemaError(f"environment feature {env_feature} is not a feature column")
        features = np.array(features, dtype=np.float64).reshape(-1, len(feature_names))
        columns = {
            "cell_ids": np.array(cell_ids, dtype=object),
            "lon": np.array(lon, dtype=np.float64),
            "lat": np.array(lat, dtype=np.float64),
            "municipality": np.array(municipality, dtype=object),
            "department": np.array(department, dtype=object),
            "features": features,
            "labels": np.array(labels, dtype=np.int64),
        }
        n = features.shape[0]
        for name, column in columns.items():
            if column.shape[0] != n:
                raise SchemaError(f"column {name} has {column.shape[0]} rows, expected {n}")
            column.setflags(write=False)
            setattr(self, f"_{name}", column)
        self._feature_names = feature_names
        self._env_feature = env_feature

    # pylint: disable=missing-function-docstring
    @property
    def cell_ids(self):
        return self._cell_ids

    @property
    def lon(self):
        return self._lon

    @property
    def lat(self):
        return self._lat

    @property
    def municipality(self):
        return self._municipality

    @property
    def department(self):
        return self._department

    @property
    def features(self):
        return self._features

    @property
    def labels(self):
        return self._labels

    @property
    def feature_names(self):
        return self._feature_names

    @property
    def env_feature(self):
        return self._env_feature
    # pylint: enable=missing-function-docstring

    def __len__(self):
        return self._features.shape[0]

    @property
    def positive_rate(self):
        """
        Fraction of label-1 cells; 0 for an empty dataset.
        """
        if len(self) == 0:
            return 0.0
        return float(self._labels.sum()) / len(self)

    def column(self, name):
        """
        Values of the feature column ``name``.
        """
        if name not in self._feature_names:
            raise SchemaError(f"unknown feature column: {name}")
        return self._features[:, self._feature_names.index(name)]

    @property
    def env_values(self):
        """
        Values of the environment-split feature.
        """
        return self.column(self._env_feature)

    def subset(self, indices):
        """
        New dataset with the rows at ``indices``, in that order.
        """
        indices = np.asarray(indices, dtype=np.int64)
        return Dataset(
            self._cell_ids[indices], self._lon[indices], self._lat[indices],
            self._municipality[indices], self._department[indices],
            self._features[indices], self._labels[indices],
            self._feature_names, self._env_feature)

    @property
    def cells(self):
        """
        Rows materialized as :class:`Cell` values.
        """
        return [
            Cell(str(cid), float(lon), float(lat), str(mun), str(dep),
                 tuple(float(v) for v in row), int(label))
            for cid, lon, lat, mun, dep, row, label in zip(
                self._cell_ids, self._lon, self._lat, self._municipality,
                self._department, self._features, self._labels)
        ]

    def to_frame(self):
        """
        The dataset in ingestion column order as a pandas DataFrame.
        """
        frame = pd.DataFrame({
            CELL_ID_COLUMN: self._cell_ids,
            LON_COLUMN: self._lon,
            LAT_COLUMN: self._lat,
            MUNICIPALITY_COLUMN: self._municipality,
            DEPARTMENT_COLUMN: self._department,
            LABEL_COLUMN: self._labels,
        })
        for index, name in enumerate(self._feature_names):
            frame[name] = self._features[:, index]
        return frame


# pylint: disable=too-many-instance-attributes
@dataclass(frozen=True)
class SyntheticConfig:
    """
    Settings of the synthetic generator.

    ``spurious_strength`` scales how strongly the historical-event features
    push labels inside the easy region; ``hard_fraction`` is the targeted
    share of Hard cells. ``positive_rate`` defaults to ``hard_fraction / 2``.
    Labels are driven by the first ``informative_geo`` geo features.
    """

    grid_rows: int = 40
    grid_cols: int = 40
    n_municipalities: int = 6
    d_geo: int = 6
    seed: int = DEFAULT_SEED
    spurious_strength: float = 0.5
    hard_fraction: float = 0.2
    positive_rate: float = None
    informative_geo: int = 2
    spurious_amplitude: float = 2.0

    def __post_init__(self):
        if self.grid_rows < 1 or self.grid_cols < 1:
            raise ConfigError("synthetic grid dimensions must be positive")
        if self.n_municipalities < 1:
            raise ConfigError("synthetic.n_municipalities must be positive")
        if self.grid_rows * self.grid_cols < self.n_municipalities:
            raise ConfigError(
                f"a {self.grid_rows}x{self.grid_cols} grid cannot hold "
                f"{self.n_municipalities} municipalities")
        if self.d_geo < 0:
            raise ConfigError("synthetic.d_geo must be >= 0")
        if not 0 <= self.spurious_strength <= 1:
            raise ConfigError("synthetic.spurious_strength must be in [0, 1]")
        if not 0 < self.hard_fraction <= 0.5:
            raise ConfigError("synthetic.hard_fraction must be in (0, 0.5]")
        if self.positive_rate is not None and not 0 < self.positive_rate < 1:
            raise ConfigError("synthetic.positive_rate must be in (0, 1)")
        if not 0 <= self.informative_geo <= self.d_geo:
            raise ConfigError("synthetic.informative_geo must be between 0 and d_geo")
        if not self.spurious_amplitude >= 0:
            raise ConfigError("synthetic.spurious_amplitude must be >= 0")

    @property
    def effective_positive_rate(self):
        """
        ``positive_rate`` or its default ``hard_fraction / 2``.
        """
        return self.positive_rate if self.positive_rate is not None else self.hard_fraction / 2


def _municipality_grid(rows, cols, n_municipalities):
    # Bands of rows, each cut into column blocks: every municipality is a
    # contiguous rectangle.
    aspect = round(math.sqrt(n_municipalities * rows / cols))
    n_bands = max(math.ceil(n_municipalities / cols),
                  min(rows, n_municipalities, max(1, aspect)))
    width = len(str(n_municipalities - 1))
    owner = np.empty((rows, cols), dtype=object)
    counts = [len(part) for part in np.array_split(np.arange(n_municipalities), n_bands)]
    next_id = 0
    for band_rows, count in zip(np.array_split(np.arange(rows), n_bands), counts):
        for block_cols in np.array_split(np.arange(cols), count):
            owner[np.ix_(band_rows, block_cols)] = f"MUN-{next_id:0{width}d}"
            next_id += 1
    return owner


def _standardized(field):
    spread = field.std()
    centered = field - field.mean()
    return centered / spread if spread > 0 else centered


def environment_tags(env_values, labels):
    """
    Easy iff ``(env > 0 and label = 1) or (env = 0 and label = 0)``, Hard
    otherwise, as a boolean Hard mask.
    """
    env_values = np.asarray(env_values, dtype=np.float64)
    if np.any(env_values < 0):
        raise DomainError("environment feature values must be non-negative")
    return (env_values > 0) != (np.asarray(labels) == 1)


class RELandDatasets(RELandComponent):
    """
    Data ingestion, export, tagging and generation.
    """

    def load_csv(self, path, env_feature=DEFAULT_ENV_FEATURE):
        """
        Load a dataset from a CSV with the columns
        ``cell_id,lon,lat,municipality,department,label`` followed by feature
        columns. Every non-required column is a feature, in file order.
        """
        self._logger.debug(f"Loading dataset from {path}...")
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
        for column in REQUIRED_COLUMNS:
            if column not in frame.columns:
                raise SchemaError(f"missing required column: {column}")
        feature_names = [column for column in frame.columns if column not in REQUIRED_COLUMNS]
        if env_feature not in feature_names:
            raise SchemaError(f"missing environment feature column: {env_feature}")

        numeric = {}
        for column in [LON_COLUMN, LAT_COLUMN, LABEL_COLUMN] + feature_names:
            values = pd.to_numeric(frame[column].str.strip(), errors="coerce").to_numpy(
                dtype=np.float64)
            bad = np.flatnonzero(~np.isfinite(values))
            if bad.size:
                row = int(bad[0]) + 1
                raise ParseError(
                    f"row {row}: column {column} has non-numeric value "
                    f"{frame[column].iloc[bad[0]]!r}", row=row)
            numeric[column] = values
        labels = numeric[LABEL_COLUMN]
        bad = np.flatnonzero(~np.isin(labels, (0.0, 1.0)))
        if bad.size:
            row = int(bad[0]) + 1
            raise ParseError(f"row {row}: label must be 0 or 1, got "
                             f"{frame[LABEL_COLUMN].iloc[bad[0]]!r}", row=row)

        cell_ids = frame[CELL_ID_COLUMN].to_numpy(dtype=object)
        duplicated = pd.Series(cell_ids).duplicated()
        if duplicated.any():
            raise UniquenessError(
                f"duplicate cell_id {cell_ids[int(np.flatnonzero(duplicated)[0])]!r}")

        features = np.column_stack([numeric[name] for name in feature_names]) \
            if len(frame) else np.empty((0, len(feature_names)))
        dataset = Dataset(
            cell_ids, numeric[LON_COLUMN], numeric[LAT_COLUMN],
            frame[MUNICIPALITY_COLUMN].to_numpy(dtype=object),
            frame[DEPARTMENT_COLUMN].to_numpy(dtype=object),
            features, labels.astype(np.int64), feature_names, env_feature)
        self._logger.info(
            f"Loaded {len(dataset)} cells, {len(feature_names)} features, "
            f"positive rate {dataset.positive_rate:.4f}")
        return dataset

    def save_csv(self, dataset, path):
        """
        Write ``dataset`` in the ingestion format. Equal datasets give equal
        bytes.
        """
        self._logger.debug(f"Writing {len(dataset)} cells to {path}...")
        dataset.to_frame().to_csv(path, index=False, lineterminator="\n", encoding="utf-8")

    def tag_environments(self, dataset):
        """
        Per-cell :class:`EnvironmentTag` list and ``{tag: count}``.
        """
        hard = environment_tags(dataset.env_values, dataset.labels)
        tags = [EnvironmentTag.HARD if flag else EnvironmentTag.EASY for flag in hard]
        counts = {EnvironmentTag.EASY: int((~hard).sum()), EnvironmentTag.HARD: int(hard.sum())}
        self._logger.debug(
            f"Tagged {counts[EnvironmentTag.EASY]} Easy and "
            f"{counts[EnvironmentTag.HARD]} Hard cells")
        return tags, counts

    def split_by_municipality(self, dataset):
        """
        ``{municipality: index array}`` in sorted municipality order; a
        disjoint cover of all cells.
        """
        split = {}
        for name in sorted(set(dataset.municipality)):
            split[name] = np.flatnonzero(dataset.municipality == name)
        return split

    def holdout_split(self, dataset, fraction, seed):
        """
        Municipality-stratified holdout. From every municipality with at least
        two cells, ``max(1, round(fraction * n_m))`` cells (never all of them)
        are drawn into the holdout. Returns ``(train_idx, holdout_idx)``.
        """
        if not 0 < fraction < 1:
            raise ConfigError(f"holdout fraction must be in (0, 1), got {fraction}")
        rng = np.random.default_rng(seed)
        holdout = []
        for indices in self.split_by_municipality(dataset).values():
            if indices.size < 2:
                continue
            count = min(indices.size - 1, max(1, round(fraction * indices.size)))
            holdout.append(rng.choice(indices, size=count, replace=False))
        holdout = np.sort(np.concatenate(holdout)) if holdout else np.empty(0, dtype=np.int64)
        train = np.setdiff1d(np.arange(len(dataset)), holdout)
        return train, holdout

    # pylint: disable=too-many-locals
    def generate_synthetic(self, config):
        """
        Generate a gridded dataset with municipalities as rectangular blocks,
        smooth geo features, spatially clustered historical events and labels
        carrying a spurious historical-event term inside the easy region only.

        The historical-event prevalence is calibrated so the Hard fraction
        lands as close as possible to ``config.hard_fraction``.
        """
        rows, cols = config.grid_rows, config.grid_cols
        rng = np.random.default_rng(config.seed)
        self._logger.debug(f"Generating a {rows}x{cols} synthetic grid (seed {config.seed})...")

        # every random draw happens up front, in a fixed order
        geo = [_standardized(gaussian_filter(rng.standard_normal((rows, cols)), sigma=3))
               for _ in range(config.d_geo)]
        latent = gaussian_filter(rng.standard_normal((rows, cols)), sigma=1)
        multiplicity = 1 + rng.poisson(1.0, size=(rows, cols))
        region_field = gaussian_filter(rng.standard_normal((rows, cols)), sigma=3)
        noise = _LABEL_NOISE * rng.standard_normal((rows, cols))

        easy_region = region_field >= np.quantile(region_field, SYNTHETIC_HARD_REGION_FRACTION)
        base_score = noise + sum(geo[:config.informative_geo], np.zeros((rows, cols)))
        push = config.spurious_strength * config.spurious_amplitude * easy_region

        def realize(prevalence):
            events = latent >= np.quantile(latent, 1.0 - prevalence)
            counts = convolve(events * multiplicity.astype(np.float64), _ROOK_CROSS,
                              mode="constant")
            score = base_score + push * (2.0 * (counts > 0) - 1.0)
            labels = (score > np.quantile(score, 1.0 - config.effective_positive_rate))
            hard_share = float(np.mean((counts > 0) != labels))
            return events, counts, labels.astype(np.int64), hard_share

        best = self._calibrate(realize, config.hard_fraction, rows * cols)
        events, counts, labels, hard_share = best
        if abs(hard_share - config.hard_fraction) > HARD_FRACTION_TOLERANCE:
            self._logger.warning(
                f"Hard fraction target {config.hard_fraction} not reached, got {hard_share:.3f}")

        cell_km = CELL_SIZE_M / 1000.0
        if events.any():
            distance = distance_transform_edt(~events) * cell_km
        else:
            distance = np.full((rows, cols), math.hypot(rows, cols) * cell_km)

        owner = _municipality_grid(rows, cols, config.n_municipalities)
        row_idx, col_idx = np.indices((rows, cols))
        dlat = CELL_SIZE_M / METERS_PER_DEGREE
        dlon = dlat / math.cos(math.radians(SYNTHETIC_ORIGIN_LAT))
        feature_names = [f"geo_{k:02d}" for k in range(config.d_geo)] + \
            [DEFAULT_SINGLE_FEATURE, DEFAULT_ENV_FEATURE]
        features = np.column_stack(
            [field.ravel() for field in geo] + [distance.ravel(), counts.ravel()])
        dataset = Dataset(
            [f"R{r:04d}C{c:04d}" for r, c in zip(row_idx.ravel(), col_idx.ravel())],
            SYNTHETIC_ORIGIN_LON + col_idx.ravel() * dlon,
            SYNTHETIC_ORIGIN_LAT + row_idx.ravel() * dlat,
            owner.ravel(),
            np.full(rows * cols, SYNTHETIC_DEPARTMENT, dtype=object),
            features, labels.ravel(), feature_names, DEFAULT_ENV_FEATURE)
        self._logger.info(
            f"Generated {len(dataset)} cells, Hard fraction {hard_share:.3f}, "
            f"positive rate {dataset.positive_rate:.4f}")
        return dataset

    def _calibrate(self, realize, target, n_cells):
        # Coarse scan of the event prevalence, then bisection inside the
        # bracket around the best scan point when there is one.
        grid = np.geomspace(1.0 / n_cells, 0.9, _CALIBRATION_GRID)
        results = [realize(prevalence) for prevalence in grid]
        errors = [result[3] - target for result in results]
        best_index = int(np.argmin(np.abs(errors)))
        best = results[best_index]

        for left in (best_index - 1, best_index):
            right = left + 1
            if left < 0 or right >= len(grid) or errors[left] * errors[right] > 0:
                continue
            low, high, low_error = grid[left], grid[right], errors[left]
            for _ in range(_CALIBRATION_BISECTIONS):
                middle = (low + high) / 2.0
                result = realize(middle)
                error = result[3] - target
                if abs(error) < abs(best[3] - target):
                    best = result
                if error == 0:
                    break
                if (error > 0) == (low_error > 0):
                    low, low_error = middle, error
                else:
                    high = middle
            break
        self._logger.debug(f"Calibrated Hard fraction {best[3]:.3f} for target {target}")
        return best
