"""Loading and preparing data: generic CSV, UCI Communities and Crime, synthetic."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .grid import Dataset, DiscretizationGrid, categorical_grid, make_grid

log = logging.getLogger(__name__)

MISSING_MARKERS = ["?", ""]
STD_FLOOR = 1e-12

# attribute names of communities.data, in file order
CRIME_COLUMNS = """
state county community communityname fold population householdsize racepctblack
racePctWhite racePctAsian racePctHisp agePct12t21 agePct12t29 agePct16t24 agePct65up
numbUrban pctUrban medIncome pctWWage pctWFarmSelf pctWInvInc pctWSocSec pctWPubAsst
pctWRetire medFamInc perCapInc whitePerCap blackPerCap indianPerCap AsianPerCap
OtherPerCap HispPerCap NumUnderPov PctPopUnderPov PctLess9thGrade PctNotHSGrad
PctBSorMore PctUnemployed PctEmploy PctEmplManu PctEmplProfServ PctOccupManu
PctOccupMgmtProf MalePctDivorce MalePctNevMarr FemalePctDiv TotalPctDiv PersPerFam
PctFam2Par PctKids2Par PctYoungKids2Par PctTeen2Par PctWorkMomYoungKids PctWorkMom
NumIlleg PctIlleg NumImmig PctImmigRecent PctImmigRec5 PctImmigRec8 PctImmigRec10
PctRecentImmig PctRecImmig5 PctRecImmig8 PctRecImmig10 PctSpeakEnglOnly
PctNotSpeakEnglWell PctLargHouseFam PctLargHouseOccup PersPerOccupHous
PersPerOwnOccHous PersPerRentOccHous PctPersOwnOccup PctPersDenseHous PctHousLess3BR
MedNumBR HousVacant PctHousOccup PctHousOwnOcc PctVacantBoarded PctVacMore6Mos
MedYrHousBuilt PctHousNoPhone PctWOFullPlumb OwnOccLowQuart OwnOccMedVal
OwnOccHiQuart RentLowQ RentMedian RentHighQ MedRent MedRentPctHousInc
MedOwnCostPctInc MedOwnCostPctIncNoMtg NumInShelters NumStreet PctForeignBorn
PctBornSameState PctSameHouse85 PctSameCity85 PctSameState85 LemasSwornFT
LemasSwFTPerPop LemasSwFTFieldOps LemasSwFTFieldPerPop LemasTotalReq
LemasTotReqPerPop PolicReqPerOffic PolicPerPop RacialMatchCommPol PctPolicWhite
PctPolicBlack PctPolicHisp PctPolicAsian PctPolicMinor OfficAssgnDrugUnits
NumKindsDrugsSeiz PolicAveOTWorked LandArea PopDens PctUsePubTrans PolicCars
PolicOperBudg LemasPctPolicOnPatr LemasGangUnitDeploy LemasPctOfficDrugUn
PolicBudgPerPop ViolentCrimesPerPop
""".split()

CRIME_ID_COLUMNS = ["state", "county", "community", "communityname", "fold"]
CRIME_TARGET = "ViolentCrimesPerPop"
CRIME_SENSITIVE = "racepctblack"
CRIME_GROUP_SIZES = {1: 970, 0: 1024}
CRIME_COUNT_TOLERANCE = 5
ZERO_TARGET_SHIFT = 0.01


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class ColumnSpec:
    target_column: str
    sensitive_column: str
    feature_columns: tuple | str = "all-others"
    missing_policy: str = "drop-row"
    drop_threshold: float = 0.5
    standardize: bool = False

    def __post_init__(self):
        if self.target_column == self.sensitive_column:
            raise DataError("target and sensitive columns must differ")
        if self.missing_policy not in ("drop-row", "drop-column", "mean-impute"):
            raise DataError(f"unknown missing policy {self.missing_policy!r}")


@dataclass
class Standardizer:
    """Feature z-scoring with statistics frozen at fit time."""

    mean: np.ndarray
    std: np.ndarray
    constant: list = field(default_factory=list)

    @classmethod
    def fit(cls, X):
        X = np.asarray(X, dtype=float)
        mean = X.mean(axis=0)
        std = X.std(axis=0)
        constant = np.flatnonzero(std < STD_FLOOR).tolist()
        if constant:
            log.warning("standardizing constant feature columns %s to zero", constant)
        return cls(mean, np.maximum(std, STD_FLOOR), constant)

    def transform(self, X):
        return (np.asarray(X, dtype=float) - self.mean) / self.std


def _read_frame(path, header="infer") -> pd.DataFrame:
    try:
        return pd.read_csv(path, header=header, na_values=MISSING_MARKERS, keep_default_na=True,
                           skipinitialspace=True, float_precision="round_trip")
    except FileNotFoundError:
        raise
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise DataError(f"cannot parse {path}: {exc}") from exc


def _apply_missing_policy(df, needed, policy, threshold):
    if policy == "drop-column":
        frac = df.isna().mean()
        drop = [c for c in df.columns if frac[c] > threshold and c not in needed]
        df = df.drop(columns=drop)
        return df.dropna(axis=0)
    if policy == "mean-impute":
        df = df.dropna(subset=list(needed))
        return df.fillna(df.mean(numeric_only=True))
    return df.dropna(axis=0)


def load_csv(path, spec: ColumnSpec) -> Dataset:
    """Read a headed CSV into a :class:`Dataset`.

    Missing values ("?" or empty) are handled per ``spec.missing_policy``;
    the standardizer, when used, is stored in ``meta['standardizer']``.
    """
    df = _read_frame(path)
    for col in (spec.target_column, spec.sensitive_column):
        if col not in df.columns:
            raise DataError(f"column {col!r} not in {path}")
    if spec.feature_columns == "all-others":
        features = [c for c in df.columns if c not in (spec.target_column, spec.sensitive_column)]
    else:
        features = list(spec.feature_columns)
        missing = [c for c in features if c not in df.columns]
        if missing:
            raise DataError(f"feature columns {missing} not in {path}")
    df = df[features + [spec.sensitive_column, spec.target_column]]
    df = _apply_missing_policy(df, (spec.target_column, spec.sensitive_column),
                               spec.missing_policy, spec.drop_threshold)
    if df.empty:
        raise DataError(f"every row of {path} was dropped")
    features = [c for c in features if c in df.columns]
    try:
        X = df[features].to_numpy(dtype=float)
    except ValueError as exc:
        raise DataError(f"non-numeric feature values in {path}: {exc}") from exc
    meta = {"source": str(path)}
    if spec.standardize:
        st = Standardizer.fit(X)
        X = st.transform(X)
        meta["standardizer"] = st
    return Dataset(X, df[spec.sensitive_column].to_numpy(float), df[spec.target_column].to_numpy(float),
                   tuple(features), meta)


def read_crime_frame(path) -> pd.DataFrame:
    """The UCI file, with or without a header row, as a named frame."""
    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
    has_header = CRIME_TARGET in first
    df = _read_frame(path, "infer" if has_header else None)
    if df.shape[1] != len(CRIME_COLUMNS):
        raise DataError(f"{path} has {df.shape[1]} columns; expected the {len(CRIME_COLUMNS)} "
                        "Communities and Crime attributes")
    if not has_header:
        df.columns = CRIME_COLUMNS
    return df


def binarize_threshold(values, n_positive: int) -> float:
    """Cut ``t`` such that ``values > t`` selects as close to ``n_positive`` rows as ties allow."""
    v = np.sort(np.asarray(values, dtype=float))
    candidates = np.unique(v)
    above = v.size - np.searchsorted(v, candidates, side="right")
    best = int(np.argmin(np.abs(above - n_positive)))
    return float(candidates[best])


def prepare_crime(path, variant: str = "binary-sensitive"):
    """Communities and Crime with percentage-black population as sensitive attribute.

    Identifier columns and columns with more than half their values missing
    are dropped, remaining gaps are mean-imputed, and the sensitive column is
    removed from the features. The binary variant thresholds the sensitive
    column so the groups have the published 970 / 1024 sizes; the continuous
    variant keeps the raw value and uses five uniform bins over [0, 1].

    Returns
    -------
    dataset : Dataset
    s_grid : DiscretizationGrid
    """
    if variant in ("binary", "binary-sensitive"):
        variant = "binary-sensitive"
    elif variant in ("continuous", "continuous-sensitive"):
        variant = "continuous-sensitive"
    else:
        raise DataError(f"unknown crime variant {variant!r}")
    df = read_crime_frame(path).drop(columns=CRIME_ID_COLUMNS)
    frac = df.isna().mean()
    df = df.drop(columns=[c for c in df.columns if frac[c] > 0.5])
    df = df.fillna(df.mean(numeric_only=True))
    y = df[CRIME_TARGET].to_numpy(float)
    raw_s = df[CRIME_SENSITIVE].to_numpy(float)
    features = [c for c in df.columns if c not in (CRIME_TARGET, CRIME_SENSITIVE)]
    X = df[features].to_numpy(float)
    meta = {"source": str(path), "variant": variant, "n_features": len(features)}

    if variant == "binary-sensitive":
        t = binarize_threshold(raw_s, CRIME_GROUP_SIZES[1])
        s = (raw_s > t).astype(float)
        counts = {1: int(s.sum()), 0: int(s.size - s.sum())}
        meta.update(threshold=t, group_counts=counts,
                    group_mean_target={g: float(y[s == g].mean()) for g in (1, 0)})
        off = {g: abs(counts[g] - CRIME_GROUP_SIZES[g]) for g in (1, 0)}
        if max(off.values()) > CRIME_COUNT_TOLERANCE:
            raise DataError(f"group sizes {counts} do not match the expected "
                            f"{CRIME_GROUP_SIZES} (threshold {t}); wrong input file?")
        s_grid = categorical_grid(2)
    else:
        s = raw_s
        s_grid = make_grid([0.0, 1.0], 5, "uniform")
        meta["bin_counts"] = np.bincount(s_grid.bin(s)[s_grid.bin(s) >= 0], minlength=5).tolist()

    if np.any(y == 0):
        meta["target_shift"] = ZERO_TARGET_SHIFT
        y = y + ZERO_TARGET_SHIFT
    return Dataset(X, s, y, tuple(features), meta), s_grid


def write_normalized_csv(data: Dataset, path) -> None:
    """Columns ``features..., sensitive, target``."""
    names = list(data.feature_names) or [f"x{j}" for j in range(data.X.shape[1])]
    df = pd.DataFrame(data.X, columns=names)
    df["sensitive"] = data.s
    df["target"] = data.y
    df.to_csv(path, index=False, float_format="%.17g", encoding="utf-8")


def read_normalized_csv(path) -> Dataset:
    return load_csv(path, ColumnSpec("target", "sensitive"))


@dataclass(frozen=True)
class SyntheticSpec:
    """Stand-in regression data with a tunable dependence on the sensitive attribute.

    ``group_effect`` shifts both the target and the first feature by
    ``group_effect * s``, so an unconstrained model fitted without ``s`` still
    picks up the group difference through that proxy. With ``group_effect = 0``
    the sensitive attribute is independent of ``(x, y)``.
    """

    n: int = 1000
    d: int = 5
    group_effect: float = 1.0
    noise_std: float = 0.5
    sensitive_kind: str = "binary"
    offset: float = 10.0
    seed: int = 0

    def __post_init__(self):
        if self.n <= 0 or self.d <= 0:
            raise ValueError("n and d must be positive")
        if self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")
        if self.sensitive_kind not in ("binary", "continuous-uniform"):
            raise ValueError(f"unknown sensitive kind {self.sensitive_kind!r}")


def generate_synthetic(spec: SyntheticSpec) -> Dataset:
    rng = np.random.default_rng(spec.seed)
    if spec.sensitive_kind == "binary":
        s = rng.integers(0, 2, spec.n).astype(float)
    else:
        s = rng.uniform(0.0, 1.0, spec.n)
    X = rng.normal(size=(spec.n, spec.d))
    X[:, 0] += spec.group_effect * s
    coef = np.linspace(1.0, 0.2, spec.d)
    y = spec.offset + X @ coef + spec.group_effect * s + spec.noise_std * rng.normal(size=spec.n)
    meta = {"source": "synthetic", "spec": spec.__dict__.copy()}
    return Dataset(X, s, y, tuple(f"x{j}" for j in range(spec.d)), meta)


def default_s_grid(s, n_bins: int | None = None) -> DiscretizationGrid:
    """Separator grid for integer codes ``0..Q-1``, otherwise uniform bins over the range."""
    s = np.asarray(s, dtype=float)
    codes = np.unique(s)
    if np.all(codes == np.round(codes)) and codes.min() >= 0:
        Q = int(codes.max()) + 1
        if n_bins is None or n_bins == Q:
            return categorical_grid(Q)
    return make_grid(s, n_bins or 5, "uniform")
