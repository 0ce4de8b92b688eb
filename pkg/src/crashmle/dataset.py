"""Data ingestion, model specification, and design-matrix construction.

Observations arrive as RFC-4180 CSV files with a header row.  Severity
tables carry a string outcome label per row (one of a declared outcome
set); frequency tables carry a non-negative integer count.  All other
columns are numeric covariates.  A :class:`ModelSpec` lists the terms of
a model (variable, outcome set, coefficient kind) and is compiled
against a table into a :class:`DesignMatrix`, which fixes the parameter
packing used by every estimator in the package.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

SEVERITY = "severity"
FREQUENCY = "frequency"
MODES = (SEVERITY, FREQUENCY)

FAMILIES = ("mnl", "mixed_mnl", "nb", "mixed_nb")
SEVERITY_FAMILIES = ("mnl", "mixed_mnl")
FREQUENCY_FAMILIES = ("nb", "mixed_nb")
MIXED_FAMILIES = ("mixed_mnl", "mixed_nb")

TERM_KINDS = ("fixed", "random_normal", "random_uniform")

#: pseudo-variable that expands to a column of ones
CONSTANT = "constant"


def _readonly(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class ObservationTable:
    """Immutable rectangular data set.

    Parameters
    ----------
    columns : dict[str, np.ndarray]
        Covariate columns, float64, all the same length.
    outcome : np.ndarray
        Severity labels (strings) or frequency counts (int64).
    mode : str
        ``"severity"`` or ``"frequency"``.
    n_dropped : int
        Rows discarded during ingestion because of missing fields.
    """

    columns: dict[str, np.ndarray]
    outcome: np.ndarray
    mode: str
    n_dropped: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        n = len(self.outcome)
        cols = {}
        for name, values in self.columns.items():
            arr = np.asarray(values, dtype=np.float64)
            if arr.ndim != 1 or arr.shape[0] != n:
                raise ValueError(f"column {name!r} has shape {arr.shape}, expected ({n},)")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"column {name!r} contains non-finite values")
            cols[name] = _readonly(arr)
        if self.mode == FREQUENCY:
            out = np.asarray(self.outcome)
            if out.dtype.kind == "f":
                rounded = np.rint(out)
                if not np.all(np.abs(out - rounded) < 1e-9):
                    raise ValueError("frequency outcomes must be integers")
                out = rounded.astype(np.int64)
            out = out.astype(np.int64)
            if np.any(out < 0):
                raise ValueError("frequency outcomes must be non-negative")
        else:
            out = np.asarray(self.outcome)
            if out.dtype.kind not in ("U", "O"):
                out = out.astype(str)
        object.__setattr__(self, "columns", cols)
        object.__setattr__(self, "outcome", _readonly(out))

    @property
    def n_rows(self) -> int:
        return len(self.outcome)

    @property
    def column_names(self) -> tuple[str, ...]:
        return tuple(self.columns)

    def subset(self, index: np.ndarray) -> "ObservationTable":
        """Row subset (boolean mask or integer index array), order preserved."""
        cols = {name: arr[index].copy() for name, arr in self.columns.items()}
        return ObservationTable(cols, self.outcome[index].copy(), self.mode, 0)

    def to_csv(self, path, outcome_column: str = "outcome") -> None:
        """Write the table as RFC-4180 CSV; floats use shortest round-trip form."""
        if outcome_column in self.columns:
            raise ValueError(f"outcome column name {outcome_column!r} clashes with a covariate")
        names = list(self.columns)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(names + [outcome_column])
            for i in range(self.n_rows):
                row = [repr(float(self.columns[c][i])) for c in names]
                if self.mode == FREQUENCY:
                    row.append(str(int(self.outcome[i])))
                else:
                    row.append(str(self.outcome[i]))
                writer.writerow(row)


def load_csv(path, mode: str, outcome_column: str,
             outcome_labels=None) -> ObservationTable:
    """Read a CSV file into an :class:`ObservationTable`.

    Rows with one or more empty cells are dropped and counted in
    ``n_dropped``.  Non-numeric covariate cells, unknown severity labels
    (when ``outcome_labels`` is given), and negative or fractional
    counts raise ``ValueError``.

    Parameters
    ----------
    path : str or os.PathLike
        CSV file with a header row.
    mode : str
        ``"severity"`` or ``"frequency"``.
    outcome_column : str
        Header name of the outcome column.
    outcome_labels : sequence of str, optional
        Declared severity outcome set; labels outside it are an error.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        if len(set(header)) != len(header):
            raise ValueError(f"{path}: duplicate column names in header")
        if outcome_column not in header:
            raise ValueError(f"{path}: outcome column {outcome_column!r} not in header")
        out_pos = header.index(outcome_column)
        cov_names = [h for h in header if h != outcome_column]
        cov_pos = [i for i, h in enumerate(header) if h != outcome_column]
        label_set = set(outcome_labels) if outcome_labels is not None else None

        cov_rows: list[list[float]] = []
        outcomes: list = []
        n_dropped = 0
        for lineno, raw in enumerate(reader, start=2):
            if len(raw) != len(header):
                raise ValueError(
                    f"{path}:{lineno}: expected {len(header)} fields, got {len(raw)}")
            cells = [c.strip() for c in raw]
            if any(c == "" for c in cells):
                n_dropped += 1
                continue
            out_cell = cells[out_pos]
            if mode == SEVERITY:
                if label_set is not None and out_cell not in label_set:
                    raise ValueError(
                        f"{path}:{lineno}: unknown outcome label {out_cell!r}")
                outcomes.append(out_cell)
            else:
                try:
                    value = float(out_cell)
                except ValueError:
                    raise ValueError(
                        f"{path}:{lineno}: non-numeric count {out_cell!r}") from None
                if value < 0:
                    raise ValueError(f"{path}:{lineno}: negative count {out_cell!r}")
                if abs(value - round(value)) > 1e-9:
                    raise ValueError(f"{path}:{lineno}: non-integer count {out_cell!r}")
                outcomes.append(int(round(value)))
            row_vals = []
            for pos in cov_pos:
                try:
                    row_vals.append(float(cells[pos]))
                except ValueError:
                    raise ValueError(
                        f"{path}:{lineno}: non-numeric value {cells[pos]!r} "
                        f"in column {header[pos]!r}") from None
            cov_rows.append(row_vals)

    data = np.asarray(cov_rows, dtype=np.float64).reshape(len(cov_rows), len(cov_names))
    columns = {name: data[:, j] for j, name in enumerate(cov_names)}
    if mode == SEVERITY:
        outcome = np.asarray(outcomes)
    else:
        outcome = np.asarray(outcomes, dtype=np.int64)
    return ObservationTable(columns, outcome, mode, n_dropped)


def split_by_flag(table: ObservationTable, flag_column: str):
    """Split into (flagged, unflagged) subtables on a 0/1 column."""
    if flag_column not in table.columns:
        raise ValueError(f"flag column {flag_column!r} not in table")
    flag = table.columns[flag_column]
    if not np.all((flag == 0.0) | (flag == 1.0)):
        raise ValueError(f"flag column {flag_column!r} is not binary 0/1")
    mask = flag == 1.0
    return table.subset(mask), table.subset(~mask)


@dataclass(frozen=True)
class Term:
    """One model term: a variable with a coefficient of a given kind.

    ``outcomes`` names the severity equations the term enters (a tied
    coefficient lists several); frequency terms leave it empty.  Kind
    ``fixed`` is a scalar coefficient, ``random_normal`` and
    ``random_uniform`` add an estimated mixing scale.
    """

    variable: str
    outcomes: tuple[str, ...] = ()
    kind: str = "fixed"

    def __post_init__(self):
        if not self.variable:
            raise ValueError("term variable must be a non-empty string")
        if self.kind not in TERM_KINDS:
            raise ValueError(f"term kind must be one of {TERM_KINDS}, got {self.kind!r}")
        object.__setattr__(self, "outcomes", tuple(self.outcomes))

    @property
    def is_random(self) -> bool:
        return self.kind != "fixed"

    @property
    def n_params(self) -> int:
        """Location only for fixed terms, location plus scale otherwise."""
        return 2 if self.is_random else 1


@dataclass(frozen=True)
class ModelSpec:
    """Model family plus term list.

    Severity families (``mnl``, ``mixed_mnl``) declare the outcome set
    and a base outcome whose coefficients are normalised to zero.
    Frequency families (``nb``, ``mixed_nb``) have no outcome set.
    """

    family: str
    terms: tuple[Term, ...]
    outcomes: tuple[str, ...] = ()
    base_outcome: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))
        object.__setattr__(self, "outcomes", tuple(self.outcomes))
        if self.family not in FAMILIES:
            raise ValueError(f"family must be one of {FAMILIES}, got {self.family!r}")
        if not self.terms:
            raise ValueError("model spec has no terms")
        if self.is_severity:
            if len(self.outcomes) < 2:
                raise ValueError("severity models need at least two outcomes")
            if len(set(self.outcomes)) != len(self.outcomes):
                raise ValueError("duplicate outcome labels")
            if self.base_outcome not in self.outcomes:
                raise ValueError(
                    f"base outcome {self.base_outcome!r} not in {self.outcomes}")
            nonbase = set(self.outcomes) - {self.base_outcome}
            for t in self.terms:
                if not t.outcomes:
                    raise ValueError(f"term {t.variable!r} has no outcomes")
                bad = set(t.outcomes) - nonbase
                if bad:
                    raise ValueError(
                        f"term {t.variable!r} enters {sorted(bad)}; severity terms "
                        f"may only enter non-base outcomes")
        else:
            if self.outcomes or self.base_outcome is not None:
                raise ValueError("frequency models do not declare outcomes")
            for t in self.terms:
                if t.outcomes:
                    raise ValueError(
                        f"term {t.variable!r} lists outcomes in a frequency model")
        if self.family in ("mnl", "nb"):
            for t in self.terms:
                if t.is_random:
                    raise ValueError(
                        f"term {t.variable!r} is random; family {self.family!r} "
                        f"allows fixed terms only")
        seen = set()
        for t in self.terms:
            key = (t.variable, frozenset(t.outcomes))
            if key in seen:
                raise ValueError(
                    f"duplicate term for variable {t.variable!r} and outcome set "
                    f"{sorted(t.outcomes)}")
            seen.add(key)

    @property
    def is_severity(self) -> bool:
        return self.family in SEVERITY_FAMILIES

    @property
    def is_frequency(self) -> bool:
        return self.family in FREQUENCY_FAMILIES

    @property
    def is_mixed(self) -> bool:
        return self.family in MIXED_FAMILIES

    def to_dict(self) -> dict:
        d = {"family": self.family,
             "terms": [{"var": t.variable, "outcomes": list(t.outcomes),
                        "dist": _KIND_TO_DIST[t.kind]} for t in self.terms]}
        if self.is_severity:
            d["outcomes"] = list(self.outcomes)
            d["base"] = self.base_outcome
        return d

    @staticmethod
    def from_dict(d: dict) -> "ModelSpec":
        terms = tuple(
            Term(t["var"], tuple(t.get("outcomes", ())),
                 _DIST_TO_KIND[t.get("dist", "fixed")])
            for t in d["terms"])
        return ModelSpec(d["family"], terms,
                         tuple(d.get("outcomes", ())), d.get("base"))


_DIST_TO_KIND = {"fixed": "fixed", "normal": "random_normal", "uniform": "random_uniform"}
_KIND_TO_DIST = {v: k for k, v in _DIST_TO_KIND.items()}


def parse_spec(text: str) -> ModelSpec:
    """Parse the INI-style model-spec format.

    One ``[model]`` section (keys ``family``, and for severity families
    ``outcomes`` and ``base``) followed by one ``[term]`` section per
    term (keys ``var``, ``outcomes``, ``dist``).  Full-line comments
    start with ``#`` or ``;``.  Unknown sections or keys are errors.
    """
    model: dict[str, str] = {}
    term_dicts: list[dict[str, str]] = []
    current: dict[str, str] | None = None
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#") or line.startswith(";"):
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip().lower()
            if section == "model":
                if model:
                    raise ValueError(f"line {lineno}: repeated [model] section")
                current = model
            elif section == "term":
                current = {}
                term_dicts.append(current)
            else:
                raise ValueError(f"line {lineno}: unknown section [{section}]")
            continue
        if current is None:
            raise ValueError(f"line {lineno}: key outside any section")
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key = value")
        key, _, value = line.partition("=")
        key = key.strip().lower()
        value = value.strip()
        allowed = ("family", "outcomes", "base") if current is model else \
                  ("var", "outcomes", "dist")
        if key not in allowed:
            raise ValueError(f"line {lineno}: unknown key {key!r} in [{section}]")
        if key in current:
            raise ValueError(f"line {lineno}: repeated key {key!r}")
        current[key] = value

    if "family" not in model:
        raise ValueError("spec is missing family")
    family = model["family"].strip().lower()
    if family not in FAMILIES:
        raise ValueError(f"family must be one of {FAMILIES}, got {family!r}")
    severity = family in SEVERITY_FAMILIES
    if severity:
        if "outcomes" not in model or "base" not in model:
            raise ValueError("severity specs must declare outcomes and base")
        outcomes = tuple(s.strip() for s in model["outcomes"].split(","))
        base = model["base"]
    else:
        for key in ("outcomes", "base"):
            if key in model:
                raise ValueError(f"frequency specs must not declare {key!r}")
        outcomes, base = (), None

    terms = []
    for i, td in enumerate(term_dicts, start=1):
        if "var" not in td:
            raise ValueError(f"term {i} is missing var")
        dist = td.get("dist", "fixed").strip().lower()
        if dist not in _DIST_TO_KIND:
            raise ValueError(
                f"term {i}: dist must be one of {tuple(_DIST_TO_KIND)}, got {dist!r}")
        if severity:
            if "outcomes" not in td:
                raise ValueError(f"term {i} ({td['var']!r}) is missing outcomes")
            t_out = tuple(s.strip() for s in td["outcomes"].split(","))
        else:
            if "outcomes" in td:
                raise ValueError(
                    f"term {i} ({td['var']!r}) lists outcomes in a frequency spec")
            t_out = ()
        terms.append(Term(td["var"], t_out, _DIST_TO_KIND[dist]))
    return ModelSpec(family, tuple(terms), outcomes, base)


def load_spec(path) -> ModelSpec:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_spec(fh.read())


@dataclass(frozen=True)
class ParamInfo:
    """Position of one estimated parameter in the packed vector."""

    name: str
    term_index: int  # -1 for the dispersion parameter
    role: str        # "location", "scale", or "dispersion"


def term_param_name(term: Term, severity: bool) -> str:
    if severity:
        return f"{term.variable}[{'+'.join(term.outcomes)}]"
    return term.variable


def scale_param_name(term: Term, severity: bool) -> str:
    suffix = "sd" if term.kind == "random_normal" else "spread"
    return f"{term_param_name(term, severity)}:{suffix}"


class DesignMatrix:
    """Compiled (table, spec) pair with a fixed parameter packing.

    Parameters are packed in spec term order, each location immediately
    followed by its log-scale when the term is random.  Scale slots and
    the negative-binomial dispersion slot hold logs internally so the
    optimizer works unconstrained; estimators report natural values.

    Attributes
    ----------
    x : (N, T) ndarray
        Per-term covariate values (``constant`` expands to ones).
    incidence : (T, I) ndarray or None
        Term-to-outcome indicator for severity models; the base column
        is identically zero.
    params : tuple[ParamInfo, ...]
        Location/scale entries in packed order (dispersion excluded).
    """

    def __init__(self, table: ObservationTable, spec: ModelSpec):
        expected_mode = SEVERITY if spec.is_severity else FREQUENCY
        if table.mode != expected_mode:
            raise ValueError(
                f"family {spec.family!r} needs a {expected_mode} table, "
                f"got {table.mode}")
        self.spec = spec
        self.table = table
        self.n_obs = table.n_rows
        n_terms = len(spec.terms)

        x = np.empty((self.n_obs, n_terms))
        for j, t in enumerate(spec.terms):
            if t.variable == CONSTANT:
                x[:, j] = 1.0
            elif t.variable in table.columns:
                x[:, j] = table.columns[t.variable]
            else:
                raise ValueError(f"variable {t.variable!r} not in table")
        self.x = _readonly(x)

        params: list[ParamInfo] = []
        loc_pos = np.empty(n_terms, dtype=np.int64)
        scale_pos = np.full(n_terms, -1, dtype=np.int64)
        for j, t in enumerate(spec.terms):
            loc_pos[j] = len(params)
            params.append(ParamInfo(term_param_name(t, spec.is_severity), j, "location"))
            if t.is_random:
                scale_pos[j] = len(params)
                params.append(ParamInfo(scale_param_name(t, spec.is_severity), j, "scale"))
        self.params = tuple(params)
        self.param_names = tuple(p.name for p in params)
        self.n_params = len(params)
        self.loc_pos = _readonly(loc_pos)
        self.scale_pos = _readonly(scale_pos)
        self.random_terms = tuple(j for j, t in enumerate(spec.terms) if t.is_random)

        if spec.is_severity:
            self.outcome_labels = spec.outcomes
            self.base_index = spec.outcomes.index(spec.base_outcome)
            n_out = len(spec.outcomes)
            inc = np.zeros((n_terms, n_out))
            for j, t in enumerate(spec.terms):
                for label in t.outcomes:
                    inc[j, spec.outcomes.index(label)] = 1.0
            self.incidence = _readonly(inc)
            lookup = {label: i for i, label in enumerate(spec.outcomes)}
            try:
                y = np.fromiter((lookup[label] for label in table.outcome),
                                dtype=np.int64, count=self.n_obs)
            except KeyError as exc:
                raise ValueError(
                    f"outcome label {exc.args[0]!r} not in spec outcomes "
                    f"{spec.outcomes}") from None
            self.y_index = _readonly(y)
            self.counts = None
        else:
            self.outcome_labels = ()
            self.base_index = None
            self.incidence = None
            self.y_index = None
            self.counts = table.outcome

    @property
    def n_outcomes(self) -> int:
        return len(self.outcome_labels)

    def unpack(self, theta: np.ndarray):
        """Per-term (locations, natural scales); fixed terms get scale 0."""
        theta = np.asarray(theta, dtype=np.float64)
        locs = theta[self.loc_pos]
        scales = np.zeros(len(self.spec.terms))
        for j in self.random_terms:
            scales[j] = np.exp(theta[self.scale_pos[j]])
        return locs, scales

    def linear_predictors(self, theta: np.ndarray) -> np.ndarray:
        """Fixed-coefficient predictors: (N, I) for severity, (N,) for counts.

        Scale slots, if any, are ignored; random terms contribute their
        location only.
        """
        locs = np.asarray(theta, dtype=np.float64)[self.loc_pos]
        if self.spec.is_severity:
            return (self.x * locs) @ self.incidence
        return self.x @ locs

    def index_map(self) -> dict[str, int]:
        return {p.name: i for i, p in enumerate(self.params)}


def build_design(table: ObservationTable, spec: ModelSpec) -> DesignMatrix:
    """Compile a spec against a table; pure in its inputs."""
    return DesignMatrix(table, spec)
