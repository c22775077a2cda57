//! Regression datasets, response ordering and design-matrix encoding.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::Read;
use std::ops::Range;
use std::str::FromStr;

use ndarray::{Array2, ArrayView1};
use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::math::seeded_rng;

/// Covariates and responses after encoding.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionDataset {
    x: Array2<f64>,
    y: Vec<f64>,
    feature_names: Vec<String>,
    baseline_map: BTreeMap<String, String>,
}

impl RegressionDataset {
    pub fn new(x: Array2<f64>, y: Vec<f64>, feature_names: Vec<String>) -> Result<Self> {
        let (n, p) = x.dim();
        if n < 2 {
            return Err(Error::InvalidInput(format!("need at least 2 rows, got {n}")));
        }
        if y.len() != n {
            return Err(Error::Dimension(format!(
                "{n} covariate rows but {} responses",
                y.len()
            )));
        }
        if feature_names.len() != p {
            return Err(Error::Dimension(format!(
                "{p} covariate columns but {} feature names",
                feature_names.len()
            )));
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite response in row {i}")));
        }
        if let Some(((i, j), _)) = x.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite covariate in row {i}, column {j}"
            )));
        }
        Ok(Self {
            x,
            y,
            feature_names,
            baseline_map: BTreeMap::new(),
        })
    }

    pub fn with_baselines(mut self, baseline_map: BTreeMap<String, String>) -> Self {
        self.baseline_map = baseline_map;
        self
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> &Array2<f64> {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.x.row(i)
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn baseline_map(&self) -> &BTreeMap<String, String> {
        &self.baseline_map
    }

    /// Same covariates with a replaced response vector.
    pub fn with_response(&self, y: Vec<f64>) -> Result<Self> {
        Ok(Self::new(self.x.clone(), y, self.feature_names.clone())?
            .with_baselines(self.baseline_map.clone()))
    }

    /// Rows reordered so that new row `i` is old row `perm[i]`.
    pub fn permute_rows(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.n() {
            return Err(Error::Dimension("permutation length differs from n".into()));
        }
        let x = self.x.select(ndarray::Axis(0), perm);
        let y = perm.iter().map(|&i| self.y[i]).collect();
        Ok(Self::new(x, y, self.feature_names.clone())?.with_baselines(self.baseline_map.clone()))
    }

    pub fn into_parts(self) -> (Array2<f64>, Vec<f64>, Vec<String>) {
        (self.x, self.y, self.feature_names)
    }
}

/// Ascending order of the responses, with exact ties broken by a seeded shuffle.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OrderIndex {
    nu: Vec<usize>,
    tie_seed: u64,
    tie_groups: Vec<Range<usize>>,
}

impl OrderIndex {
    /// Row indices, lowest response first.
    pub fn nu(&self) -> &[usize] {
        &self.nu
    }

    pub fn tie_seed(&self) -> u64 {
        self.tie_seed
    }

    /// Position ranges within `nu` whose responses are exactly equal.
    pub fn tie_groups(&self) -> &[Range<usize>] {
        &self.tie_groups
    }

    pub fn len(&self) -> usize {
        self.nu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nu.is_empty()
    }

    /// Wraps an externally supplied permutation.
    pub fn from_permutation(nu: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; nu.len()];
        for &i in &nu {
            if i >= nu.len() || std::mem::replace(&mut seen[i], true) {
                return Err(Error::InvalidInput("order is not a permutation".into()));
            }
        }
        Ok(Self {
            nu,
            tie_seed: 0,
            tie_groups: Vec::new(),
        })
    }
}

pub fn build_order(y: &[f64], tie_seed: u64) -> Result<OrderIndex> {
    if y.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 responses, got {}",
            y.len()
        )));
    }
    if let Some(i) = y.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!("non-finite response in row {i}")));
    }
    let mut nu: Vec<usize> = (0..y.len()).collect();
    nu.sort_by(|&a, &b| y[a].partial_cmp(&y[b]).expect("finite"));

    let mut rng = seeded_rng(tie_seed);
    let mut tie_groups = Vec::new();
    let mut start = 0;
    while start < nu.len() {
        let mut end = start + 1;
        while end < nu.len() && y[nu[end]] == y[nu[start]] {
            end += 1;
        }
        if end - start > 1 {
            nu[start..end].shuffle(&mut rng);
            tie_groups.push(start..end);
        }
        start = end;
    }
    Ok(OrderIndex {
        nu,
        tie_seed,
        tie_groups,
    })
}

// ---------------------------------------------------------------------------
// Schema

#[derive(Debug, Clone, PartialEq)]
pub enum ColumnKind {
    /// Passed through, optionally as `(value - center) / scale`.
    Numeric {
        center: Option<f64>,
        scale: Option<f64>,
    },
    /// Expanded to indicators for every level except the baseline.
    Categorical {
        baseline: String,
        levels: Option<Vec<String>>,
    },
    Ignore,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
}

/// Column layout of a raw table.
///
/// Text form, one `key: value` entry per line:
///
/// ```text
/// response: income
/// standardize: false
/// numeric: age
/// numeric: hours center=38.2 scale=11.9
/// categorical: state baseline=TX levels=TX|CA|NY
/// ignore: id
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct Schema {
    pub response: String,
    pub standardize: bool,
    pub columns: Vec<ColumnSpec>,
}

impl Schema {
    pub fn new(response: impl Into<String>) -> Self {
        Self {
            response: response.into(),
            standardize: false,
            columns: Vec::new(),
        }
    }

    pub fn numeric(mut self, name: impl Into<String>) -> Self {
        self.columns.push(ColumnSpec {
            name: name.into(),
            kind: ColumnKind::Numeric {
                center: None,
                scale: None,
            },
        });
        self
    }

    pub fn categorical(mut self, name: impl Into<String>, baseline: impl Into<String>) -> Self {
        self.columns.push(ColumnSpec {
            name: name.into(),
            kind: ColumnKind::Categorical {
                baseline: baseline.into(),
                levels: None,
            },
        });
        self
    }

    /// Categorical column with a fixed level set, so unobserved levels
    /// still get (all-zero) indicator columns.
    pub fn categorical_with_levels(
        mut self,
        name: impl Into<String>,
        baseline: impl Into<String>,
        levels: Vec<String>,
    ) -> Self {
        self.columns.push(ColumnSpec {
            name: name.into(),
            kind: ColumnKind::Categorical {
                baseline: baseline.into(),
                levels: Some(levels),
            },
        });
        self
    }

    pub fn with_standardize(mut self, on: bool) -> Self {
        self.standardize = on;
        self
    }

    pub fn column(&self, name: &str) -> Option<&ColumnSpec> {
        self.columns.iter().find(|c| c.name == name)
    }
}

fn check_token(value: &str, what: &str) -> Result<()> {
    if value.is_empty() || value.contains(char::is_whitespace) || value.contains('|') {
        return Err(Error::Schema(format!(
            "{what} {value:?} must be non-empty without whitespace or '|'"
        )));
    }
    Ok(())
}

impl fmt::Display for Schema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "response: {}", self.response)?;
        writeln!(f, "standardize: {}", self.standardize)?;
        for col in &self.columns {
            match &col.kind {
                ColumnKind::Numeric { center, scale } => {
                    write!(f, "numeric: {}", col.name)?;
                    if let Some(c) = center {
                        write!(f, " center={c:?}")?;
                    }
                    if let Some(s) = scale {
                        write!(f, " scale={s:?}")?;
                    }
                    writeln!(f)?;
                }
                ColumnKind::Categorical { baseline, levels } => {
                    write!(f, "categorical: {} baseline={baseline}", col.name)?;
                    if let Some(levels) = levels {
                        write!(f, " levels={}", levels.join("|"))?;
                    }
                    writeln!(f)?;
                }
                ColumnKind::Ignore => writeln!(f, "ignore: {}", col.name)?,
            }
        }
        Ok(())
    }
}

impl FromStr for Schema {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let mut response = None;
        let mut standardize = false;
        let mut columns: Vec<ColumnSpec> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parse_err = |msg: String| Error::Parse {
                line: lineno + 1,
                msg,
            };
            let (key, value) = line
                .split_once(':')
                .ok_or_else(|| parse_err(format!("expected `key: value`, got {line:?}")))?;
            let mut tokens = value.split_whitespace();
            let name = tokens
                .next()
                .ok_or_else(|| parse_err(format!("missing value for {key:?}")))?
                .to_string();
            let mut options = BTreeMap::new();
            for tok in tokens {
                let (k, v) = tok
                    .split_once('=')
                    .ok_or_else(|| parse_err(format!("expected key=value option, got {tok:?}")))?;
                options.insert(k.to_string(), v.to_string());
            }
            let float_opt = |options: &BTreeMap<String, String>, k: &str| -> Result<Option<f64>> {
                options
                    .get(k)
                    .map(|v| {
                        v.parse::<f64>()
                            .map_err(|e| parse_err(format!("bad {k} value {v:?}: {e}")))
                    })
                    .transpose()
            };
            let kind = match key.trim() {
                "response" => {
                    response = Some(name);
                    continue;
                }
                "standardize" => {
                    standardize = name
                        .parse()
                        .map_err(|_| parse_err(format!("standardize must be true/false, got {name:?}")))?;
                    continue;
                }
                "numeric" => ColumnKind::Numeric {
                    center: float_opt(&options, "center")?,
                    scale: float_opt(&options, "scale")?,
                },
                "categorical" => ColumnKind::Categorical {
                    baseline: options.get("baseline").cloned().ok_or_else(|| {
                        parse_err(format!("categorical column {name:?} needs baseline="))
                    })?,
                    levels: options
                        .get("levels")
                        .map(|l| l.split('|').map(str::to_string).collect()),
                },
                "ignore" => ColumnKind::Ignore,
                other => return Err(parse_err(format!("unknown schema key {other:?}"))),
            };
            if columns.iter().any(|c| c.name == name) {
                return Err(parse_err(format!("column {name:?} declared twice")));
            }
            columns.push(ColumnSpec { name, kind });
        }
        let response =
            response.ok_or_else(|| Error::Schema("schema does not name a response column".into()))?;
        if columns.iter().any(|c| c.name == response) {
            return Err(Error::Schema(format!(
                "response {response:?} also declared as a covariate"
            )));
        }
        Ok(Schema {
            response,
            standardize,
            columns,
        })
    }
}

// ---------------------------------------------------------------------------
// Raw tables

#[derive(Debug, Clone, PartialEq)]
pub enum RawColumn {
    Numeric(Vec<f64>),
    /// Dictionary-encoded labels: row `i` has label `labels[codes[i]]`.
    Categorical { labels: Vec<String>, codes: Vec<u32> },
}

impl RawColumn {
    pub fn len(&self) -> usize {
        match self {
            RawColumn::Numeric(v) => v.len(),
            RawColumn::Categorical { codes, .. } => codes.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn from_labels<S: AsRef<str>>(values: &[S]) -> Self {
        let mut index: HashMap<&str, u32> = HashMap::new();
        let mut labels = Vec::new();
        let codes = values
            .iter()
            .map(|v| {
                *index.entry(v.as_ref()).or_insert_with(|| {
                    labels.push(v.as_ref().to_string());
                    (labels.len() - 1) as u32
                })
            })
            .collect();
        RawColumn::Categorical { labels, codes }
    }

    fn label(&self, i: usize) -> String {
        match self {
            RawColumn::Numeric(v) => format!("{:?}", v[i]),
            RawColumn::Categorical { labels, codes } => labels[codes[i] as usize].clone(),
        }
    }
}

/// Named columns of equal length, as read from CSV.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawTable {
    names: Vec<String>,
    columns: Vec<RawColumn>,
}

impl RawTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, column: RawColumn) -> Result<()> {
        let name = name.into();
        if let Some(first) = self.columns.first() {
            if first.len() != column.len() {
                return Err(Error::Dimension(format!(
                    "column {name:?} has {} rows, table has {}",
                    column.len(),
                    first.len()
                )));
            }
        }
        if self.names.contains(&name) {
            return Err(Error::InvalidInput(format!("duplicate column {name:?}")));
        }
        self.names.push(name);
        self.columns.push(column);
        Ok(())
    }

    pub fn n_rows(&self) -> usize {
        self.columns.first().map_or(0, RawColumn::len)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn column(&self, name: &str) -> Option<&RawColumn> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.columns[i])
    }

    pub fn numeric(&self, name: &str) -> Option<&[f64]> {
        match self.column(name)? {
            RawColumn::Numeric(v) => Some(v),
            RawColumn::Categorical { .. } => None,
        }
    }

    /// Reads a CSV with header, typing columns by `schema`.
    ///
    /// Columns absent from the schema are skipped. The response column is
    /// optional so that prediction rows can be read with the training schema.
    pub fn from_csv_with_schema<R: Read>(reader: R, schema: &Schema) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        enum Slot {
            Num(Vec<f64>),
            Cat(Vec<String>),
        }
        let mut slots: Vec<(String, usize, Slot)> = Vec::new();
        let mut wanted: Vec<(&str, bool)> = schema
            .columns
            .iter()
            .filter(|c| c.kind != ColumnKind::Ignore)
            .map(|c| (c.name.as_str(), matches!(c.kind, ColumnKind::Numeric { .. })))
            .collect();
        wanted.push((schema.response.as_str(), true));
        for (name, numeric) in wanted {
            if let Some(idx) = headers.iter().position(|h| h == name) {
                let slot = if numeric {
                    Slot::Num(Vec::new())
                } else {
                    Slot::Cat(Vec::new())
                };
                slots.push((name.to_string(), idx, slot));
            }
        }
        for (rowno, record) in rdr.records().enumerate() {
            let record = record?;
            // header is line 1
            let line = rowno + 2;
            for (name, idx, slot) in slots.iter_mut() {
                let field = record.get(*idx).ok_or_else(|| Error::Parse {
                    line,
                    msg: format!("missing field for column {name:?}"),
                })?;
                match slot {
                    Slot::Num(v) => {
                        let value: f64 = field.parse().map_err(|_| Error::Parse {
                            line,
                            msg: format!("column {name:?}: {field:?} is not a number"),
                        })?;
                        if !value.is_finite() {
                            return Err(Error::Parse {
                                line,
                                msg: format!("column {name:?}: non-finite value"),
                            });
                        }
                        v.push(value);
                    }
                    Slot::Cat(v) => v.push(field.to_string()),
                }
            }
        }
        let mut table = RawTable::new();
        for (name, _, slot) in slots {
            let column = match slot {
                Slot::Num(v) => RawColumn::Numeric(v),
                Slot::Cat(v) => RawColumn::from_labels(&v),
            };
            table.push(name, column)?;
        }
        Ok(table)
    }

    /// Reads a CSV with header, typing a column numeric when every field parses.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let mut fields: Vec<Vec<String>> = vec![Vec::new(); headers.len()];
        for record in rdr.records() {
            let record = record?;
            for (j, col) in fields.iter_mut().enumerate() {
                col.push(record.get(j).unwrap_or_default().to_string());
            }
        }
        let mut table = RawTable::new();
        for (name, col) in headers.into_iter().zip(fields) {
            let parsed: Option<Vec<f64>> = col.iter().map(|f| f.parse().ok()).collect();
            let column = match parsed {
                Some(v) => RawColumn::Numeric(v),
                None => RawColumn::from_labels(&col),
            };
            table.push(name, column)?;
        }
        Ok(table)
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(&self.names)?;
        for i in 0..self.n_rows() {
            wtr.write_record(self.columns.iter().map(|c| c.label(i)))?;
        }
        wtr.flush()?;
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Design encoding

#[derive(Debug, Clone, PartialEq)]
enum Feature {
    Numeric {
        column: String,
        center: f64,
        scale: f64,
    },
    Indicator {
        column: String,
        level: String,
    },
}

/// A schema resolved against training data: levels, scaling and dropped
/// columns are fixed so that new rows encode onto the same feature columns.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignEncoder {
    schema: Schema,
    features: Vec<Feature>,
}

impl DesignEncoder {
    /// Resolves `schema` against `raw`. Returns the encoder and any warnings.
    pub fn fit(schema: &Schema, raw: &RawTable) -> Result<(Self, Vec<String>)> {
        let mut warnings = Vec::new();
        let mut fitted = Schema {
            response: schema.response.clone(),
            standardize: schema.standardize,
            columns: Vec::with_capacity(schema.columns.len()),
        };
        let mut features = Vec::new();
        for spec in &schema.columns {
            let name = &spec.name;
            let missing = || Error::Schema(format!("column {name:?} not found in data"));
            let kind = match &spec.kind {
                ColumnKind::Ignore => ColumnKind::Ignore,
                ColumnKind::Numeric { center, scale } => {
                    let values = match raw.column(name).ok_or_else(missing)? {
                        RawColumn::Numeric(v) => v,
                        RawColumn::Categorical { .. } => {
                            return Err(Error::Schema(format!(
                                "column {name:?} declared numeric but holds text"
                            )))
                        }
                    };
                    let constant = values.windows(2).all(|w| w[0] == w[1]);
                    if constant {
                        warnings.push(format!("column {name:?} is constant; dropped"));
                        ColumnKind::Ignore
                    } else {
                        let (c, s) = match (center, scale) {
                            (Some(c), Some(s)) => (Some(*c), Some(*s)),
                            _ if schema.standardize => {
                                let (m, sd) = mean_sd(values);
                                (Some(m), Some(sd))
                            }
                            _ => (*center, *scale),
                        };
                        if let Some(s) = s {
                            if !(s > 0.0 && s.is_finite()) {
                                return Err(Error::Schema(format!(
                                    "column {name:?}: scale must be positive"
                                )));
                            }
                        }
                        features.push(Feature::Numeric {
                            column: name.clone(),
                            center: c.unwrap_or(0.0),
                            scale: s.unwrap_or(1.0),
                        });
                        ColumnKind::Numeric { center: c, scale: s }
                    }
                }
                ColumnKind::Categorical { baseline, levels } => {
                    check_token(baseline, "baseline")?;
                    let observed: BTreeSet<String> = match raw.column(name).ok_or_else(missing)? {
                        RawColumn::Categorical { labels, codes } => {
                            let mut used = vec![false; labels.len()];
                            for &c in codes {
                                used[c as usize] = true;
                            }
                            labels
                                .iter()
                                .zip(used)
                                .filter(|(_, u)| *u)
                                .map(|(l, _)| l.clone())
                                .collect()
                        }
                        RawColumn::Numeric(v) => v.iter().map(|x| format!("{x:?}")).collect(),
                    };
                    let levels: Vec<String> = match levels {
                        Some(levels) => {
                            if let Some(unknown) = observed.iter().find(|l| !levels.contains(l)) {
                                return Err(Error::UnknownLevel {
                                    column: name.clone(),
                                    level: unknown.clone(),
                                });
                            }
                            levels.clone()
                        }
                        None => {
                            let mut all = observed.clone();
                            all.insert(baseline.clone());
                            all.into_iter().collect()
                        }
                    };
                    for l in &levels {
                        check_token(l, "level")?;
                    }
                    if !levels.contains(baseline) {
                        return Err(Error::Schema(format!(
                            "baseline {baseline:?} is not a level of column {name:?}"
                        )));
                    }
                    if observed.len() <= 1 {
                        warnings.push(format!("column {name:?} has a single level; dropped"));
                        ColumnKind::Ignore
                    } else {
                        for level in levels.iter().filter(|l| *l != baseline) {
                            features.push(Feature::Indicator {
                                column: name.clone(),
                                level: level.clone(),
                            });
                        }
                        ColumnKind::Categorical {
                            baseline: baseline.clone(),
                            levels: Some(levels),
                        }
                    }
                }
            };
            fitted.columns.push(ColumnSpec {
                name: name.clone(),
                kind,
            });
        }
        for w in &warnings {
            log::warn!("{w}");
        }
        Ok((
            Self {
                schema: fitted,
                features,
            },
            warnings,
        ))
    }

    /// Rebuilds an encoder from a schema returned by [`DesignEncoder::schema`]
    /// without looking at data, so a single new row encodes like training.
    pub fn from_resolved(schema: &Schema) -> Result<Self> {
        let mut features = Vec::new();
        for spec in &schema.columns {
            match &spec.kind {
                ColumnKind::Ignore => {}
                ColumnKind::Numeric { center, scale } => features.push(Feature::Numeric {
                    column: spec.name.clone(),
                    center: center.unwrap_or(0.0),
                    scale: scale.unwrap_or(1.0),
                }),
                ColumnKind::Categorical { baseline, levels } => {
                    let levels = levels.as_ref().ok_or_else(|| {
                        Error::Schema(format!("column {:?} has no resolved level list", spec.name))
                    })?;
                    for level in levels.iter().filter(|l| *l != baseline) {
                        features.push(Feature::Indicator {
                            column: spec.name.clone(),
                            level: level.clone(),
                        });
                    }
                }
            }
        }
        Ok(Self {
            schema: schema.clone(),
            features,
        })
    }

    /// The resolved schema; fitting it again on the same data is the identity.
    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.features
            .iter()
            .map(|f| match f {
                Feature::Numeric { column, .. } => column.clone(),
                Feature::Indicator { column, level } => format!("{column}={level}"),
            })
            .collect()
    }

    pub fn p(&self) -> usize {
        self.features.len()
    }

    pub fn baseline_map(&self) -> BTreeMap<String, String> {
        self.schema
            .columns
            .iter()
            .filter_map(|c| match &c.kind {
                ColumnKind::Categorical { baseline, .. } => Some((c.name.clone(), baseline.clone())),
                _ => None,
            })
            .collect()
    }

    /// Encodes covariates of `raw` into an `n × p` matrix.
    pub fn encode(&self, raw: &RawTable) -> Result<Array2<f64>> {
        let n = raw.n_rows();
        let mut x = Array2::zeros((n, self.features.len()));
        // Resolve each categorical column's codes to feature indices once.
        let mut indicator_maps: HashMap<&str, Vec<Option<usize>>> = HashMap::new();
        for (j, feature) in self.features.iter().enumerate() {
            match feature {
                Feature::Numeric {
                    column,
                    center,
                    scale,
                } => {
                    let values = match raw.column(column) {
                        Some(RawColumn::Numeric(v)) => v,
                        Some(_) => {
                            return Err(Error::Schema(format!(
                                "column {column:?} must be numeric"
                            )))
                        }
                        None => {
                            return Err(Error::Schema(format!("missing column {column:?}")))
                        }
                    };
                    for (dst, v) in x.column_mut(j).iter_mut().zip(values) {
                        *dst = (v - center) / scale;
                    }
                }
                Feature::Indicator { column, .. } => {
                    if indicator_maps.contains_key(column.as_str()) {
                        continue;
                    }
                    let (labels, codes) = match raw.column(column) {
                        Some(RawColumn::Categorical { labels, codes }) => (labels.clone(), codes),
                        Some(RawColumn::Numeric(_)) => {
                            return Err(Error::Schema(format!(
                                "column {column:?} must be categorical"
                            )))
                        }
                        None => {
                            return Err(Error::Schema(format!("missing column {column:?}")))
                        }
                    };
                    let levels = match &self.column_spec(column).kind {
                        ColumnKind::Categorical {
                            levels: Some(levels),
                            ..
                        } => levels,
                        _ => unreachable!("indicator features come from categorical columns"),
                    };
                    let mut map = Vec::with_capacity(labels.len());
                    for label in &labels {
                        if !levels.contains(label) {
                            // Only an error if some row actually carries it.
                            map.push(None);
                            continue;
                        }
                        map.push(self.features.iter().position(|f| {
                            matches!(f, Feature::Indicator { column: c, level } if c == column && level == label)
                        }));
                    }
                    for (i, &code) in codes.iter().enumerate() {
                        let label = &labels[code as usize];
                        if !levels.contains(label) {
                            return Err(Error::UnknownLevel {
                                column: column.clone(),
                                level: label.clone(),
                            });
                        }
                        if let Some(jj) = map[code as usize] {
                            x[[i, jj]] = 1.0;
                        }
                    }
                    indicator_maps.insert(column.as_str(), map);
                }
            }
        }
        Ok(x)
    }

    fn column_spec(&self, name: &str) -> &ColumnSpec {
        self.schema.column(name).expect("feature column in schema")
    }
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, var.sqrt())
}

/// Encodes a raw table into a dataset. Returns the fitted encoder alongside.
pub fn encode_design(raw: &RawTable, schema: &Schema) -> Result<(RegressionDataset, DesignEncoder)> {
    let (encoder, _) = DesignEncoder::fit(schema, raw)?;
    let x = encoder.encode(raw)?;
    let y = raw
        .numeric(&schema.response)
        .ok_or_else(|| {
            Error::Schema(format!(
                "response column {:?} missing or not numeric",
                schema.response
            ))
        })?
        .to_vec();
    let dataset =
        RegressionDataset::new(x, y, encoder.feature_names())?.with_baselines(encoder.baseline_map());
    Ok((dataset, encoder))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn strict_ordering_is_unique() {
        let order = build_order(&[3.0, 1.0, 2.0], 7).unwrap();
        assert_eq!(order.nu(), &[1, 2, 0]);
        assert!(order.tie_groups().is_empty());
    }

    #[test]
    fn two_element_tie_is_deterministic_per_seed() {
        let mut seen = BTreeSet::new();
        for seed in 0..32 {
            let a = build_order(&[5.0, 5.0], seed).unwrap();
            let b = build_order(&[5.0, 5.0], seed).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.tie_groups(), &[0..2]);
            seen.insert(a.nu().to_vec());
        }
        assert_eq!(seen.len(), 2, "both orders should occur across seeds");
    }

    #[test]
    fn rejects_non_finite_and_short_responses() {
        assert!(matches!(
            build_order(&[1.0, f64::NAN], 0),
            Err(Error::InvalidInput(_))
        ));
        assert!(build_order(&[1.0], 0).is_err());
    }

    #[test]
    fn dataset_validates_shapes() {
        let x = array![[1.0], [2.0]];
        assert!(RegressionDataset::new(x.clone(), vec![1.0], vec!["a".into()]).is_err());
        assert!(RegressionDataset::new(x.clone(), vec![1.0, 2.0], vec![]).is_err());
        assert!(RegressionDataset::new(x, vec![1.0, f64::INFINITY], vec!["a".into()]).is_err());
    }

    fn toy_table() -> RawTable {
        let mut t = RawTable::new();
        t.push("y", RawColumn::Numeric(vec![1.0, 2.0, 3.0, 4.0])).unwrap();
        t.push("x", RawColumn::Numeric(vec![0.5, -1.0, 2.0, 7.0])).unwrap();
        t.push("c", RawColumn::from_labels(&["A", "B", "C", "A"])).unwrap();
        t.push("k", RawColumn::Numeric(vec![3.0; 4])).unwrap();
        t
    }

    #[test]
    fn categorical_expands_to_levels_minus_baseline() {
        let schema = Schema::new("y").numeric("x").categorical("c", "A");
        let (ds, enc) = encode_design(&toy_table(), &schema).unwrap();
        assert_eq!(ds.p(), 3);
        assert_eq!(enc.feature_names(), ["x", "c=B", "c=C"]);
        assert_eq!(ds.x().column(0).to_vec(), vec![0.5, -1.0, 2.0, 7.0]);
        assert_eq!(ds.x().column(1).to_vec(), vec![0.0, 1.0, 0.0, 0.0]);
        assert_eq!(ds.x().column(2).to_vec(), vec![0.0, 0.0, 1.0, 0.0]);
        assert_eq!(ds.baseline_map()["c"], "A");
    }

    #[test]
    fn resolved_encoder_reads_a_single_row_like_training() {
        let schema = Schema::new("y").numeric("x").categorical("c", "A").with_standardize(true);
        let (enc, _) = DesignEncoder::fit(&schema, &toy_table()).unwrap();
        let again = DesignEncoder::from_resolved(enc.schema()).unwrap();
        assert_eq!(again.feature_names(), enc.feature_names());
        let mut one = RawTable::new();
        one.push("x", RawColumn::Numeric(vec![2.0])).unwrap();
        one.push("c", RawColumn::from_labels(&["C"])).unwrap();
        let full = enc.encode(&toy_table()).unwrap();
        assert_eq!(again.encode(&one).unwrap().row(0), full.row(2));
        // Unresolved categorical columns are refused.
        assert!(DesignEncoder::from_resolved(&schema).is_err());
    }

    #[test]
    fn constant_column_is_dropped_with_warning() {
        let schema = Schema::new("y").numeric("x").numeric("k");
        let (enc, warnings) = DesignEncoder::fit(&schema, &toy_table()).unwrap();
        assert_eq!(enc.feature_names(), ["x"]);
        assert_eq!(warnings.len(), 1);
        assert_eq!(enc.schema().column("k").unwrap().kind, ColumnKind::Ignore);
    }

    #[test]
    fn unseen_level_at_predict_time_is_an_error() {
        let schema = Schema::new("y").categorical("c", "A");
        let (_, enc) = encode_design(&toy_table(), &schema).unwrap();
        let mut rows = RawTable::new();
        rows.push("c", RawColumn::from_labels(&["B", "Z"])).unwrap();
        match enc.encode(&rows) {
            Err(Error::UnknownLevel { column, level }) => {
                assert_eq!(column, "c");
                assert_eq!(level, "Z");
            }
            other => panic!("expected unknown level, got {other:?}"),
        }
    }

    #[test]
    fn standardization_is_recorded_and_reapplied() {
        let schema = Schema::new("y").numeric("x").with_standardize(true);
        let (ds, enc) = encode_design(&toy_table(), &schema).unwrap();
        let col = ds.x().column(0);
        assert!(col.sum().abs() < 1e-12);
        let (_, sd) = mean_sd(col.as_slice_memory_order().unwrap_or(&col.to_vec()));
        assert!((sd - 1.0).abs() < 1e-12);
        let text = enc.schema().to_string();
        assert!(text.contains("center="), "{text}");
        let reparsed: Schema = text.parse().unwrap();
        let (ds2, enc2) = encode_design(&toy_table(), &reparsed).unwrap();
        assert_eq!(ds, ds2);
        assert_eq!(enc.schema(), enc2.schema());
    }

    #[test]
    fn schema_text_round_trips() {
        let text = "response: income\nstandardize: false\nnumeric: age\n\
                    categorical: state baseline=TX levels=CA|NY|TX\nignore: id\n";
        let schema: Schema = text.parse().unwrap();
        assert_eq!(schema.to_string(), text);
        assert!("numeric: x\n".parse::<Schema>().is_err());
        assert!("response: y\ncategorical: c\n".parse::<Schema>().is_err());
    }

    #[test]
    fn csv_reading_follows_the_schema() {
        let csv = "y,x,c,extra\n1.5,2,A,zz\n2.5,3,B,qq\n";
        let schema = Schema::new("y").numeric("x").categorical("c", "A");
        let table = RawTable::from_csv_with_schema(csv.as_bytes(), &schema).unwrap();
        assert_eq!(table.numeric("y").unwrap(), &[1.5, 2.5]);
        assert!(table.column("extra").is_none());
        let bad = "y,x,c\n1.5,oops,A\n";
        assert!(matches!(
            RawTable::from_csv_with_schema(bad.as_bytes(), &schema),
            Err(Error::Parse { line: 2, .. })
        ));
    }
}
