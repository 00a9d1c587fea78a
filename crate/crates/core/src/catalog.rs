//! Modules, catalogs and feature matrices.
//!
//! A [`FeatureMatrix`] is the datasheet table of one module: one row per named
//! feature, one column per catalog component. A [`DesignSpace`] is the ordered
//! list of modules, and a [`DesignVector`] picks (at most) one component per
//! module.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

/// Default cap on the number of designs an exhaustive enumeration may visit.
pub const DEFAULT_ENUM_CAP: u128 = 10_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CatalogError {
    #[error("schema error at {location}: {message}")]
    Schema { location: String, message: String },
    #[error("duplicate module `{0}`")]
    DuplicateModule(String),
    #[error("module `{module}`: duplicate feature `{feature}`")]
    DuplicateFeature { module: String, feature: String },
    #[error("module `{module}`: duplicate component `{component}`")]
    DuplicateComponent { module: String, component: String },
    #[error("module `{module}`, component `{component}`: expected {expected} feature values, found {found}")]
    RaggedColumn {
        module: String,
        component: String,
        expected: usize,
        found: usize,
    },
    #[error("module `{0}` has an empty catalog")]
    EmptyCatalog(String),
    #[error("module `{module}`, component `{component}`, feature `{feature}`: value is not a finite number")]
    NonFinite {
        module: String,
        component: String,
        feature: String,
    },
    #[error("unknown module `{0}`")]
    UnknownModule(String),
    #[error("module `{module}` has no feature `{feature}`")]
    UnknownFeature { module: String, feature: String },
    #[error("module `{module}` has no component `{component}`")]
    UnknownComponent { module: String, component: String },
    #[error("design space has {count} designs, above the enumeration cap of {cap}")]
    EnumerationCap { count: u128, cap: u128 },
    #[error("invalid design vector: {0}")]
    InvalidDesign(String),
    #[error("csv sidecar {path}: {message}")]
    Csv { path: String, message: String },
}

/// A named feature with an optional unit annotation (`"thrust [N]"`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Feature {
    pub name: String,
    pub unit: Option<String>,
}

impl Feature {
    pub fn new(name: impl Into<String>, unit: Option<&str>) -> Self {
        Self {
            name: name.into(),
            unit: unit.map(str::to_string),
        }
    }

    /// Parses `"name [unit]"` or a bare `"name"`.
    pub fn parse(label: &str) -> Self {
        let label = label.trim();
        match (label.find('['), label.ends_with(']')) {
            (Some(open), true) => Self {
                name: label[..open].trim().to_string(),
                unit: Some(label[open + 1..label.len() - 1].trim().to_string()),
            },
            _ => Self {
                name: label.to_string(),
                unit: None,
            },
        }
    }

    pub fn label(&self) -> String {
        match &self.unit {
            Some(u) => format!("{} [{}]", self.name, u),
            None => self.name.clone(),
        }
    }
}

impl From<&str> for Feature {
    fn from(label: &str) -> Self {
        Self::parse(label)
    }
}

/// A component name with one value per feature.
pub type ComponentColumn = (String, Vec<f64>);

/// Feature matrix of one module: rows are features, columns are components.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    module_id: String,
    features: Vec<Feature>,
    component_names: Vec<String>,
    /// Row-major: `values[f * n_components + j]`.
    values: Vec<f64>,
    optional: bool,
    feature_index: HashMap<String, usize>,
    component_index: HashMap<String, usize>,
}

impl FeatureMatrix {
    /// Builds a matrix from catalog columns, validating every invariant.
    pub fn new(
        module_id: impl Into<String>,
        features: Vec<Feature>,
        columns: Vec<ComponentColumn>,
    ) -> Result<Self, CatalogError> {
        let module_id = module_id.into();
        if columns.is_empty() {
            return Err(CatalogError::EmptyCatalog(module_id));
        }
        let mut feature_index = HashMap::with_capacity(features.len());
        for (i, f) in features.iter().enumerate() {
            if feature_index.insert(f.name.clone(), i).is_some() {
                return Err(CatalogError::DuplicateFeature {
                    module: module_id,
                    feature: f.name.clone(),
                });
            }
        }
        let n = columns.len();
        let mut component_index = HashMap::with_capacity(n);
        let mut values = vec![0.0; features.len() * n];
        let mut component_names = Vec::with_capacity(n);
        for (j, (name, col)) in columns.into_iter().enumerate() {
            if component_index.insert(name.clone(), j).is_some() {
                return Err(CatalogError::DuplicateComponent {
                    module: module_id,
                    component: name,
                });
            }
            if col.len() != features.len() {
                return Err(CatalogError::RaggedColumn {
                    module: module_id,
                    component: name,
                    expected: features.len(),
                    found: col.len(),
                });
            }
            for (f, v) in col.into_iter().enumerate() {
                if !v.is_finite() {
                    return Err(CatalogError::NonFinite {
                        module: module_id,
                        component: name,
                        feature: features[f].name.clone(),
                    });
                }
                values[f * n + j] = v;
            }
            component_names.push(name);
        }
        Ok(Self {
            module_id,
            features,
            component_names,
            values,
            optional: false,
            feature_index,
            component_index,
        })
    }

    /// Marks the module as optional: a design may select no component.
    pub fn with_optional(mut self, optional: bool) -> Self {
        self.optional = optional;
        self
    }

    pub fn module_id(&self) -> &str {
        &self.module_id
    }

    pub fn features(&self) -> &[Feature] {
        &self.features
    }

    pub fn component_names(&self) -> &[String] {
        &self.component_names
    }

    pub fn len(&self) -> usize {
        self.component_names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.component_names.is_empty()
    }

    pub fn is_optional(&self) -> bool {
        self.optional
    }

    pub fn feature_position(&self, feature: &str) -> Option<usize> {
        self.feature_index.get(feature).copied()
    }

    pub fn component_position(&self, component: &str) -> Option<usize> {
        self.component_index.get(component).copied()
    }

    pub fn has_feature(&self, feature: &str) -> bool {
        self.feature_index.contains_key(feature)
    }

    /// The `[F_i]_feature` row operator.
    pub fn row(&self, feature: &str) -> Result<&[f64], CatalogError> {
        let f = self
            .feature_position(feature)
            .ok_or_else(|| CatalogError::UnknownFeature {
                module: self.module_id.clone(),
                feature: feature.to_string(),
            })?;
        Ok(self.row_at(f))
    }

    pub fn row_at(&self, feature: usize) -> &[f64] {
        let n = self.len();
        &self.values[feature * n..(feature + 1) * n]
    }

    pub fn value(&self, feature: usize, component: usize) -> f64 {
        self.values[feature * self.len() + component]
    }

    /// Column `j` as a vector of feature values.
    pub fn column(&self, component: usize) -> Vec<f64> {
        (0..self.features.len()).map(|f| self.value(f, component)).collect()
    }

    /// `F_i x_i` for a one-hot (or all-zero) block.
    pub fn select(&self, block: &[bool]) -> Vec<f64> {
        let mut out = vec![0.0; self.features.len()];
        for (j, _) in block.iter().enumerate().filter(|(_, b)| **b) {
            for (f, o) in out.iter_mut().enumerate() {
                *o += self.value(f, j);
            }
        }
        out
    }
}

/// The ordered set of modules to design.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignSpace {
    modules: Vec<FeatureMatrix>,
    offsets: Vec<usize>,
    total_dim: usize,
    index: HashMap<String, usize>,
}

impl DesignSpace {
    pub fn new(modules: Vec<FeatureMatrix>) -> Result<Self, CatalogError> {
        let mut index = HashMap::with_capacity(modules.len());
        let mut offsets = Vec::with_capacity(modules.len());
        let mut total_dim = 0;
        for (i, m) in modules.iter().enumerate() {
            if index.insert(m.module_id.clone(), i).is_some() {
                return Err(CatalogError::DuplicateModule(m.module_id.clone()));
            }
            offsets.push(total_dim);
            total_dim += m.len();
        }
        Ok(Self {
            modules,
            offsets,
            total_dim,
            index,
        })
    }

    pub fn modules(&self) -> &[FeatureMatrix] {
        &self.modules
    }

    /// `N`, the number of primary binary variables.
    pub fn total_dim(&self) -> usize {
        self.total_dim
    }

    pub fn module_position(&self, module: &str) -> Option<usize> {
        self.index.get(module).copied()
    }

    pub fn module(&self, module: &str) -> Result<&FeatureMatrix, CatalogError> {
        self.module_position(module)
            .map(|i| &self.modules[i])
            .ok_or_else(|| CatalogError::UnknownModule(module.to_string()))
    }

    /// Offset of module `i`'s block inside the stacked design vector.
    pub fn offset(&self, module: usize) -> usize {
        self.offsets[module]
    }

    /// Row of `F_module` for `feature`.
    pub fn feature_row(&self, module: &str, feature: &str) -> Result<Vec<f64>, CatalogError> {
        Ok(self.module(module)?.row(feature)?.to_vec())
    }

    /// Number of choices per module, counting "none" for optional modules.
    pub fn option_counts(&self) -> Vec<usize> {
        self.modules.iter().map(|m| m.len() + usize::from(m.optional)).collect()
    }

    /// `Π_i |C_i|` (optional modules count one extra choice), saturating.
    pub fn design_count(&self) -> u128 {
        self.option_counts()
            .iter()
            .fold(1u128, |acc, &n| acc.saturating_mul(n as u128))
    }

    /// The design with mixed-radix index `index` in enumeration order.
    ///
    /// The first module is the most significant digit; for optional modules
    /// the "none" choice sorts after every component.
    pub fn design_at(&self, mut index: u128) -> Vec<Option<usize>> {
        let counts = self.option_counts();
        let mut choices = vec![None; counts.len()];
        for (i, &n) in counts.iter().enumerate().rev() {
            let digit = (index % n as u128) as usize;
            index /= n as u128;
            choices[i] = if digit < self.modules[i].len() {
                Some(digit)
            } else {
                None
            };
        }
        choices
    }

    /// Index of a choice tuple in enumeration order (inverse of [`Self::design_at`]).
    pub fn design_index(&self, choices: &[Option<usize>]) -> u128 {
        let counts = self.option_counts();
        choices
            .iter()
            .zip(&counts)
            .zip(&self.modules)
            .fold(0u128, |acc, ((c, &n), m)| {
                acc * n as u128 + c.unwrap_or(m.len()) as u128
            })
    }

    /// Serializes the space back to the problem-file `[module.*]` schema.
    pub fn to_toml_table(&self) -> toml::Table {
        let mut modules = toml::Table::new();
        for m in &self.modules {
            let mut t = toml::Table::new();
            t.insert(
                "features".into(),
                toml::Value::Array(m.features.iter().map(|f| toml::Value::String(f.label())).collect()),
            );
            if m.optional {
                t.insert("optional".into(), toml::Value::Boolean(true));
            }
            let comps = (0..m.len())
                .map(|j| {
                    let mut row = vec![toml::Value::String(m.component_names[j].clone())];
                    row.extend(m.column(j).into_iter().map(toml::Value::Float));
                    toml::Value::Array(row)
                })
                .collect();
            t.insert("components".into(), toml::Value::Array(comps));
            modules.insert(m.module_id.clone(), toml::Value::Table(t));
        }
        let mut root = toml::Table::new();
        root.insert("module".into(), toml::Value::Table(modules));
        root
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(&self.to_toml_table()).expect("design space serializes to toml")
    }
}

/// Stacked selection vector, one block per module.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct DesignVector {
    blocks: Vec<Vec<bool>>,
}

impl DesignVector {
    /// Builds a design from raw blocks, checking membership in `X`.
    pub fn from_blocks(space: &DesignSpace, blocks: Vec<Vec<bool>>) -> Result<Self, CatalogError> {
        if blocks.len() != space.modules.len() {
            return Err(CatalogError::InvalidDesign(format!(
                "expected {} blocks, got {}",
                space.modules.len(),
                blocks.len()
            )));
        }
        for (m, b) in space.modules.iter().zip(&blocks) {
            if b.len() != m.len() {
                return Err(CatalogError::InvalidDesign(format!(
                    "block `{}` has length {}, catalog has {}",
                    m.module_id,
                    b.len(),
                    m.len()
                )));
            }
            let ones = b.iter().filter(|v| **v).count();
            if ones > 1 || (ones == 0 && !m.optional) {
                return Err(CatalogError::InvalidDesign(format!(
                    "block `{}` has {} selected entries",
                    m.module_id, ones
                )));
            }
        }
        Ok(Self { blocks })
    }

    pub fn from_choices(space: &DesignSpace, choices: &[Option<usize>]) -> Result<Self, CatalogError> {
        if choices.len() != space.modules.len() {
            return Err(CatalogError::InvalidDesign(format!(
                "expected {} choices, got {}",
                space.modules.len(),
                choices.len()
            )));
        }
        let blocks = space
            .modules
            .iter()
            .zip(choices)
            .map(|(m, c)| {
                let mut b = vec![false; m.len()];
                if let Some(j) = *c {
                    if j >= m.len() {
                        return Err(CatalogError::InvalidDesign(format!(
                            "component index {j} out of range for `{}`",
                            m.module_id
                        )));
                    }
                    b[j] = true;
                }
                Ok(b)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_blocks(space, blocks)
    }

    /// Builds a design from component names (`None` leaves an optional module empty).
    pub fn from_names(space: &DesignSpace, names: &[Option<&str>]) -> Result<Self, CatalogError> {
        let choices = space
            .modules
            .iter()
            .zip(names)
            .map(|(m, n)| match n {
                Some(n) => m
                    .component_position(n)
                    .map(Some)
                    .ok_or_else(|| CatalogError::UnknownComponent {
                        module: m.module_id.clone(),
                        component: n.to_string(),
                    }),
                None => Ok(None),
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_choices(space, &choices)
    }

    pub fn blocks(&self) -> &[Vec<bool>] {
        &self.blocks
    }

    pub fn choices(&self) -> Vec<Option<usize>> {
        self.blocks.iter().map(|b| b.iter().position(|v| *v)).collect()
    }

    /// The stacked binary vector `x`.
    pub fn flatten(&self) -> Vec<bool> {
        self.blocks.iter().flatten().copied().collect()
    }
}

/// Lazily yields every design of a space in enumeration order.
#[derive(Debug)]
pub struct DesignIter<'a> {
    space: &'a DesignSpace,
    next: u128,
    count: u128,
}

impl Iterator for DesignIter<'_> {
    type Item = DesignVector;

    fn next(&mut self) -> Option<Self::Item> {
        if self.next >= self.count {
            return None;
        }
        let choices = self.space.design_at(self.next);
        self.next += 1;
        Some(DesignVector::from_choices(self.space, &choices).expect("enumerated design is valid"))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = (self.count - self.next) as usize;
        (left, Some(left))
    }
}

/// Enumerates `X`, refusing spaces larger than `cap`.
pub fn enumerate_designs(space: &DesignSpace, cap: u128) -> Result<DesignIter<'_>, CatalogError> {
    let count = space.design_count();
    if count > cap {
        return Err(CatalogError::EnumerationCap { count, cap });
    }
    Ok(DesignIter { space, next: 0, count })
}

/// Parses a problem document and returns its design space.
///
/// CSV sidecars are resolved relative to `base_dir` (the current directory
/// when `None`).
pub fn load_design_space(source: &str, base_dir: Option<&Path>) -> Result<DesignSpace, CatalogError> {
    let table: toml::Table = source.parse().map_err(|e: toml::de::Error| CatalogError::Schema {
        location: "document".into(),
        message: e.message().to_string(),
    })?;
    space_from_table(&table, base_dir)
}

pub(crate) fn space_from_table(table: &toml::Table, base_dir: Option<&Path>) -> Result<DesignSpace, CatalogError> {
    let modules = match table.get("module") {
        Some(toml::Value::Table(t)) => t,
        Some(_) => return Err(schema("module", "expected a table of modules")),
        None => return Err(schema("document", "no [module.<id>] tables")),
    };
    let mut out = Vec::with_capacity(modules.len());
    for (id, value) in modules {
        let t = value
            .as_table()
            .ok_or_else(|| schema(&format!("module.{id}"), "expected a table"))?;
        out.push(module_from_table(id, t, base_dir)?);
    }
    DesignSpace::new(out)
}

fn schema(location: &str, message: &str) -> CatalogError {
    CatalogError::Schema {
        location: location.to_string(),
        message: message.to_string(),
    }
}

fn module_from_table(id: &str, t: &toml::Table, base_dir: Option<&Path>) -> Result<FeatureMatrix, CatalogError> {
    let loc = format!("module.{id}");
    let optional = match t.get("optional") {
        None => false,
        Some(toml::Value::Boolean(b)) => *b,
        Some(_) => return Err(schema(&format!("{loc}.optional"), "expected a boolean")),
    };
    let matrix = match (t.get("components"), t.get("csv")) {
        (Some(_), Some(_)) => return Err(schema(&loc, "give either `components` or `csv`, not both")),
        (None, Some(toml::Value::String(path))) => {
            let path = match base_dir {
                Some(dir) => dir.join(path),
                None => PathBuf::from(path),
            };
            let (features, columns) = read_csv_sidecar(&path)?;
            FeatureMatrix::new(id, features, columns)?
        }
        (None, Some(_)) => return Err(schema(&format!("{loc}.csv"), "expected a path string")),
        (Some(toml::Value::Array(rows)), None) => {
            let features = match t.get("features") {
                Some(toml::Value::Array(fs)) => fs
                    .iter()
                    .enumerate()
                    .map(|(i, f)| {
                        f.as_str()
                            .map(Feature::parse)
                            .ok_or_else(|| schema(&format!("{loc}.features[{i}]"), "expected a string"))
                    })
                    .collect::<Result<Vec<_>, _>>()?,
                Some(_) => return Err(schema(&format!("{loc}.features"), "expected an array of strings")),
                None => Vec::new(),
            };
            let mut columns = Vec::with_capacity(rows.len());
            for (r, row) in rows.iter().enumerate() {
                let rloc = format!("{loc}.components[{r}]");
                let items = row
                    .as_array()
                    .ok_or_else(|| schema(&rloc, "expected [name, v1, v2, ...]"))?;
                let name = items
                    .first()
                    .and_then(|v| v.as_str())
                    .ok_or_else(|| schema(&rloc, "first entry must be the component name"))?;
                let vals = items[1..]
                    .iter()
                    .enumerate()
                    .map(|(k, v)| match v {
                        toml::Value::Float(x) => Ok(*x),
                        toml::Value::Integer(x) => Ok(*x as f64),
                        _ => Err(schema(&format!("{rloc}[{}]", k + 1), "feature values must be numbers")),
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                columns.push((name.to_string(), vals));
            }
            FeatureMatrix::new(id, features, columns)?
        }
        (Some(_), None) => return Err(schema(&format!("{loc}.components"), "expected an array")),
        (None, None) => return Err(CatalogError::EmptyCatalog(id.to_string())),
    };
    Ok(matrix.with_optional(optional))
}

/// Reads a catalog CSV: first row holds feature labels (after a leading
/// component-name header cell), first column holds component names.
pub fn read_csv_sidecar(path: &Path) -> Result<(Vec<Feature>, Vec<ComponentColumn>), CatalogError> {
    let csv_err = |message: String| CatalogError::Csv {
        path: path.display().to_string(),
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_err(e.to_string()))?;
    let headers = reader.headers().map_err(|e| csv_err(e.to_string()))?.clone();
    let features: Vec<Feature> = headers.iter().skip(1).map(Feature::parse).collect();
    let mut columns = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_err(e.to_string()))?;
        let name = record
            .get(0)
            .ok_or_else(|| csv_err(format!("row {}: missing component name", line + 2)))?;
        let vals = record
            .iter()
            .skip(1)
            .enumerate()
            .map(|(k, v)| {
                v.parse::<f64>().map_err(|_| {
                    csv_err(format!(
                        "row {}, column `{}`: `{v}` is not a number",
                        line + 2,
                        headers.get(k + 1).unwrap_or("?")
                    ))
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        columns.push((name.to_string(), vals));
    }
    Ok((features, columns))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn motor() -> FeatureMatrix {
        FeatureMatrix::new(
            "motor",
            ["weight [kg]", "voltage [V]", "current [A]", "cost [$]", "torque [Nm]"]
                .iter()
                .map(|s| Feature::parse(s))
                .collect(),
            vec![
                ("m1".into(), vec![0.1, 12.0, 2.0, 10.0, 0.1]),
                ("m2".into(), vec![0.2, 12.0, 3.0, 20.0, 0.2]),
                ("m3".into(), vec![0.3, 24.0, 4.0, 30.0, 0.3]),
            ],
        )
        .unwrap()
    }

    #[test]
    fn five_feature_motor_catalog() {
        let space = DesignSpace::new(vec![motor()]).unwrap();
        assert_eq!(space.modules().len(), 1);
        assert_eq!(space.modules()[0].len(), 3);
        assert_eq!(space.total_dim(), 3);
        assert_eq!(space.modules()[0].features()[4].unit.as_deref(), Some("Nm"));
    }

    #[test]
    fn minimal_catalog() {
        let doc = "[module.a]\nfeatures = [\"x\"]\ncomponents = [[\"only\", 0.0]]\n";
        let space = load_design_space(doc, None).unwrap();
        assert_eq!(space.total_dim(), 1);
    }

    #[test]
    fn dimension_is_sum_of_catalog_sizes() {
        let mk = |id: &str, n: usize| {
            FeatureMatrix::new(
                id,
                vec![Feature::new("x", None)],
                (0..n).map(|j| (format!("c{j}"), vec![j as f64])).collect(),
            )
            .unwrap()
        };
        let space = DesignSpace::new(vec![mk("a", 17), mk("b", 12)]).unwrap();
        assert_eq!(space.total_dim(), 29);
    }

    #[test]
    fn torque_row_and_selection() {
        let space = DesignSpace::new(vec![motor()]).unwrap();
        let row = space.feature_row("motor", "torque").unwrap();
        assert_eq!(row, vec![0.1, 0.2, 0.3]);
        let x = [false, true, false];
        let dot: f64 = row.iter().zip(&x).map(|(r, b)| if *b { *r } else { 0.0 }).sum();
        assert_eq!(dot, 0.2);
        assert_eq!(space.modules()[0].select(&x), space.modules()[0].column(1));
    }

    #[test]
    fn load_errors_name_their_location() {
        let ragged = "[module.m]\nfeatures = [\"a\", \"b\"]\ncomponents = [[\"x\", 1.0]]\n";
        assert!(matches!(
            load_design_space(ragged, None),
            Err(CatalogError::RaggedColumn { ref module, ref component, expected: 2, found: 1 })
                if module == "m" && component == "x"
        ));
        let dup = "[module.m]\nfeatures = [\"a\", \"a\"]\ncomponents = [[\"x\", 1.0, 2.0]]\n";
        assert!(matches!(
            load_design_space(dup, None),
            Err(CatalogError::DuplicateFeature { .. })
        ));
        let dupc = "[module.m]\nfeatures = [\"a\"]\ncomponents = [[\"x\", 1.0], [\"x\", 2.0]]\n";
        assert!(matches!(
            load_design_space(dupc, None),
            Err(CatalogError::DuplicateComponent { .. })
        ));
        let empty = "[module.m]\nfeatures = [\"a\"]\ncomponents = []\n";
        assert!(matches!(
            load_design_space(empty, None),
            Err(CatalogError::EmptyCatalog(_))
        ));
        let nan = "[module.m]\nfeatures = [\"a\"]\ncomponents = [[\"x\", nan]]\n";
        assert!(matches!(
            load_design_space(nan, None),
            Err(CatalogError::NonFinite { .. })
        ));
        let bad = "[module.m]\nfeatures = [\"a\"]\ncomponents = [[\"x\", \"q\"]]\n";
        match load_design_space(bad, None) {
            Err(CatalogError::Schema { location, .. }) => assert_eq!(location, "module.m.components[0][1]"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn enumeration_counts_and_order() {
        let mk = |id: &str, n: usize| {
            FeatureMatrix::new(id, vec![], (0..n).map(|j| (format!("c{j}"), vec![])).collect()).unwrap()
        };
        let space = DesignSpace::new(vec![mk("a", 2), mk("b", 3)]).unwrap();
        let designs: Vec<_> = enumerate_designs(&space, DEFAULT_ENUM_CAP).unwrap().collect();
        assert_eq!(designs.len(), 6);
        assert_eq!(designs[0].choices(), vec![Some(0), Some(0)]);
        assert_eq!(designs[1].choices(), vec![Some(0), Some(1)]);
        assert_eq!(designs[5].choices(), vec![Some(1), Some(2)]);

        let space = DesignSpace::new(vec![mk("a", 3), mk("b", 3), mk("c", 3)]).unwrap();
        let designs: Vec<_> = enumerate_designs(&space, DEFAULT_ENUM_CAP).unwrap().collect();
        assert_eq!(designs.len(), 27);
        let distinct: std::collections::HashSet<_> = designs.iter().collect();
        assert_eq!(distinct.len(), 27);
        for d in &designs {
            assert!(d.blocks().iter().all(|b| b.iter().filter(|v| **v).count() == 1));
        }
        assert!(matches!(
            enumerate_designs(&space, 26),
            Err(CatalogError::EnumerationCap { count: 27, cap: 26 })
        ));
    }

    #[test]
    fn multi_robot_per_robot_combinations() {
        let mk = |id: &str, n: usize| {
            FeatureMatrix::new(id, vec![], (0..n).map(|j| (format!("c{j}"), vec![])).collect()).unwrap()
        };
        let space = DesignSpace::new(vec![
            mk("frame", 2),
            mk("sensor", 10),
            mk("motor", 10),
            mk("battery", 10),
        ])
        .unwrap();
        assert_eq!(space.design_count(), 2_000);
    }

    #[test]
    fn optional_modules_enumerate_none_last() {
        let m = FeatureMatrix::new("s", vec![], vec![("a".into(), vec![]), ("b".into(), vec![])])
            .unwrap()
            .with_optional(true);
        let space = DesignSpace::new(vec![m]).unwrap();
        let designs: Vec<_> = enumerate_designs(&space, 10).unwrap().map(|d| d.choices()).collect();
        assert_eq!(
            designs,
            vec![Some(0), Some(1), None]
                .into_iter()
                .map(|c| vec![c])
                .collect::<Vec<_>>()
        );
        for (i, d) in designs.iter().enumerate() {
            assert_eq!(space.design_index(d), i as u128);
        }
    }

    #[test]
    fn toml_round_trip() {
        let space = DesignSpace::new(vec![motor(), motor_named("wheel")]).unwrap();
        let text = space.to_toml_string();
        let back = load_design_space(&text, None).unwrap();
        assert_eq!(space, back);
    }

    fn motor_named(id: &str) -> FeatureMatrix {
        let m = motor();
        let cols = (0..m.len())
            .map(|j| (m.component_names()[j].clone(), m.column(j)))
            .collect();
        FeatureMatrix::new(id, m.features().to_vec(), cols)
            .unwrap()
            .with_optional(true)
    }
}
