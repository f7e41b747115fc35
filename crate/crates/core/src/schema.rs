//! JSON formats: model specs, conditioning specs and trajectory records.
//!
//! A model is `{"family": ..., "dim": d, "params": {...}}` with families
//!
//! - `gaussian`: `{"mean": [..], "cov": [[..], ..]}`
//! - `exponential`: `{"rate": r}`, i.i.d. coordinates
//! - `gamma`: `{"shape": a, "rate": r}`, i.i.d. coordinates
//! - `product`: `{"factors": [{"family": "gaussian"|"exponential"|"gamma", "params": {..}}, ..]}`
//!   with scalar params `{"mean", "sd"}`, `{"rate"}` or `{"shape", "rate"}`
//! - `linear_pushforward`: `{"base": <model>, "matrix": [[..], ..]}`, the law of `A X`
//!
//! A conditioning spec is
//! `{"mode": "sum"|"u", "n": n, "k": k, "target": [..], "model": <model>,
//!   "umap": {"kind": "identity"} | {"kind": "linear", "matrix": [[..]]},
//!   "normalization": {"budget": b, "seed": s}}`
//! where `umap` defaults to the identity and `normalization` is optional.
//! Unknown fields are rejected; errors carry the JSON path of the offending value.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};
use crate::model::{CumulantModel, ScalarFamily, UMap};
use crate::trajectory::{ConditioningSpec, Mode, NormalizationOptions, Trajectory};

const LATTICE_FAMILIES: &[&str] = &["poisson", "binomial", "bernoulli", "geometric", "negative_binomial"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelJson {
    pub family: String,
    pub dim: usize,
    pub params: Value,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GaussianParams {
    mean: Vec<f64>,
    cov: Vec<Vec<f64>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ExponentialParams {
    rate: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GammaParams {
    shape: f64,
    rate: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NormalParams {
    mean: f64,
    sd: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScalarJson {
    family: String,
    params: Value,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ProductParams {
    factors: Vec<ScalarJson>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PushforwardParams {
    base: ModelJson,
    matrix: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeJson {
    Sum,
    U,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum UMapJson {
    Identity,
    Linear { matrix: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormalizationJson {
    pub budget: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecJson {
    pub mode: ModeJson,
    pub n: usize,
    pub k: usize,
    pub target: Vec<f64>,
    pub model: ModelJson,
    #[serde(default)]
    pub umap: Option<UMapJson>,
    #[serde(default)]
    pub normalization: Option<NormalizationJson>,
}

/// A parsed conditioning spec with its optional normalization settings.
#[derive(Debug, Clone)]
pub struct LoadedSpec {
    pub spec: ConditioningSpec,
    pub normalization: NormalizationOptions,
}

/// One trajectory per JSONL line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryRecord {
    pub steps: Vec<Vec<f64>>,
    pub log_g: Option<f64>,
    #[serde(default)]
    pub per_step: Vec<f64>,
}

impl TrajectoryRecord {
    pub fn from_trajectory(t: &Trajectory) -> Self {
        Self {
            steps: t.steps.iter().map(|y| y.as_slice().to_vec()).collect(),
            log_g: t.log_g,
            per_step: t.per_step_logs.clone(),
        }
    }

    pub fn step_vectors(&self) -> Vec<Vector> {
        self.steps.iter().map(|y| Vector::from_column_slice(y)).collect()
    }
}

fn schema_err(path: impl Into<String>, reason: impl ToString) -> Error {
    Error::Schema {
        path: path.into(),
        reason: reason.to_string(),
    }
}

fn join(prefix: &str, path: &str) -> String {
    match (prefix.is_empty(), path.is_empty() || path == ".") {
        (true, _) => path.to_string(),
        (false, true) => prefix.to_string(),
        (false, false) => format!("{prefix}.{path}"),
    }
}

fn from_value<T: DeserializeOwned>(value: &Value, prefix: &str) -> Result<T> {
    serde_path_to_error::deserialize(value).map_err(|e| schema_err(join(prefix, &e.path().to_string()), e.inner()))
}

/// Parses a JSON document, reporting the path of the first offending value.
pub fn parse_json<T: DeserializeOwned>(text: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| schema_err(e.path().to_string(), e.inner()))
}

fn matrix(rows: &[Vec<f64>], path: &str) -> Result<Matrix> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || c == 0 {
        return Err(schema_err(path, "matrix must be non-empty"));
    }
    if let Some(i) = rows.iter().position(|row| row.len() != c) {
        return Err(schema_err(format!("{path}[{i}]"), format!("expected {c} columns")));
    }
    Ok(Matrix::from_row_iterator(r, c, rows.iter().flatten().copied()))
}

fn scalar_family(s: &ScalarJson, path: &str) -> Result<ScalarFamily> {
    let params = join(path, "params");
    Ok(match s.family.as_str() {
        "gaussian" => {
            let p: NormalParams = from_value(&s.params, &params)?;
            ScalarFamily::Gaussian { mean: p.mean, sd: p.sd }
        }
        "exponential" => ScalarFamily::Exponential {
            rate: from_value::<ExponentialParams>(&s.params, &params)?.rate,
        },
        "gamma" => {
            let p: GammaParams = from_value(&s.params, &params)?;
            ScalarFamily::Gamma {
                shape: p.shape,
                rate: p.rate,
            }
        }
        other => return Err(family_error(other, &join(path, "family"))),
    })
}

fn family_error(name: &str, path: &str) -> Error {
    if LATTICE_FAMILIES.contains(&name) {
        schema_err(path, format!("lattice family `{name}` is not supported; only absolutely continuous laws"))
    } else {
        schema_err(path, format!("unknown family `{name}`"))
    }
}

/// Builds a model from its JSON description; `path` prefixes error locations.
pub fn build_model(m: &ModelJson, path: &str) -> Result<CumulantModel> {
    let params = join(path, "params");
    let wrap = |e: Error| schema_err(path, e);
    let model = match m.family.as_str() {
        "gaussian" => {
            let p: GaussianParams = from_value(&m.params, &params)?;
            if p.mean.len() != m.dim {
                return Err(schema_err(join(&params, "mean"), format!("expected {} entries", m.dim)));
            }
            let cov = matrix(&p.cov, &join(&params, "cov"))?;
            CumulantModel::gaussian(Vector::from_vec(p.mean), cov).map_err(wrap)?
        }
        "exponential" => {
            let p: ExponentialParams = from_value(&m.params, &params)?;
            CumulantModel::iid(ScalarFamily::Exponential { rate: p.rate }, m.dim).map_err(wrap)?
        }
        "gamma" => {
            let p: GammaParams = from_value(&m.params, &params)?;
            CumulantModel::iid(
                ScalarFamily::Gamma {
                    shape: p.shape,
                    rate: p.rate,
                },
                m.dim,
            )
            .map_err(wrap)?
        }
        "product" => {
            let p: ProductParams = from_value(&m.params, &params)?;
            let factors = p
                .factors
                .iter()
                .enumerate()
                .map(|(i, f)| scalar_family(f, &format!("{params}.factors[{i}]")))
                .collect::<Result<Vec<_>>>()?;
            CumulantModel::product(factors).map_err(wrap)?
        }
        "linear_pushforward" => {
            let p: PushforwardParams = from_value(&m.params, &params)?;
            let base = build_model(&p.base, &join(&params, "base"))?;
            let a = matrix(&p.matrix, &join(&params, "matrix"))?;
            CumulantModel::linear_pushforward(base, a).map_err(wrap)?
        }
        other => return Err(family_error(other, &join(path, "family"))),
    };
    if model.dim() != m.dim {
        return Err(schema_err(join(path, "dim"), format!("model has dimension {}", model.dim())));
    }
    Ok(model)
}

pub fn parse_model(text: &str) -> Result<CumulantModel> {
    build_model(&parse_json::<ModelJson>(text)?, "")
}

/// Builds a conditioning spec from its JSON description.
pub fn build_spec(s: &SpecJson) -> Result<LoadedSpec> {
    let model = build_model(&s.model, "model")?;
    let umap = match &s.umap {
        None | Some(UMapJson::Identity) => UMap::Identity,
        Some(UMapJson::Linear { matrix: rows }) => UMap::Linear(matrix(rows, "umap.matrix")?),
    };
    let mode = match (s.mode, umap) {
        (ModeJson::Sum, UMap::Identity) => Mode::Sum,
        (ModeJson::Sum, _) => return Err(schema_err("umap", "mode `sum` requires the identity map")),
        (ModeJson::U, u) => Mode::Function(u),
    };
    let target = Vector::from_column_slice(&s.target);
    let spec = ConditioningSpec::new(model, mode, s.n, s.k, target).map_err(|e| match e {
        Error::DimensionMismatch { .. } => schema_err("target", e),
        e => e,
    })?;
    let mut normalization = NormalizationOptions::default();
    if let Some(nj) = &s.normalization {
        if let Some(b) = nj.budget {
            normalization.budget = b;
        }
        if let Some(seed) = nj.seed {
            normalization.seed = seed;
        }
    }
    Ok(LoadedSpec { spec, normalization })
}

pub fn parse_spec(text: &str) -> Result<LoadedSpec> {
    build_spec(&parse_json::<SpecJson>(text)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    const GAUSS: &str = r#"{"mode": "sum", "n": 20, "k": 5, "target": [0.0, 0.0],
        "model": {"family": "gaussian", "dim": 2, "params": {"mean": [0, 0], "cov": [[1, 0.3], [0.3, 1]]}}}"#;

    fn schema_path(e: Error) -> String {
        match e {
            Error::Schema { path, .. } => path,
            other => panic!("not a schema error: {other}"),
        }
    }

    #[test]
    fn parses_gaussian_spec() {
        let l = parse_spec(GAUSS).unwrap();
        assert_eq!((l.spec.n, l.spec.k, l.spec.dim()), (20, 5, 2));
        assert!(l.spec.model.is_gaussian());
        assert_eq!(l.normalization, NormalizationOptions::default());
    }

    #[test]
    fn parses_other_families() {
        let m = parse_model(r#"{"family": "gamma", "dim": 3, "params": {"shape": 2, "rate": 1.5}}"#).unwrap();
        assert!((m.mean()[2] - 2.0 / 1.5).abs() < 1e-14);
        let m = parse_model(
            r#"{"family": "product", "dim": 2, "params": {"factors": [
                {"family": "exponential", "params": {"rate": 2}},
                {"family": "gaussian", "params": {"mean": 1, "sd": 2}}]}}"#,
        )
        .unwrap();
        assert_eq!(m.mean().as_slice(), &[0.5, 1.0]);
        let m = parse_model(
            r#"{"family": "linear_pushforward", "dim": 1, "params": {
                "base": {"family": "exponential", "dim": 2, "params": {"rate": 1}},
                "matrix": [[1, 1]]}}"#,
        )
        .unwrap();
        assert_eq!(m.mean().as_slice(), &[2.0]);
    }

    #[test]
    fn function_mode_with_linear_map() {
        let l = parse_spec(
            r#"{"mode": "u", "n": 30, "k": 10, "target": [3.0],
                "model": {"family": "exponential", "dim": 2, "params": {"rate": 1}},
                "umap": {"kind": "linear", "matrix": [[1, -1]]},
                "normalization": {"budget": 2000}}"#,
        )
        .unwrap();
        assert_eq!(l.spec.stat_dim(), 1);
        assert_eq!(l.normalization.budget, 2000);
    }

    #[test]
    fn unknown_fields_are_rejected_with_path() {
        let bad = GAUSS.replace("\"cov\"", "\"sigma\": 1, \"cov\"");
        assert_eq!(schema_path(parse_spec(&bad).unwrap_err()), "model.params.sigma");
        let bad = GAUSS.replace("\"n\": 20", "\"n\": 20, \"extra\": 1");
        assert!(matches!(parse_spec(&bad), Err(Error::Schema { .. })));
        let bad = GAUSS.replace("[[1, 0.3], [0.3, 1]]", "[[1, 0.3], [0.3]]");
        assert_eq!(schema_path(parse_spec(&bad).unwrap_err()), "model.params.cov[1]");
        let bad = GAUSS.replace("\"k\": 5", "\"k\": \"five\"");
        assert_eq!(schema_path(parse_spec(&bad).unwrap_err()), "k");
    }

    #[test]
    fn lattice_and_unknown_families_rejected() {
        let e = parse_model(r#"{"family": "poisson", "dim": 1, "params": {"rate": 1}}"#).unwrap_err();
        assert!(e.to_string().contains("lattice"), "{e}");
        assert_eq!(schema_path(e), "family");
        let e = parse_model(r#"{"family": "cauchy", "dim": 1, "params": {}}"#).unwrap_err();
        assert!(e.to_string().contains("unknown family"));
    }

    #[test]
    fn semantic_errors() {
        let bad = GAUSS.replace("\"dim\": 2", "\"dim\": 3");
        assert_eq!(schema_path(parse_spec(&bad).unwrap_err()), "model.params.mean");
        let bad = GAUSS.replace("[0.0, 0.0]", "[0.0]");
        assert_eq!(schema_path(parse_spec(&bad).unwrap_err()), "target");
        let bad = GAUSS.replace("\"k\": 5", "\"k\": 20");
        assert!(matches!(parse_spec(&bad), Err(Error::InvalidInput(_))));
        let e = parse_model(r#"{"family": "exponential", "dim": 1, "params": {"rate": -1}}"#).unwrap_err();
        assert!(matches!(e, Error::Schema { .. }));
    }

    #[test]
    fn trajectory_record_round_trip() {
        let r = TrajectoryRecord {
            steps: vec![vec![0.1, -0.2], vec![1.5, 0.25]],
            log_g: Some(-3.25),
            per_step: vec![-1.0, -2.25],
        };
        let line = serde_json::to_string(&r).unwrap();
        assert_eq!(parse_json::<TrajectoryRecord>(&line).unwrap(), r);
        assert!(parse_json::<TrajectoryRecord>(r#"{"steps": [], "log_g": null, "x": 1}"#).is_err());
    }
}
