//! Problem lookup: registry names or JSON problem files.
//!
//! A problem file describes a linear or l1 objective over an affine set:
//!
//! ```json
//! { "name": "lp3", "objective": "linear:1,-2,0.5", "A": [[1, 1, 1]], "b": [1],
//!   "kernel": "entropy", "x0": [0.2, 0.3, 0.5] }
//! ```
//!
//! `objective` is `linear:<c>`, `l1:<a>` or `zero`. Without `x0`, simplex-type
//! constraints `alpha * sum x = beta` start at the barycenter.

use std::path::Path;
use std::sync::Arc;

use barrierflow_core::geometry::{AffineManifold, Manifold, OpenRegion, RegionKind};
use barrierflow_core::kernels::BarrierKernel;
use barrierflow_core::oracles::{registry_get_dim, L1Distance, Linear, Problem, SubgradientOracle, Zero};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};
use crate::settings::parse_f64_list;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub name: String,
    pub objective: String,
    #[serde(rename = "A", default)]
    pub a: Vec<Vec<f64>>,
    #[serde(default)]
    pub b: Vec<f64>,
    pub kernel: Option<String>,
    pub x0: Option<Vec<f64>>,
    #[serde(default)]
    pub mfcq: bool,
}

/// A resolved problem plus the bytes its content hash is taken over.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub problem: Problem,
    pub kernel: BarrierKernel,
    pub content: String,
}

impl Resolved {
    pub fn hash(&self) -> String {
        git_blob_hash(self.content.as_bytes())
    }
}

/// `sha256("blob <len>\0" ++ data)`, as git computes object ids.
pub fn git_blob_hash(data: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", data.len()).as_bytes());
    h.update(data);
    format!("{:x}", h.finalize())
}

pub fn parse_kernel(id: &str) -> CliResult<BarrierKernel> {
    id.parse::<BarrierKernel>().map_err(CliError::from)
}

pub fn resolve(
    name: Option<&str>,
    file: Option<&Path>,
    dim: Option<usize>,
    kernel: Option<&str>,
) -> CliResult<Resolved> {
    let problem = match (name, file) {
        (Some(_), Some(_)) => {
            return Err(CliError::Config(
                "give either --problem or --problem-file, not both".into(),
            ))
        }
        (None, None) => return Err(CliError::Config("missing --problem or --problem-file".into())),
        (Some(name), None) => registry_get_dim(name, dim)?,
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("cannot read problem file `{}`: {e}", path.display())))?;
            let spec: ProblemFile = serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("invalid problem file `{}`: {e}", path.display())))?;
            from_file(&spec)?
        }
    };
    let kernel = match kernel {
        Some(id) => parse_kernel(id)?,
        None => problem.kernel,
    };
    if OpenRegion::for_kernel(&kernel).kind != problem.region.kind {
        return Err(CliError::Config(format!(
            "kernel `{}` does not live on the region of `{}`",
            kernel.id(),
            problem.name
        )));
    }
    let problem = problem.with_kernel(kernel);
    let content = describe(&problem);
    Ok(Resolved {
        problem,
        kernel,
        content,
    })
}

fn from_file(spec: &ProblemFile) -> CliResult<Problem> {
    let bad = |msg: String| CliError::Config(format!("problem file `{}`: {msg}", spec.name));
    let kernel = parse_kernel(spec.kernel.as_deref().unwrap_or("entropy"))?;
    let (kind, data) = match spec.objective.split_once(':') {
        Some((k, d)) => (k.trim(), d),
        None => (spec.objective.trim(), ""),
    };
    let data = DVector::from_vec(parse_f64_list("objective", data)?);
    let n = match (kind, spec.a.first()) {
        ("zero", Some(row)) => row.len(),
        ("zero", None) => spec.x0.as_ref().map_or(0, |x| x.len()),
        _ => data.len(),
    };
    if n == 0 {
        return Err(bad("cannot infer the dimension".into()));
    }
    let oracle: Arc<dyn SubgradientOracle> = match kind {
        "linear" => Arc::new(Linear { c: data }),
        "l1" => Arc::new(L1Distance { a: data }),
        "zero" => Arc::new(Zero { n }),
        other => return Err(bad(format!("unknown objective kind `{other}`"))),
    };
    if spec.a.iter().any(|row| row.len() != n) {
        return Err(bad(format!("every row of A needs {n} entries")));
    }
    if spec.b.len() != spec.a.len() {
        return Err(bad("A and b have different numbers of rows".into()));
    }
    let a = DMatrix::from_fn(spec.a.len(), n, |i, j| spec.a[i][j]);
    let b = DVector::from_column_slice(&spec.b);
    let manifold = AffineManifold::new(a.clone(), b.clone())?;
    let region = OpenRegion::for_kernel(&kernel);
    let x0 = match &spec.x0 {
        Some(x) if x.len() == n => DVector::from_column_slice(x),
        Some(_) => return Err(bad(format!("x0 needs {n} entries"))),
        None => {
            default_start(&a, &b, region.kind).ok_or_else(|| bad("x0 is required for this constraint set".into()))?
        }
    };
    let manifold = Manifold::Affine(manifold);
    if !region.contains(&x0) || !manifold.contains(&x0, 1e-9) {
        return Err(bad("x0 must be interior and satisfy A x0 = b".into()));
    }
    Ok(Problem {
        name: spec.name.clone(),
        oracle,
        manifold,
        region,
        kernel,
        initial_point: x0,
        known_points: Vec::new(),
        mfcq: spec.mfcq,
    })
}

fn default_start(a: &DMatrix<f64>, b: &DVector<f64>, kind: RegionKind) -> Option<DVector<f64>> {
    let n = a.ncols();
    match (a.nrows(), kind) {
        (0, RegionKind::Orthant) => Some(DVector::from_element(n, 1.0)),
        (0, RegionKind::UnitBall) => Some(DVector::zeros(n)),
        (1, RegionKind::Orthant) => {
            let alpha = a[(0, 0)];
            (alpha != 0.0 && a.iter().all(|&t| t == alpha) && b[0] / alpha > 0.0)
                .then(|| DVector::from_element(n, b[0] / (alpha * n as f64)))
        }
        _ => None,
    }
}

#[derive(Serialize)]
struct Description<'a> {
    name: &'a str,
    dim: usize,
    kernel: String,
    region: String,
    manifold: String,
    #[serde(rename = "A")]
    a: Option<Vec<Vec<f64>>>,
    b: Option<Vec<f64>>,
    objective: String,
    initial_point: Vec<f64>,
}

/// Canonical JSON text of everything that defines the problem.
pub fn describe(p: &Problem) -> String {
    let (a, b) = match &p.manifold {
        Manifold::Affine(m) => (
            Some(
                (0..m.a().nrows())
                    .map(|i| m.a().row(i).iter().cloned().collect())
                    .collect(),
            ),
            Some(m.b().iter().cloned().collect()),
        ),
        Manifold::Nonlinear(_) => (None, None),
    };
    let d = Description {
        name: &p.name,
        dim: p.dim(),
        kernel: p.kernel.id(),
        region: format!("{:?}", p.region.kind),
        manifold: p.manifold.name(),
        a,
        b,
        objective: format!("{:?}", p.oracle),
        initial_point: p.initial_point.iter().cloned().collect(),
    };
    serde_json::to_string(&d).expect("problem description serializes")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_matches_git_convention() {
        // printf 'blob 6\0hello\n' | sha256sum
        assert_eq!(
            git_blob_hash(b"hello\n"),
            "2cf8d83d9ee29543b34a87727421fdecb7e3f3a183d337639025de576db9ebb4"
        );
    }

    #[test]
    fn registry_and_file_problems() {
        let r = resolve(Some("lin-simplex"), None, Some(3), None).unwrap();
        assert_eq!(r.problem.dim(), 3);
        assert_eq!(
            r.hash(),
            resolve(Some("lin-simplex"), None, Some(3), None).unwrap().hash()
        );
        assert_ne!(
            r.hash(),
            resolve(Some("lin-simplex"), None, Some(2), None).unwrap().hash()
        );
        assert!(matches!(
            resolve(Some("nope"), None, None, None),
            Err(CliError::Config(_))
        ));
        assert!(matches!(
            resolve(Some("ball-abs"), None, None, Some("entropy")),
            Err(CliError::Config(_))
        ));

        let spec: ProblemFile =
            serde_json::from_str(r#"{"name": "lp", "objective": "linear:1,0,2", "A": [[2, 2, 2]], "b": [2]}"#).unwrap();
        let p = from_file(&spec).unwrap();
        assert!((p.initial_point.sum() - 1.0).abs() < 1e-15);
    }
}
