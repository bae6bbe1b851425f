//! Run configuration: parameter box, window of interest, coefficient family,
//! mesh size, tolerances and grid levels.
//!
//! The on-disk format is TOML with four tables:
//!
//! ```toml
//! [problem]
//! box = [[0.4, 1.0]]          # one [a, b] pair per parameter axis
//! window = [0.0, 270.0]       # [lambda_min, lambda_max]
//! c11 = "mu1^-2"
//! c12 = "1"
//! c21 = "1"
//! c22 = "0.7^-2"
//! mesh_n = 65
//!
//! [tolerances]
//! w1 = 1.0
//! w2 = 200.0
//! t_pi = 0.21
//! t_lambda = 0.001
//!
//! [grid]
//! initial_level = 1
//! max_level = 10
//!
//! [output]
//! cache_dir = "cache"
//! output_dir = "out"
//! ```

use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::expr::{Expr, ExprError};
use crate::grid::ParamBox;

pub const DEFAULT_MESH_N: usize = 65;
pub const DEFAULT_MAX_LEVEL: u32 = 10;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid value for `{key}`: {reason}")]
    Invalid { key: &'static str, reason: String },
    #[error("cannot parse expression `{key}`: {source}")]
    Expr { key: &'static str, source: ExprError },
}

#[derive(Debug, Error)]
pub enum CoeffError {
    #[error("coefficient evaluation failed: {0}")]
    Expr(#[from] ExprError),
    #[error("coefficient matrix is not positive definite at mu = {mu:?} (trace {trace}, det {det})")]
    NotSpd { mu: Vec<f64>, trace: f64, det: f64 },
}

/// Eigenvalue window of interest `[min, max]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Window {
    pub min: f64,
    pub max: f64,
}

impl Window {
    pub fn new(min: f64, max: f64) -> Self {
        Window { min, max }
    }

    pub fn contains(&self, lambda: f64) -> bool {
        lambda >= self.min && lambda <= self.max
    }

    pub fn width(&self) -> f64 {
        self.max - self.min
    }
}

/// Symmetric 2x2 matrix `[[xx, xy], [xy, yy]]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymMat2 {
    pub xx: f64,
    pub xy: f64,
    pub yy: f64,
}

impl SymMat2 {
    pub const IDENTITY: SymMat2 = SymMat2 { xx: 1.0, xy: 0.0, yy: 1.0 };

    pub fn new(xx: f64, xy: f64, yy: f64) -> Self {
        SymMat2 { xx, xy, yy }
    }

    pub fn trace(&self) -> f64 {
        self.xx + self.yy
    }

    pub fn det(&self) -> f64 {
        self.xx * self.yy - self.xy * self.xy
    }

    pub fn is_spd(&self) -> bool {
        self.trace() > 0.0 && self.det() > 0.0
    }

    pub fn scale(&self, s: f64) -> Self {
        SymMat2 { xx: s * self.xx, xy: s * self.xy, yy: s * self.yy }
    }

    /// `gᵀ C h` for 2-vectors.
    #[inline]
    pub fn bilinear(&self, g: [f64; 2], h: [f64; 2]) -> f64 {
        g[0] * (self.xx * h[0] + self.xy * h[1]) + g[1] * (self.xy * h[0] + self.yy * h[1])
    }
}

/// Entries of the diffusion matrix as expressions of the parameters.
///
/// `c12` and `c21` must be syntactically identical; only `c12` is evaluated.
#[derive(Debug, Clone, PartialEq)]
pub struct CoeffSpec {
    pub c11: Expr,
    pub c12: Expr,
    pub c21: Expr,
    pub c22: Expr,
}

impl CoeffSpec {
    pub fn identity() -> Self {
        CoeffSpec {
            c11: Expr::constant(1.0),
            c12: Expr::constant(0.0),
            c21: Expr::constant(0.0),
            c22: Expr::constant(1.0),
        }
    }

    pub fn parse(c11: &str, c12: &str, c21: &str, c22: &str) -> Result<Self, ConfigError> {
        let p = |key: &'static str, s: &str| Expr::parse(s).map_err(|source| ConfigError::Expr { key, source });
        let spec = CoeffSpec { c11: p("c11", c11)?, c12: p("c12", c12)?, c21: p("c21", c21)?, c22: p("c22", c22)? };
        if spec.c12 != spec.c21 {
            return Err(ConfigError::Invalid {
                key: "c21",
                reason: format!("must be identical to c12 (got `{}` vs `{}`)", spec.c21, spec.c12),
            });
        }
        Ok(spec)
    }

    fn check_dim(&self, dim: usize) -> Result<(), ConfigError> {
        for (key, e) in [("c11", &self.c11), ("c12", &self.c12), ("c21", &self.c21), ("c22", &self.c22)] {
            e.check_dim(dim).map_err(|source| ConfigError::Expr { key, source })?;
        }
        Ok(())
    }

    /// Canonical text used in cache fingerprints.
    pub fn canonical(&self) -> String {
        format!("c11={};c12={};c22={}", self.c11, self.c12, self.c22)
    }
}

/// Evaluates `c(mu)` and checks that it is symmetric positive definite.
pub fn eval_coefficient(spec: &CoeffSpec, mu: &[f64]) -> Result<SymMat2, CoeffError> {
    let m = SymMat2 { xx: spec.c11.eval(mu)?, xy: spec.c12.eval(mu)?, yy: spec.c22.eval(mu)? };
    if !m.is_spd() {
        return Err(CoeffError::NotSpd { mu: mu.to_vec(), trace: m.trace(), det: m.det() });
    }
    Ok(m)
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub param_box: ParamBox,
    pub window: Window,
    pub coefficient: CoeffSpec,
    pub mesh_n: usize,
    pub w1: f64,
    pub w2: f64,
    pub t_pi: f64,
    pub t_lambda: f64,
    pub initial_level: u32,
    pub max_level: u32,
    pub cache_dir: PathBuf,
    pub output_dir: PathBuf,
}

impl RunConfig {
    pub fn dim(&self) -> usize {
        self.param_box.dim()
    }

    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        parse_config(&text)
    }

    /// Checks every invariant; `parse_config` calls this, callers that build
    /// a config by hand should too.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |key, reason: String| Err(ConfigError::Invalid { key, reason });
        if self.param_box.dim() == 0 {
            return invalid("box", "at least one parameter axis is required".into());
        }
        for (k, (a, b)) in self.param_box.lower.iter().zip(&self.param_box.upper).enumerate() {
            if !(a.is_finite() && b.is_finite() && a < b) {
                return invalid("box", format!("axis {} needs a < b, got [{a}, {b}]", k + 1));
            }
        }
        if !(self.window.min.is_finite() && self.window.max.is_finite() && self.window.min < self.window.max) {
            return invalid("window", format!("needs min < max, got [{}, {}]", self.window.min, self.window.max));
        }
        if self.mesh_n < 3 {
            return invalid("mesh_n", format!("must be at least 3, got {}", self.mesh_n));
        }
        if !(self.w1 >= 0.0 && self.w1.is_finite()) {
            return invalid("w1", format!("must be a nonnegative real, got {}", self.w1));
        }
        if !(self.w2 >= 0.0 && self.w2.is_finite()) {
            return invalid("w2", format!("must be a nonnegative real, got {}", self.w2));
        }
        if self.w1 + self.w2 <= 0.0 {
            return invalid("w2", "w1 + w2 must be positive".into());
        }
        if !(self.t_pi > 0.0 && self.t_pi < 1.0) {
            return invalid("t_pi", format!("must lie in (0, 1), got {}", self.t_pi));
        }
        if !(self.t_lambda > 0.0 && self.t_lambda.is_finite()) {
            return invalid("t_lambda", format!("must be positive, got {}", self.t_lambda));
        }
        self.coefficient.check_dim(self.dim())?;
        Ok(())
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ExprSource {
    Number(f64),
    Text(String),
}

impl ExprSource {
    fn text(&self) -> String {
        match self {
            ExprSource::Number(x) => format!("{x:?}"),
            ExprSource::Text(s) => s.clone(),
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    problem: RawProblem,
    tolerances: RawTolerances,
    #[serde(default)]
    grid: RawGrid,
    #[serde(default)]
    output: RawOutput,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProblem {
    #[serde(rename = "box")]
    bbox: Vec<[f64; 2]>,
    window: [f64; 2],
    c11: ExprSource,
    c12: ExprSource,
    c21: ExprSource,
    c22: ExprSource,
    #[serde(default = "default_mesh_n")]
    mesh_n: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTolerances {
    w1: f64,
    w2: f64,
    t_pi: f64,
    t_lambda: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    #[serde(default = "default_initial_level")]
    initial_level: u32,
    #[serde(default = "default_max_level")]
    max_level: u32,
}

impl Default for RawGrid {
    fn default() -> Self {
        RawGrid { initial_level: default_initial_level(), max_level: default_max_level() }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    #[serde(default = "default_cache_dir")]
    cache_dir: PathBuf,
    #[serde(default = "default_output_dir")]
    output_dir: PathBuf,
}

impl Default for RawOutput {
    fn default() -> Self {
        RawOutput { cache_dir: default_cache_dir(), output_dir: default_output_dir() }
    }
}

fn default_mesh_n() -> usize {
    DEFAULT_MESH_N
}
fn default_initial_level() -> u32 {
    1
}
fn default_max_level() -> u32 {
    DEFAULT_MAX_LEVEL
}
fn default_cache_dir() -> PathBuf {
    PathBuf::from("cache")
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// Parses and validates a TOML run configuration.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let raw: RawConfig = toml::from_str(text)?;
    let p = raw.problem;
    let coefficient = CoeffSpec::parse(&p.c11.text(), &p.c12.text(), &p.c21.text(), &p.c22.text())?;
    let cfg = RunConfig {
        param_box: ParamBox::new(p.bbox.iter().map(|r| r[0]).collect(), p.bbox.iter().map(|r| r[1]).collect()),
        window: Window::new(p.window[0], p.window[1]),
        coefficient,
        mesh_n: p.mesh_n,
        w1: raw.tolerances.w1,
        w2: raw.tolerances.w2,
        t_pi: raw.tolerances.t_pi,
        t_lambda: raw.tolerances.t_lambda,
        initial_level: raw.grid.initial_level,
        max_level: raw.grid.max_level,
        cache_dir: raw.output.cache_dir,
        output_dir: raw.output.output_dir,
    };
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) const PAPER_1D: &str = r#"
[problem]
box = [[0.4, 1.0]]
window = [0.0, 270.0]
c11 = "mu1^-2"
c12 = "1"
c21 = "1"
c22 = "0.7^-2"

[tolerances]
w1 = 1.0
w2 = 200.0
t_pi = 0.21
t_lambda = 0.001
"#;

    const PAPER_2D: &str = r#"
[problem]
box = [[0.8, 1.05], [0.8, 1.05]]
window = [0.0, 120.0]
c11 = "mu1^-2"
c12 = "0.8 * mu2^-1"
c21 = "0.8 * mu2^-1"
c22 = "mu2^-2"

[tolerances]
w1 = 1.0
w2 = 200.0
t_pi = 0.57
t_lambda = 0.015
"#;

    #[test]
    fn parses_paper_configs() {
        let c = parse_config(PAPER_1D).unwrap();
        assert_eq!(c.dim(), 1);
        assert_eq!(c.param_box.lower, vec![0.4]);
        assert_eq!(c.param_box.upper, vec![1.0]);
        assert_eq!(c.window, Window::new(0.0, 270.0));
        assert_eq!(c.mesh_n, DEFAULT_MESH_N);
        assert_eq!(c.initial_level, 1);
        assert_eq!(c.max_level, DEFAULT_MAX_LEVEL);

        let c = parse_config(PAPER_2D).unwrap();
        assert_eq!(c.dim(), 2);
        assert_eq!(c.t_pi, 0.57);
        assert_eq!(c.t_lambda, 0.015);
    }

    #[test]
    fn empty_window_is_rejected() {
        let text = PAPER_1D.replace("window = [0.0, 270.0]", "window = [5.0, 5.0]");
        match parse_config(&text) {
            Err(ConfigError::Invalid { key, .. }) => assert_eq!(key, "window"),
            other => panic!("expected window error, got {other:?}"),
        }
    }

    #[test]
    fn schema_errors_name_the_key() {
        let text = PAPER_1D.replace("t_pi = 0.21\n", "");
        let err = parse_config(&text).unwrap_err().to_string();
        assert!(err.contains("t_pi"), "{err}");

        let text = PAPER_1D.replace("[problem]", "[problem]\nbogus = 1");
        let err = parse_config(&text).unwrap_err().to_string();
        assert!(err.contains("bogus"), "{err}");
    }

    #[test]
    fn invariant_violations() {
        let cases = [
            ("t_pi = 0.21", "t_pi = 1.0", "t_pi"),
            ("t_lambda = 0.001", "t_lambda = 0.0", "t_lambda"),
            ("w1 = 1.0\nw2 = 200.0", "w1 = 0.0\nw2 = 0.0", "w2"),
            ("box = [[0.4, 1.0]]", "box = [[1.0, 0.4]]", "box"),
            ("c21 = \"1\"", "c21 = \"1.0 + 0\"", "c21"),
        ];
        for (from, to, key) in cases {
            let text = PAPER_1D.replace(from, to);
            match parse_config(&text) {
                Err(ConfigError::Invalid { key: k, .. }) => assert_eq!(k, key),
                other => panic!("{to}: expected invalid {key}, got {other:?}"),
            }
        }
        let text = PAPER_1D.replace("[tolerances]", "mesh_n = 2\n[tolerances]");
        assert!(matches!(parse_config(&text), Err(ConfigError::Invalid { key: "mesh_n", .. })));
        let text = PAPER_1D.replace("c11 = \"mu1^-2\"", "c11 = \"mu2^-2\"");
        assert!(matches!(parse_config(&text), Err(ConfigError::Expr { key: "c11", .. })));
    }

    #[test]
    fn numeric_coefficients_accepted() {
        let text = PAPER_1D.replace("c12 = \"1\"", "c12 = 1").replace("c21 = \"1\"", "c21 = 1");
        let c = parse_config(&text).unwrap();
        assert_eq!(eval_coefficient(&c.coefficient, &[0.5]).unwrap().xy, 1.0);
    }

    #[test]
    fn coefficient_values() {
        let c = parse_config(PAPER_1D).unwrap();
        let m = eval_coefficient(&c.coefficient, &[0.4]).unwrap();
        assert!((m.xx - 6.25).abs() < 1e-14);
        assert_eq!(m.xy, 1.0);
        assert!((m.yy - 0.7f64.powi(-2)).abs() < 1e-14);

        let m = eval_coefficient(&CoeffSpec::identity(), &[0.123]).unwrap();
        assert_eq!(m, SymMat2::IDENTITY);

        let c = parse_config(PAPER_2D).unwrap();
        let m = eval_coefficient(&c.coefficient, &[1.0, 1.0]).unwrap();
        assert_eq!(m, SymMat2::new(1.0, 0.8, 1.0));
    }

    #[test]
    fn non_spd_rejected() {
        let spec = CoeffSpec::parse("1", "2", "2", "1").unwrap();
        assert!(matches!(eval_coefficient(&spec, &[0.0]), Err(CoeffError::NotSpd { .. })));
        let spec = CoeffSpec::parse("1/(mu1 - 0.5)", "0", "0", "1").unwrap();
        assert!(matches!(eval_coefficient(&spec, &[0.5]), Err(CoeffError::Expr(ExprError::DivisionByZero))));
    }

    #[test]
    fn spd_on_paper_boxes_and_determinism() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for text in [PAPER_1D, PAPER_2D] {
            let c = parse_config(text).unwrap();
            for _ in 0..1000 {
                let mu: Vec<f64> = (0..c.dim())
                    .map(|k| rng.random_range(c.param_box.lower[k]..=c.param_box.upper[k]))
                    .collect();
                let a = eval_coefficient(&c.coefficient, &mu).unwrap();
                let b = eval_coefficient(&c.coefficient, &mu).unwrap();
                assert_eq!(a.xx.to_bits(), b.xx.to_bits());
                assert_eq!(a.xy.to_bits(), b.xy.to_bits());
                assert_eq!(a.yy.to_bits(), b.yy.to_bits());
            }
        }
    }
}
