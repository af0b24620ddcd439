//! Flat `key = value` experiment configuration.
//!
//! Every key is optional and has a default. Unknown keys are rejected with a
//! spelling suggestion, and all violations are reported together.

use std::fmt;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rnls::grid::{SpatialGrid, WaveField};
use rnls::markov::{InitialLaw, MarkovModel};
use rnls::potential::{
    make_amplitude_family, make_gauge_family, make_translate_family, HartreeKernel, PotentialFamily, Shape, ShapeParams,
};
use rnls::propagator::{SolverConfig, SplitOrder};
use rnls::verify::Preset;
use serde::{Deserialize, Serialize};

/// Keys accepted in a config file, in documentation order.
pub const KNOWN_KEYS: &[&str] = &[
    "experiment",
    "dim",
    "n",
    "length",
    "generator",
    "rate",
    "states",
    "generator_rows",
    "initial_law",
    "initial_state",
    "initial_probabilities",
    "shape",
    "amplitude",
    "width",
    "center",
    "family",
    "amplitudes",
    "shifts",
    "offsets",
    "psi_sigma",
    "psi_center",
    "psi_momentum",
    "dt",
    "order",
    "epsilon",
    "chi",
    "chi_width",
    "horizon",
    "sample_every",
    "sample_times",
    "paths",
    "seed",
    "window_radius",
    "preset",
    "fit_input",
    "fit_column",
    "fit_window",
];

pub const EXPERIMENTS: &[&str] =
    &["path", "average", "liouville", "ensemble", "spectrum", "kb-scan", "verify-all", "fit-decay"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Option<String>,

    pub dim: usize,
    pub n: usize,
    pub length: f64,

    /// `two_state`, `complete_graph`, `trivial`, `rows`, or a path to a CSV matrix.
    pub generator: String,
    pub rate: f64,
    /// State count for `complete_graph`.
    pub states: usize,
    pub generator_rows: Option<Vec<Vec<f64>>>,
    /// `uniform`, `dirac` or `custom`.
    pub initial_law: String,
    pub initial_state: usize,
    pub initial_probabilities: Option<Vec<f64>>,

    pub shape: String,
    pub amplitude: f64,
    pub width: f64,
    pub center: f64,
    /// `amplitude`, `translate`, `gauge` or `uniform`.
    pub family: String,
    pub amplitudes: Vec<f64>,
    pub shifts: Vec<i64>,
    pub offsets: Vec<f64>,

    pub psi_sigma: f64,
    pub psi_center: f64,
    pub psi_momentum: f64,

    pub dt: f64,
    pub order: u32,
    pub epsilon: f64,
    /// `gaussian`, `delta` or `none`.
    pub chi: String,
    pub chi_width: f64,
    pub horizon: f64,
    pub sample_every: usize,
    pub sample_times: Option<Vec<f64>>,

    pub paths: usize,
    pub seed: u64,

    pub window_radius: f64,
    pub preset: String,

    pub fit_input: Option<String>,
    pub fit_column: String,
    pub fit_window: Vec<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: None,
            dim: 1,
            n: 64,
            length: 20.0,
            generator: "two_state".into(),
            rate: 1.0,
            states: 2,
            generator_rows: None,
            initial_law: "uniform".into(),
            initial_state: 0,
            initial_probabilities: None,
            shape: "gaussian".into(),
            amplitude: -2.0,
            width: 1.0,
            center: 0.0,
            family: "amplitude".into(),
            amplitudes: vec![-0.5, 0.5],
            shifts: Vec::new(),
            offsets: Vec::new(),
            psi_sigma: 1.0,
            psi_center: -2.0,
            psi_momentum: 1.0,
            dt: 0.01,
            order: 2,
            epsilon: 0.0,
            chi: "gaussian".into(),
            chi_width: 1.0,
            horizon: 2.0,
            sample_every: 10,
            sample_times: None,
            paths: 1000,
            seed: 0,
            window_radius: 3.0,
            preset: "full".into(),
            fit_input: None,
            fit_column: "suml2linf".into(),
            fit_window: vec![5.0, 50.0],
        }
    }
}

/// Every problem found in a config file.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub violations: Vec<String>,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "invalid configuration:")?;
        for v in &self.violations {
            writeln!(f, "  - {v}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigError {}

fn suggestion(key: &str) -> Option<&'static str> {
    KNOWN_KEYS
        .iter()
        .map(|k| (k, strsim::damerau_levenshtein(key, k)))
        .filter(|&(k, d)| d <= 3 && d < k.len().max(key.len()))
        .min_by_key(|&(_, d)| d)
        .map(|(k, _)| *k)
}

/// A parsed, validated configuration together with the directory that
/// relative paths inside it refer to.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub base_dir: PathBuf,
}

pub fn parse_config_str(text: &str, base_dir: &Path) -> Result<LoadedConfig, ConfigError> {
    let table: toml::Table =
        text.parse().map_err(|e: toml::de::Error| ConfigError { violations: vec![e.to_string()] })?;
    let mut violations = Vec::new();
    for key in table.keys() {
        if !KNOWN_KEYS.contains(&key.as_str()) {
            violations.push(match suggestion(key) {
                Some(s) => format!("unknown key `{key}` (did you mean `{s}`?)"),
                None => format!("unknown key `{key}`"),
            });
        }
    }
    if !violations.is_empty() {
        return Err(ConfigError { violations });
    }
    let config: ExperimentConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| ConfigError { violations: vec![e.to_string()] })?;
    let loaded = LoadedConfig { config, base_dir: base_dir.to_path_buf() };
    let problems = loaded.validate();
    if problems.is_empty() {
        Ok(loaded)
    } else {
        Err(ConfigError { violations: problems })
    }
}

pub fn parse_config(path: &Path) -> Result<LoadedConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError { violations: vec![format!("cannot read {}: {e}", path.display())] })?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_config_str(&text, &base)
}

impl LoadedConfig {
    pub fn defaults() -> Self {
        Self { config: ExperimentConfig::default(), base_dir: PathBuf::new() }
    }

    pub fn resolve(&self, p: &str) -> PathBuf {
        let path = Path::new(p);
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    /// Every cross-key and range problem, or an empty list.
    pub fn validate(&self) -> Vec<String> {
        let c = &self.config;
        let mut v = Vec::new();
        if let Some(e) = &c.experiment {
            if !EXPERIMENTS.contains(&e.as_str()) {
                v.push(format!("`experiment` = {e:?} is not one of {}", EXPERIMENTS.join(", ")));
            }
        }
        if let Err(e) = SpatialGrid::new(c.dim, c.n, c.length) {
            v.push(format!("`dim`/`n`/`length`: {e}"));
        }
        if !(c.rate.is_finite() && c.rate > 0.0) {
            v.push(format!("`rate` must be > 0, got {}", c.rate));
        }
        let m = match self.generator_matrix() {
            Ok(a) => Some(a.nrows()),
            Err(e) => {
                v.push(e);
                None
            }
        };
        if let Some(m) = m {
            match c.initial_law.as_str() {
                "uniform" => {}
                "dirac" if c.initial_state < m => {}
                "dirac" => v.push(format!("`initial_state` = {} but the generator has {m} states", c.initial_state)),
                "custom" => match &c.initial_probabilities {
                    Some(p) if p.len() != m => v.push(format!(
                        "`initial_probabilities` has {} entries but the generator has {m} states",
                        p.len()
                    )),
                    Some(p) if p.iter().any(|x| !(*x >= 0.0)) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-9 => {
                        v.push("`initial_probabilities` must be nonnegative and sum to 1".into())
                    }
                    Some(_) => {}
                    None => v.push("`initial_law` = \"custom\" needs `initial_probabilities`".into()),
                },
                other => v.push(format!("`initial_law` = {other:?} (expected uniform, dirac or custom)")),
            }
            let per_state = |key: &str, len: usize, v: &mut Vec<String>| {
                if len != m {
                    v.push(format!("`{key}` has {len} entries but `states` (the generator) has {m}"));
                }
            };
            match c.family.as_str() {
                "amplitude" => per_state("amplitudes", c.amplitudes.len(), &mut v),
                "translate" => per_state("shifts", c.shifts.len(), &mut v),
                "gauge" => per_state("offsets", c.offsets.len(), &mut v),
                "uniform" => {}
                other => v.push(format!("`family` = {other:?} (expected amplitude, translate, gauge or uniform)")),
            }
        }
        if let Err(e) = c.shape.parse::<Shape>() {
            v.push(format!("`shape`: {e}"));
        }
        if !(c.width > 0.0) {
            v.push(format!("`width` must be > 0, got {}", c.width));
        }
        if !(c.psi_sigma > 0.0) {
            v.push(format!("`psi_sigma` must be > 0, got {}", c.psi_sigma));
        }
        if !(c.dt > 0.0 && c.dt.is_finite()) {
            v.push(format!("`dt` must be > 0, got {}", c.dt));
        }
        if SplitOrder::from_order(c.order).is_err() {
            v.push(format!("`order` must be 1 or 2, got {}", c.order));
        }
        if !c.epsilon.is_finite() {
            v.push("`epsilon` must be finite".into());
        }
        if !["gaussian", "delta", "none"].contains(&c.chi.as_str()) {
            v.push(format!("`chi` = {:?} (expected gaussian, delta or none)", c.chi));
        }
        if !(c.chi_width > 0.0) {
            v.push(format!("`chi_width` must be > 0, got {}", c.chi_width));
        }
        if !(c.horizon > 0.0 && c.horizon.is_finite()) {
            v.push(format!("`horizon` must be > 0, got {}", c.horizon));
        }
        if c.sample_every == 0 {
            v.push("`sample_every` must be >= 1".into());
        }
        if let Some(times) = &c.sample_times {
            if let Err(e) = rnls::propagator::validate_schedule(c.dt, times) {
                v.push(format!("`sample_times`: {e}"));
            }
        }
        if c.paths == 0 {
            v.push("`paths` must be >= 1".into());
        }
        if !(c.window_radius > 0.0) {
            v.push(format!("`window_radius` must be > 0, got {}", c.window_radius));
        }
        if let Err(e) = c.preset.parse::<Preset>() {
            v.push(format!("`preset`: {e}"));
        }
        if c.fit_window.len() != 2 || !(c.fit_window[0] > 0.0 && c.fit_window[1] > c.fit_window[0]) {
            v.push(format!("`fit_window` must be [t0, t1] with 0 < t0 < t1, got {:?}", c.fit_window));
        }
        if let Some(p) = &c.fit_input {
            if !self.resolve(p).is_file() {
                v.push(format!("`fit_input` file {} does not exist", self.resolve(p).display()));
            }
        }
        v
    }

    pub fn generator_matrix(&self) -> Result<DMatrix<f64>, String> {
        let c = &self.config;
        let rows: Vec<Vec<f64>> = match c.generator.as_str() {
            "two_state" => vec![vec![c.rate, -c.rate], vec![-c.rate, c.rate]],
            "complete_graph" => {
                if c.states == 0 {
                    return Err("`states` must be >= 1".into());
                }
                let m = c.states;
                (0..m)
                    .map(|i| (0..m).map(|j| if i == j { c.rate * (m as f64 - 1.0) } else { -c.rate }).collect())
                    .collect()
            }
            "trivial" => vec![vec![0.0]],
            "rows" => c.generator_rows.clone().ok_or("`generator` = \"rows\" needs `generator_rows`")?,
            file => {
                let path = self.resolve(file);
                let f = std::fs::File::open(&path)
                    .map_err(|e| format!("`generator` file {} cannot be opened: {e}", path.display()))?;
                rnls::io::read_matrix_csv(f).map_err(|e| format!("`generator` file {}: {e}", path.display()))?
            }
        };
        let m = rows.len();
        if m == 0 || rows.iter().any(|r| r.len() != m) {
            return Err(format!("`generator` must be a square matrix, got {m} rows"));
        }
        let a = DMatrix::from_fn(m, m, |i, j| rows[i][j]);
        MarkovModel::new(a.clone(), InitialLaw::uniform(m)).map_err(|e| format!("`generator`: {e}"))?;
        Ok(a)
    }

    pub fn preset(&self) -> Preset {
        self.config.preset.parse().unwrap_or(Preset::Full)
    }
}

/// The numerical objects described by a validated config.
pub struct Setup {
    pub grid: SpatialGrid,
    pub model: MarkovModel,
    pub family: PotentialFamily,
    pub kernel: HartreeKernel,
    pub psi0: WaveField,
    pub solver: SolverConfig,
}

impl LoadedConfig {
    pub fn setup(&self) -> anyhow::Result<Setup> {
        let c = &self.config;
        let grid = SpatialGrid::new(c.dim, c.n, c.length)?;
        let a = self.generator_matrix().map_err(anyhow::Error::msg)?;
        let m = a.nrows();
        let law = match c.initial_law.as_str() {
            "dirac" => InitialLaw::Dirac(c.initial_state),
            "custom" => InitialLaw::Distribution(c.initial_probabilities.clone().unwrap_or_default()),
            _ => InitialLaw::uniform(m),
        };
        let model = MarkovModel::new(a, law)?;
        let mut params = ShapeParams::new(c.shape.parse()?, c.amplitude, c.width);
        params.center = vec![c.center];
        let base = params.sample(&grid);
        let family = match c.family.as_str() {
            "amplitude" => make_amplitude_family(grid, &base, &base, &c.amplitudes)?,
            "translate" => {
                let shifts: Vec<Vec<i64>> = c
                    .shifts
                    .iter()
                    .map(|&s| std::iter::once(s).chain(std::iter::repeat_n(0, c.dim - 1)).collect())
                    .collect();
                make_translate_family(grid, &base, &shifts)?
            }
            "gauge" => make_gauge_family(grid, &base, &c.offsets)?,
            _ => PotentialFamily::uniform(grid, &base, m)?,
        };
        let kernel = match c.chi.as_str() {
            "gaussian" => HartreeKernel::gaussian(grid, c.chi_width, c.epsilon)?,
            "delta" => HartreeKernel::delta(grid, c.epsilon)?,
            _ => HartreeKernel::none(grid),
        };
        let (sigma, center, k) = (c.psi_sigma, c.psi_center, c.psi_momentum);
        let psi0 = WaveField::from_fn(grid, |x| {
            let r2: f64 =
                x.iter().enumerate().map(|(a, &xa)| if a == 0 { (xa - center).powi(2) } else { xa * xa }).sum();
            Complex64::from_polar((-r2 / (2.0 * sigma * sigma)).exp(), k * x[0])
        })
        .normalized();
        let order = SplitOrder::from_order(c.order)?;
        let solver = match &c.sample_times {
            Some(t) => SolverConfig::new(c.dt, order, t.clone()),
            None => SolverConfig::uniform(c.dt, order, c.horizon, c.sample_every)?,
        };
        Ok(Setup { grid, model, family, kernel, psi0, solver })
    }
}
