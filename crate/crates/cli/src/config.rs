//! Line-oriented `key = value` configuration with `[sections]` (a strict
//! subset of TOML). Values are strings, booleans, numbers, number lists and
//! lists of number lists. Every parse and validation error carries the file
//! path and line number.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use invpde::advdiff::AdvDiffExperimentConfig;
use invpde::fem::AnisoTensor;
use invpde::model::MisfitKind;
use invpde::newtoncg::NewtonConfig;
use invpde::poisson::{ExperimentSeeds, PoissonExperimentConfig, StagePlan};
use invpde::posterior::EigSolver;
use invpde::prior::{PriorParams, DEFAULT_ROBIN_SCALE};

#[derive(Debug)]
pub struct ConfigError {
    pub path: PathBuf,
    pub line: usize,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {}", self.path.display(), self.line, self.message)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Str(String),
    Num(f64),
    Bool(bool),
    NumList(Vec<f64>),
    NestedNumList(Vec<Vec<f64>>),
    StrList(Vec<String>),
}

impl Value {
    fn type_name(&self) -> &'static str {
        match self {
            Value::Str(_) => "string",
            Value::Num(_) => "number",
            Value::Bool(_) => "boolean",
            Value::NumList(_) => "number list",
            Value::NestedNumList(_) => "list of number lists",
            Value::StrList(_) => "string list",
        }
    }
}

/// Parsed file: `section.key -> (value, line)`.
pub struct RawConfig {
    path: PathBuf,
    entries: BTreeMap<String, (Value, usize)>,
    /// Keys read so far, to report unknown keys at the end.
    consumed: std::cell::RefCell<std::collections::BTreeSet<String>>,
}

fn split_top_level(s: &str) -> Result<Vec<String>, String> {
    let mut parts = Vec::new();
    let mut depth = 0usize;
    let mut cur = String::new();
    let mut in_str = false;
    for c in s.chars() {
        match c {
            '"' => {
                in_str = !in_str;
                cur.push(c);
            }
            '[' if !in_str => {
                depth += 1;
                cur.push(c);
            }
            ']' if !in_str => {
                if depth == 0 {
                    return Err("unbalanced ']'".into());
                }
                depth -= 1;
                cur.push(c);
            }
            ',' if !in_str && depth == 0 => {
                parts.push(cur.trim().to_string());
                cur.clear();
            }
            _ => cur.push(c),
        }
    }
    if depth != 0 || in_str {
        return Err("unbalanced brackets or quotes".into());
    }
    if !cur.trim().is_empty() {
        parts.push(cur.trim().to_string());
    }
    Ok(parts)
}

fn parse_value(raw: &str) -> Result<Value, String> {
    let raw = raw.trim();
    if raw.is_empty() {
        return Err("empty value".into());
    }
    if let Some(stripped) = raw.strip_prefix('"') {
        let inner = stripped
            .strip_suffix('"')
            .ok_or_else(|| "unterminated string".to_string())?;
        return Ok(Value::Str(inner.to_string()));
    }
    if raw == "true" {
        return Ok(Value::Bool(true));
    }
    if raw == "false" {
        return Ok(Value::Bool(false));
    }
    if let Some(stripped) = raw.strip_prefix('[') {
        let inner = stripped
            .strip_suffix(']')
            .ok_or_else(|| "unterminated list".to_string())?;
        let items = split_top_level(inner)?;
        if items.is_empty() {
            return Ok(Value::NumList(Vec::new()));
        }
        if items[0].starts_with('[') {
            let mut rows = Vec::new();
            for item in &items {
                match parse_value(item)? {
                    Value::NumList(r) => rows.push(r),
                    other => return Err(format!("expected a number list, found {}", other.type_name())),
                }
            }
            return Ok(Value::NestedNumList(rows));
        }
        if items[0].starts_with('"') {
            let mut out = Vec::new();
            for item in &items {
                match parse_value(item)? {
                    Value::Str(s) => out.push(s),
                    other => return Err(format!("expected a string, found {}", other.type_name())),
                }
            }
            return Ok(Value::StrList(out));
        }
        let mut out = Vec::new();
        for item in &items {
            out.push(item.parse::<f64>().map_err(|e| format!("bad number {item:?}: {e}"))?);
        }
        return Ok(Value::NumList(out));
    }
    raw.parse::<f64>()
        .map(Value::Num)
        .map_err(|e| format!("bad value {raw:?}: {e}"))
}

impl RawConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
            path: path.to_path_buf(),
            line: 0,
            message: format!("cannot read config: {e}"),
        })?;
        Self::parse(path, &text)
    }

    pub fn parse(path: &Path, text: &str) -> Result<Self, ConfigError> {
        let mut entries = BTreeMap::new();
        let mut section = String::new();
        for (idx, raw_line) in text.lines().enumerate() {
            let lineno = idx + 1;
            let err = |message: String| ConfigError {
                path: path.to_path_buf(),
                line: lineno,
                message,
            };
            // Strip comments outside strings.
            let mut line = String::new();
            let mut in_str = false;
            for c in raw_line.chars() {
                if c == '"' {
                    in_str = !in_str;
                }
                if c == '#' && !in_str {
                    break;
                }
                line.push(c);
            }
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(stripped) = line.strip_prefix('[') {
                let name = stripped
                    .strip_suffix(']')
                    .ok_or_else(|| err("malformed section header".into()))?;
                section = name.trim().to_string();
                if section.is_empty() {
                    return Err(err("empty section name".into()));
                }
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err("expected 'key = value'".into()))?;
            let key = key.trim();
            if key.is_empty() {
                return Err(err("empty key".into()));
            }
            let full_key = if section.is_empty() {
                key.to_string()
            } else {
                format!("{section}.{key}")
            };
            let value = parse_value(value).map_err(|m| err(m))?;
            if entries.insert(full_key.clone(), (value, lineno)).is_some() {
                return Err(err(format!("duplicate key {full_key:?}")));
            }
        }
        Ok(RawConfig {
            path: path.to_path_buf(),
            entries,
            consumed: Default::default(),
        })
    }

    fn error(&self, line: usize, message: String) -> ConfigError {
        ConfigError { path: self.path.clone(), line, message }
    }

    fn lookup(&self, key: &str) -> Option<&(Value, usize)> {
        self.consumed.borrow_mut().insert(key.to_string());
        self.entries.get(key)
    }

    pub fn line_of(&self, key: &str) -> usize {
        self.entries.get(key).map(|e| e.1).unwrap_or(0)
    }

    pub fn str_or(&self, key: &str, default: &str) -> Result<String, ConfigError> {
        match self.lookup(key) {
            Some((Value::Str(s), _)) => Ok(s.clone()),
            Some((other, line)) => {
                Err(self.error(*line, format!("{key}: expected string, found {}", other.type_name())))
            }
            None => Ok(default.to_string()),
        }
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64, ConfigError> {
        match self.lookup(key) {
            Some((Value::Num(v), _)) => Ok(*v),
            Some((other, line)) => {
                Err(self.error(*line, format!("{key}: expected number, found {}", other.type_name())))
            }
            None => Ok(default),
        }
    }

    pub fn positive_f64_or(&self, key: &str, default: f64) -> Result<f64, ConfigError> {
        let v = self.f64_or(key, default)?;
        if v > 0.0 {
            Ok(v)
        } else {
            Err(self.error(self.line_of(key), format!("{key}: must be positive, got {v}")))
        }
    }

    pub fn usize_or(&self, key: &str, default: usize) -> Result<usize, ConfigError> {
        let v = self.f64_or(key, default as f64)?;
        if v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64 {
            Ok(v as usize)
        } else {
            Err(self.error(self.line_of(key), format!("{key}: must be a nonnegative integer, got {v}")))
        }
    }

    pub fn u64_or(&self, key: &str, default: u64) -> Result<u64, ConfigError> {
        let v = self.f64_or(key, default as f64)?;
        if v >= 0.0 && v.fract() == 0.0 {
            Ok(v as u64)
        } else {
            Err(self.error(self.line_of(key), format!("{key}: must be a nonnegative integer, got {v}")))
        }
    }

    pub fn bool_or(&self, key: &str, default: bool) -> Result<bool, ConfigError> {
        match self.lookup(key) {
            Some((Value::Bool(v), _)) => Ok(*v),
            Some((other, line)) => {
                Err(self.error(*line, format!("{key}: expected boolean, found {}", other.type_name())))
            }
            None => Ok(default),
        }
    }

    pub fn num_list_or(&self, key: &str, default: &[f64]) -> Result<Vec<f64>, ConfigError> {
        match self.lookup(key) {
            Some((Value::NumList(v), _)) => Ok(v.clone()),
            Some((other, line)) => Err(self.error(
                *line,
                format!("{key}: expected number list, found {}", other.type_name()),
            )),
            None => Ok(default.to_vec()),
        }
    }

    pub fn nested_list_or(
        &self,
        key: &str,
        default: &[Vec<f64>],
    ) -> Result<Vec<Vec<f64>>, ConfigError> {
        match self.lookup(key) {
            Some((Value::NestedNumList(v), _)) => Ok(v.clone()),
            Some((Value::NumList(v), _)) if v.is_empty() => Ok(Vec::new()),
            Some((other, line)) => Err(self.error(
                *line,
                format!("{key}: expected list of number lists, found {}", other.type_name()),
            )),
            None => Ok(default.to_vec()),
        }
    }

    pub fn str_list_or(&self, key: &str, default: &[&str]) -> Result<Vec<String>, ConfigError> {
        match self.lookup(key) {
            Some((Value::StrList(v), _)) => Ok(v.clone()),
            Some((other, line)) => Err(self.error(
                *line,
                format!("{key}: expected string list, found {}", other.type_name()),
            )),
            None => Ok(default.iter().map(|s| s.to_string()).collect()),
        }
    }

    /// Error on keys that no consumer asked for (catches typos).
    pub fn reject_unknown(&self) -> Result<(), ConfigError> {
        let consumed = self.consumed.borrow();
        for (key, (_, line)) in &self.entries {
            if !consumed.contains(key) {
                return Err(self.error(*line, format!("unknown key {key:?}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Problem {
    Poisson,
    AdvDiff,
}

pub struct RunConfig {
    pub problem: Problem,
    pub output_dir: PathBuf,
    pub stages: StagePlan,
    pub poisson: Option<PoissonExperimentConfig>,
    pub advdiff: Option<AdvDiffExperimentConfig>,
}

fn parse_stages(cfg: &RawConfig) -> Result<StagePlan, ConfigError> {
    let names = cfg.str_list_or(
        "run.stages",
        &["sample-prior", "map", "eigens", "variance", "sample-posterior"],
    )?;
    let mut plan = StagePlan {
        sample_prior: false,
        map: false,
        eigens: false,
        variance: false,
        sample_posterior: false,
    };
    for name in &names {
        match name.as_str() {
            "sample-prior" => plan.sample_prior = true,
            "map" => plan.map = true,
            "eigens" => plan.eigens = true,
            "variance" => plan.variance = true,
            "sample-posterior" => plan.sample_posterior = true,
            other => {
                return Err(ConfigError {
                    path: cfg.path.clone(),
                    line: cfg.line_of("run.stages"),
                    message: format!("unknown stage {other:?}"),
                })
            }
        }
    }
    plan.validate().map_err(|m| ConfigError {
        path: cfg.path.clone(),
        line: cfg.line_of("run.stages"),
        message: m,
    })?;
    Ok(plan)
}

fn parse_seeds(cfg: &RawConfig) -> Result<ExperimentSeeds, ConfigError> {
    Ok(ExperimentSeeds {
        obs_points: cfg.u64_or("seeds.obs_points", 1)?,
        noise: cfg.u64_or("seeds.noise", 2)?,
        prior_samples: cfg.u64_or("seeds.prior", 3)?,
        eigensolver: cfg.u64_or("seeds.eigensolver", 4)?,
        variance: cfg.u64_or("seeds.variance", 5)?,
    })
}

fn parse_prior(cfg: &RawConfig, default: PriorParams) -> Result<PriorParams, ConfigError> {
    let gamma = cfg.positive_f64_or("prior.gamma", default.gamma)?;
    let delta = cfg.positive_f64_or("prior.delta", default.delta)?;
    let robin_scale = cfg.f64_or("prior.robin_scale", DEFAULT_ROBIN_SCALE)?;
    if robin_scale < 0.0 {
        return Err(ConfigError {
            path: cfg.path.clone(),
            line: cfg.line_of("prior.robin_scale"),
            message: format!("prior.robin_scale: must be nonnegative, got {robin_scale}"),
        });
    }
    let theta = if cfg.lookup("prior.alpha").is_some()
        || cfg.lookup("prior.theta1").is_some()
        || cfg.lookup("prior.theta2").is_some()
    {
        let alpha = cfg.f64_or("prior.alpha", std::f64::consts::FRAC_PI_4)?;
        let t1 = cfg.positive_f64_or("prior.theta1", 2.0)?;
        let t2 = cfg.positive_f64_or("prior.theta2", 0.5)?;
        AnisoTensor::rotated_diag(alpha, t1, t2)
    } else {
        default.theta
    };
    Ok(PriorParams { gamma, delta, theta, robin_scale })
}

fn parse_newton(cfg: &RawConfig) -> Result<NewtonConfig, ConfigError> {
    let d = NewtonConfig::default();
    let c_armijo = cfg.positive_f64_or("newton.c_armijo", d.c_armijo)?;
    let misfit = match cfg.str_or("newton.hessian", "full")?.as_str() {
        "full" => MisfitKind::Full,
        "gauss_newton" => MisfitKind::GaussNewton,
        other => {
            return Err(ConfigError {
                path: cfg.path.clone(),
                line: cfg.line_of("newton.hessian"),
                message: format!("newton.hessian: expected \"full\" or \"gauss_newton\", got {other:?}"),
            })
        }
    };
    Ok(NewtonConfig {
        max_iter: cfg.usize_or("newton.max_iter", d.max_iter)?,
        max_backtracking_iter: cfg.usize_or("newton.max_backtracking", d.max_backtracking_iter)?,
        grad_tol: cfg.positive_f64_or("newton.grad_tol", d.grad_tol)?,
        grad_rtol: cfg.positive_f64_or("newton.grad_rtol", d.grad_rtol)?,
        c_armijo,
        misfit,
        cg_max_iter: cfg.usize_or("newton.cg_max_iter", d.cg_max_iter)?,
    })
}

fn parse_solver(cfg: &RawConfig) -> Result<EigSolver, ConfigError> {
    match cfg.str_or("eigensolver.solver", "double")?.as_str() {
        "double" => Ok(EigSolver::DoublePass),
        "single" => Ok(EigSolver::SinglePass),
        other => Err(ConfigError {
            path: cfg.path.clone(),
            line: cfg.line_of("eigensolver.solver"),
            message: format!("eigensolver.solver: expected \"double\" or \"single\", got {other:?}"),
        }),
    }
}

fn rect4(cfg: &RawConfig, key: &str, default: [f64; 4]) -> Result<[f64; 4], ConfigError> {
    let v = cfg.num_list_or(key, &default)?;
    if v.len() != 4 {
        return Err(ConfigError {
            path: cfg.path.clone(),
            line: cfg.line_of(key),
            message: format!("{key}: expected [x0, y0, x1, y1]"),
        });
    }
    Ok([v[0], v[1], v[2], v[3]])
}

pub fn load_run_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let cfg = RawConfig::load(path)?;
    let problem = match cfg.str_or("problem", "")?.as_str() {
        "poisson" => Problem::Poisson,
        "advdiff" => Problem::AdvDiff,
        "" => {
            return Err(ConfigError {
                path: path.to_path_buf(),
                line: 1,
                message: "missing required key 'problem' (\"poisson\" or \"advdiff\")".into(),
            })
        }
        other => {
            return Err(ConfigError {
                path: path.to_path_buf(),
                line: cfg.line_of("problem"),
                message: format!("problem: expected \"poisson\" or \"advdiff\", got {other:?}"),
            })
        }
    };
    let output_dir = PathBuf::from(cfg.str_or(
        "run.output_dir",
        match problem {
            Problem::Poisson => "out/poisson",
            Problem::AdvDiff => "out/advdiff",
        },
    )?);
    let stages = parse_stages(&cfg)?;
    let seeds = parse_seeds(&cfg)?;
    let threads = cfg.usize_or("run.threads", 1)?.max(1);

    let nx = cfg.usize_or("mesh.nx", 32)?;
    let ny = cfg.usize_or("mesh.ny", 32)?;
    if nx == 0 || ny == 0 {
        return Err(ConfigError {
            path: path.to_path_buf(),
            line: cfg.line_of("mesh.nx").max(cfg.line_of("mesh.ny")),
            message: "mesh.nx and mesh.ny must be at least 1".into(),
        });
    }

    let out = match problem {
        Problem::Poisson => {
            let mut pc = PoissonExperimentConfig::default();
            pc.nx = nx;
            pc.ny = ny;
            pc.state_degree = cfg.usize_or("forward.state_degree", 2)? as u8;
            if !(pc.state_degree == 1 || pc.state_degree == 2) {
                return Err(ConfigError {
                    path: path.to_path_buf(),
                    line: cfg.line_of("forward.state_degree"),
                    message: "forward.state_degree: must be 1 or 2".into(),
                });
            }
            pc.prior = parse_prior(&cfg, pc.prior)?;
            pc.obs_count = cfg.usize_or("observation.count", 50)?.max(1);
            pc.obs_window = rect4(&cfg, "observation.window", [0.1, 0.1, 0.9, 0.5])?;
            pc.sigma = cfg.positive_f64_or("observation.sigma", 0.01)?;
            pc.newton = parse_newton(&cfg)?;
            pc.ghep_r = cfg.usize_or("eigensolver.r", 50)?.max(1);
            pc.ghep_l = cfg.usize_or("eigensolver.l", 20)?;
            pc.lambda_cut = cfg.f64_or("eigensolver.lambda_cut", pc.lambda_cut)?;
            pc.solver = parse_solver(&cfg)?;
            pc.prior_variance_rank = cfg.usize_or("variance.rank", 300)?.max(1);
            pc.sample_count = cfg.usize_or("samples.count", 3)?;
            pc.seeds = seeds;
            pc.threads = threads;
            pc.stages = stages;
            RunConfig { problem, output_dir, stages, poisson: Some(pc), advdiff: None }
        }
        Problem::AdvDiff => {
            let mut ac = AdvDiffExperimentConfig::default();
            ac.nx = nx;
            ac.ny = ny;
            let holes = cfg.nested_list_or(
                "mesh.holes",
                &[vec![0.25, 0.125, 0.5, 0.375], vec![0.625, 0.625, 0.75, 0.875]],
            )?;
            ac.holes = Vec::new();
            for h in &holes {
                if h.len() != 4 {
                    return Err(ConfigError {
                        path: path.to_path_buf(),
                        line: cfg.line_of("mesh.holes"),
                        message: "mesh.holes: each hole needs [x0, y0, x1, y1]".into(),
                    });
                }
                ac.holes.push([h[0], h[1], h[2], h[3]]);
            }
            ac.setup.kappa = cfg.positive_f64_or("forward.kappa", ac.setup.kappa)?;
            ac.setup.t_final = cfg.positive_f64_or("forward.t_final", ac.setup.t_final)?;
            ac.setup.steps = cfg.usize_or("forward.steps", ac.setup.steps)?.max(1);
            ac.setup.gls = cfg.bool_or("forward.gls", ac.setup.gls)?;
            ac.setup.state_degree = cfg.usize_or("forward.state_degree", 1)? as u8;
            if !(ac.setup.state_degree == 1 || ac.setup.state_degree == 2) {
                return Err(ConfigError {
                    path: path.to_path_buf(),
                    line: cfg.line_of("forward.state_degree"),
                    message: "forward.state_degree: must be 1 or 2".into(),
                });
            }
            ac.setup.param_degree = 1;
            ac.setup.obs_start = cfg.positive_f64_or("observation.t_start", ac.setup.obs_start)?;
            ac.setup.obs_every = cfg.positive_f64_or("observation.every", ac.setup.obs_every)?;
            ac.prior = parse_prior(&cfg, ac.prior)?;
            ac.n_sensors = cfg.usize_or("observation.count", 80)?.max(1);
            ac.noise_var = cfg.positive_f64_or("observation.noise_var", ac.noise_var)?;
            ac.map_tol = cfg.positive_f64_or("map.tol", ac.map_tol)?;
            ac.map_max_iter = cfg.usize_or("map.max_iter", ac.map_max_iter)?.max(1);
            ac.ghep_r = cfg.usize_or("eigensolver.r", 50)?.max(1);
            ac.ghep_l = cfg.usize_or("eigensolver.l", 10)?;
            ac.lambda_cut = cfg.f64_or("eigensolver.lambda_cut", ac.lambda_cut)?;
            let windows = cfg.nested_list_or(
                "eigensolver.windows",
                &[vec![1.0, 4.0], vec![2.0, 4.0], vec![3.0, 4.0]],
            )?;
            ac.windows = Vec::new();
            for w in &windows {
                if w.len() != 2 || w[0] >= w[1] {
                    return Err(ConfigError {
                        path: path.to_path_buf(),
                        line: cfg.line_of("eigensolver.windows"),
                        message: "eigensolver.windows: each window needs [t0, t1] with t0 < t1".into(),
                    });
                }
                ac.windows.push([w[0], w[1]]);
            }
            let _ = parse_solver(&cfg)?; // accepted for symmetry; both problems use the double pass here
            ac.prior_variance_rank = cfg.usize_or("variance.rank", 300)?.max(1);
            ac.sample_count = cfg.usize_or("samples.count", 3)?;
            ac.seeds = seeds;
            ac.threads = threads;
            ac.stages = stages;
            RunConfig { problem, output_dir, stages, poisson: None, advdiff: Some(ac) }
        }
    };
    cfg.reject_unknown()?;
    Ok(out)
}
