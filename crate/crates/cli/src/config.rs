//! Flat `key = value` run configuration.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use mmcf::barriers::{BarrierKind, BarrierSpec};
use mmcf::estimates::{CutoffParams, IDENTITIES, INEQUALITIES};
use mmcf::flow::{schedule, Normalization, RhsMode};
use mmcf::grid::{GridMode, GridSpec};
use serde::Serialize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Simulate,
    Verify,
    Exhaust,
    Barriers,
    Convergence,
}

impl Command {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "simulate" => Command::Simulate,
            "verify" => Command::Verify,
            "exhaust" => Command::Exhaust,
            "barriers" => Command::Barriers,
            "convergence" => Command::Convergence,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Verify => "verify",
            Command::Exhaust => "exhaust",
            Command::Barriers => "barriers",
            Command::Convergence => "convergence",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Initial {
    Barrier { barrier: BarrierKind, param: f64 },
    Expression { expr: String },
    File { path: PathBuf },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryChoice {
    Frozen,
    /// Time-dependent data from the exact solution of a barrier fixture.
    Exact,
}

/// Parse or validation failure, with the offending line when known.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Clone, Debug, Serialize)]
pub struct RunConfig {
    pub command: Option<Command>,
    pub n: usize,
    pub mode: GridMode,
    pub resolution: Vec<usize>,
    pub theta_max: f64,
    pub sigma: f64,
    pub rhs_mode: RhsMode,
    pub normalization: Normalization,
    pub cfl: f64,
    pub t_end: f64,
    pub epsilon: Option<f64>,
    pub schedule: Vec<f64>,
    pub boundary_policy: BoundaryChoice,
    pub initial: Initial,
    pub output_dir: Option<PathBuf>,
    pub seed: u64,
    /// Amplitude of the seeded perturbation added to the initial height.
    pub perturbation: f64,
    pub mollify: Option<f64>,
    pub snapshot_every: Option<f64>,
    pub checks: Vec<String>,
    pub cosh_r_max: f64,
    pub cutoff_theta: f64,
    pub margin: usize,
    pub pole_exclusion: f64,
    pub identity_tolerance: f64,
    pub exact_tolerance: f64,
    pub barrier: Option<BarrierSpec>,
    pub levels: u32,
    pub min_order: f64,
}

pub const KEYS: &[&str] = &[
    "command",
    "n",
    "mode",
    "resolution",
    "theta_max",
    "sigma",
    "rhs_mode",
    "normalization",
    "cfl",
    "T",
    "epsilon",
    "schedule",
    "boundary_policy",
    "initial",
    "output_dir",
    "seed",
    "perturbation",
    "mollify",
    "snapshot_every",
    "checks",
    "cosh_r_max",
    "cutoff_theta",
    "margin",
    "pole_exclusion",
    "identity_tolerance",
    "exact_tolerance",
    "barrier",
    "levels",
    "min_order",
];

struct Entries {
    map: BTreeMap<String, (usize, String)>,
}

impl Entries {
    fn err(&self, key: &str, message: impl Into<String>) -> ConfigError {
        ConfigError { line: self.map.get(key).map(|e| e.0), message: format!("{key}: {}", message.into()) }
    }

    fn raw(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(|e| e.1.as_str())
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError> {
        match self.raw(key) {
            None => Ok(None),
            Some(s) => s.parse().map(Some).map_err(|_| self.err(key, format!("cannot parse `{s}`"))),
        }
    }

    fn required<T: std::str::FromStr>(&self, key: &str) -> Result<T, ConfigError> {
        self.parse(key)?.ok_or_else(|| ConfigError { line: None, message: format!("missing required key `{key}`") })
    }

    fn list<T: std::str::FromStr>(&self, key: &str) -> Result<Vec<T>, ConfigError> {
        match self.raw(key) {
            None => Ok(Vec::new()),
            Some(s) => s
                .split(',')
                .map(|p| p.trim().parse().map_err(|_| self.err(key, format!("cannot parse `{}`", p.trim()))))
                .collect(),
        }
    }
}

fn split_lines(text: &str) -> Result<Entries, ConfigError> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((k, v)) = content.split_once('=') else {
            return Err(ConfigError { line: Some(line), message: format!("expected `key = value`, got `{content}`") });
        };
        let (k, v) = (k.trim(), v.trim());
        if !KEYS.contains(&k) {
            return Err(ConfigError { line: Some(line), message: format!("unknown key `{k}`") });
        }
        if v.is_empty() {
            return Err(ConfigError { line: Some(line), message: format!("{k}: empty value") });
        }
        if let Some((first, _)) = map.insert(k.to_string(), (line, v.to_string())) {
            return Err(ConfigError { line: Some(line), message: format!("{k}: duplicate key (first set on line {first})") });
        }
    }
    Ok(Entries { map })
}

fn parse_barrier(s: &str) -> Option<(BarrierKind, f64)> {
    let (kind, param) = s.split_once(':')?;
    let kind = match kind.trim() {
        "hemisphere" => BarrierKind::Hemisphere,
        "horosphere" => BarrierKind::Horosphere,
        "cap" => BarrierKind::Cap,
        _ => return None,
    };
    Some((kind, param.trim().parse().ok()?))
}

/// Barrier with the flow's `σ` (hemispheres carry none).
pub fn barrier_spec(kind: BarrierKind, param: f64, sigma: f64, n: usize) -> BarrierSpec {
    match kind {
        BarrierKind::Hemisphere => BarrierSpec::hemisphere(param, n),
        BarrierKind::Horosphere => BarrierSpec::horosphere(param, sigma, n),
        BarrierKind::Cap => BarrierSpec::cap(param, sigma, n),
    }
}

impl RunConfig {
    /// Parse configuration text; relative file paths resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let e = split_lines(text)?;
        let command = match e.raw("command") {
            None => None,
            Some(s) => Some(Command::parse(s).ok_or_else(|| e.err("command", format!("unknown command `{s}`")))?),
        };
        let n: usize = e.required("n")?;
        if n != 1 && n != 2 {
            return Err(e.err("n", format!("must be 1 or 2, got {n}")));
        }
        let mode = match (n, e.raw("mode")) {
            (1, None | Some("arc")) => GridMode::Full,
            (1, Some(m)) => return Err(e.err("mode", format!("n = 1 only supports `arc`, got `{m}`"))),
            (_, None | Some("full")) => GridMode::Full,
            (_, Some("axisymmetric")) => GridMode::Axisymmetric,
            (_, Some(m)) => return Err(e.err("mode", format!("expected `full` or `axisymmetric`, got `{m}`"))),
        };
        if e.raw("resolution").is_none() {
            return Err(ConfigError { line: None, message: "missing required key `resolution`".into() });
        }
        let resolution: Vec<usize> = e.list("resolution")?;
        let theta_max = e.parse("theta_max")?.unwrap_or(1.2);
        let grid = GridSpec { dim: n, mode, resolution: resolution.clone(), theta_max };
        grid.validate().map_err(|err| e.err("resolution", err.to_string()))?;

        let sigma: f64 = e.parse("sigma")?.unwrap_or(0.0);
        if !(sigma.abs() < n as f64) {
            return Err(e.err("sigma", format!("|σ| < n is required, got σ = {sigma} with n = {n}")));
        }
        let rhs_mode = match e.raw("rhs_mode") {
            None | Some("parametric") => RhsMode::Parametric,
            Some("expanded") => RhsMode::Expanded,
            Some(m) => return Err(e.err("rhs_mode", format!("expected `parametric` or `expanded`, got `{m}`"))),
        };
        let normalization = match e.raw("normalization") {
            None | Some("one") => Normalization::One,
            Some("inverse_n") => Normalization::InverseN,
            Some(m) => return Err(e.err("normalization", format!("expected `one` or `inverse_n`, got `{m}`"))),
        };
        let cfl: f64 = e.parse("cfl")?.unwrap_or(0.4);
        if !(cfl > 0.0 && cfl < 1.0) {
            return Err(e.err("cfl", format!("must lie in (0, 1), got {cfl}")));
        }
        let t_end: f64 = e.required("T")?;
        if !(t_end > 0.0 && t_end.is_finite()) {
            return Err(e.err("T", format!("must be positive, got {t_end}")));
        }
        let epsilon: Option<f64> = e.parse("epsilon")?;
        if let Some(eps) = epsilon {
            if !(eps > 0.0 && eps <= 1.0) {
                return Err(e.err("epsilon", format!("must lie in (0, 1], got {eps}")));
            }
        }
        let deltas: Vec<f64> = e.list("schedule")?;
        if !deltas.is_empty() {
            schedule(&deltas, n, sigma).map_err(|err| e.err("schedule", err.to_string()))?;
        }

        let init = e.raw("initial").ok_or_else(|| ConfigError { line: None, message: "missing required key `initial`".into() })?;
        let initial = if let Some(expr) = init.strip_prefix("expr:") {
            Initial::Expression { expr: expr.trim().to_string() }
        } else if let Some(path) = init.strip_prefix("file:") {
            Initial::File { path: base.join(path.trim()) }
        } else if let Some((barrier, param)) = parse_barrier(init) {
            barrier_spec(barrier, param, sigma, n).validate().map_err(|err| e.err("initial", err.to_string()))?;
            Initial::Barrier { barrier, param }
        } else {
            return Err(e.err("initial", format!("expected `<barrier>:<param>`, `expr:<expression>` or `file:<path>`, got `{init}`")));
        };
        if let Initial::Expression { expr } = &initial {
            evalexpr::build_operator_tree::<evalexpr::DefaultNumericTypes>(expr)
                .map_err(|err| e.err("initial", format!("bad expression: {err}")))?;
        }

        let perturbation: f64 = e.parse("perturbation")?.unwrap_or(0.0);
        if !(perturbation >= 0.0 && perturbation.is_finite()) {
            return Err(e.err("perturbation", format!("must be non-negative, got {perturbation}")));
        }
        let mollify: Option<f64> = e.parse("mollify")?;
        let exact_available = exact_solution(&initial, sigma, n).is_some() && perturbation == 0.0 && mollify.is_none();
        let boundary_policy = match e.raw("boundary_policy") {
            None if exact_available => BoundaryChoice::Exact,
            None | Some("frozen") => BoundaryChoice::Frozen,
            Some("exact") if exact_available => BoundaryChoice::Exact,
            Some("exact") => {
                return Err(e.err(
                    "boundary_policy",
                    "`exact` needs an unperturbed, unmollified barrier initial surface with a known evolution",
                ))
            }
            Some(m) => return Err(e.err("boundary_policy", format!("expected `frozen` or `exact`, got `{m}`"))),
        };

        let snapshot_every: Option<f64> = e.parse("snapshot_every")?;
        if let Some(s) = snapshot_every {
            if !(s > 0.0) {
                return Err(e.err("snapshot_every", format!("must be positive, got {s}")));
            }
        }
        let checks: Vec<String> = e.list("checks")?;
        for c in &checks {
            let known = IDENTITIES.contains(&c.as_str())
                || INEQUALITIES.contains(&c.as_str())
                || c == "gradient_bound"
                || c.strip_prefix("curvature_bound_").and_then(|m| m.parse::<usize>().ok()).is_some_and(|m| m <= 2);
            if !known {
                return Err(e.err("checks", format!("unknown check `{c}`")));
            }
        }
        let cosh_r_max = e.parse("cosh_r_max")?.unwrap_or(2.0);
        let cutoff_theta = e.parse("cutoff_theta")?.unwrap_or(0.8);
        CutoffParams::new(n, sigma.max(0.0), cosh_r_max, cutoff_theta, t_end)
            .validate()
            .map_err(|err| e.err(if cutoff_theta > 0.0 && cutoff_theta < 1.0 { "cosh_r_max" } else { "cutoff_theta" }, err.to_string()))?;

        let barrier = match e.raw("barrier") {
            None => None,
            Some(s) => {
                let (kind, param) = parse_barrier(s).ok_or_else(|| e.err("barrier", format!("expected `<barrier>:<param>`, got `{s}`")))?;
                let spec = barrier_spec(kind, param, sigma, n);
                spec.validate().map_err(|err| e.err("barrier", err.to_string()))?;
                Some(spec)
            }
        };
        let levels: u32 = e.parse("levels")?.unwrap_or(2);
        if !(1..=6).contains(&levels) {
            return Err(e.err("levels", format!("must lie in 1..=6, got {levels}")));
        }

        Ok(Self {
            command,
            n,
            mode,
            resolution,
            theta_max,
            sigma,
            rhs_mode,
            normalization,
            cfl,
            t_end,
            epsilon,
            schedule: deltas,
            boundary_policy,
            initial,
            output_dir: e.raw("output_dir").map(|p| base.join(p)),
            seed: e.parse("seed")?.unwrap_or(0),
            perturbation,
            mollify,
            snapshot_every,
            checks,
            cosh_r_max,
            cutoff_theta,
            margin: e.parse("margin")?.unwrap_or(mmcf::estimates::DEFAULT_MARGIN),
            pole_exclusion: e.parse("pole_exclusion")?.unwrap_or(mmcf::estimates::DEFAULT_POLE_EXCLUSION),
            identity_tolerance: e.parse("identity_tolerance")?.unwrap_or(1e-2),
            exact_tolerance: e.parse("exact_tolerance")?.unwrap_or(1e-3),
            barrier,
            levels,
            min_order: e.parse("min_order")?.unwrap_or(1.8),
        })
    }

    pub fn grid_spec(&self, refine: u32) -> GridSpec {
        GridSpec { dim: self.n, mode: self.mode, resolution: self.resolution.clone(), theta_max: self.theta_max }
            .refined(refine)
    }

    /// Barrier whose exact evolution the initial surface follows, if any.
    pub fn exact(&self) -> Option<BarrierSpec> {
        if self.perturbation > 0.0 || self.mollify.is_some() {
            return None;
        }
        exact_solution(&self.initial, self.sigma, self.n)
    }
}

fn exact_solution(initial: &Initial, sigma: f64, n: usize) -> Option<BarrierSpec> {
    match *initial {
        Initial::Barrier { barrier: BarrierKind::Hemisphere, .. } if sigma != 0.0 => None,
        Initial::Barrier { barrier, param } => Some(barrier_spec(barrier, param, sigma, n)),
        _ => None,
    }
}
