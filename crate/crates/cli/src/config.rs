//! Experiment configuration: a TOML file with one table per stage, plus
//! `section.key=value` overrides from the command line.

use avoinv::mars::MarsFitConfig;
use avoinv::model::{DepthConfig, PiecewiseLinear, PriorConfig};
use avoinv::npkr::LscvConfig;
use avoinv::{BaseOptions, CorrelationSpec, NoiseSpec, SyntheticForward};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed; every random stream is derived from it.
    #[serde(default)]
    pub seed: u64,
    pub grid: GridSection,
    #[serde(default)]
    pub depth: DepthSection,
    #[serde(default)]
    pub prior: PriorSection,
    #[serde(default)]
    pub noise: NoiseSection,
    #[serde(default)]
    pub forward: ForwardSection,
    #[serde(default)]
    pub surrogate: SurrogateSection,
    #[serde(default)]
    pub chain: ChainSection,
    #[serde(default)]
    pub tune: TuneSection,
    #[serde(default)]
    pub compare: CompareSection,
    #[serde(default)]
    pub diagnostics: DiagnosticsSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub nx: usize,
    pub ny: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DepthSection {
    pub d_min: f64,
    pub d_max: f64,
    pub perturbation: f64,
    pub perturbation_range: f64,
}

impl Default for DepthSection {
    fn default() -> Self {
        let d = DepthConfig::default();
        Self {
            d_min: d.d_min,
            d_max: d.d_max,
            perturbation: d.perturbation,
            perturbation_range: d.perturbation_range,
        }
    }
}

/// Linear depth trends (value at the shallowest and deepest normalized
/// depth) and correlation parameters for `x_g`, `x_o`, `x_clay`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorSection {
    pub top: [f64; 3],
    pub bottom: [f64; 3],
    pub sigma: [f64; 3],
    pub range: [f64; 3],
    pub clamp_tolerance: f64,
}

impl Default for PriorSection {
    fn default() -> Self {
        let p = PriorConfig::default();
        let ends = |k: usize| {
            let pts = p.trends[k].points();
            (pts[0].1, pts[pts.len() - 1].1)
        };
        Self {
            top: [ends(0).0, ends(1).0, ends(2).0],
            bottom: [ends(0).1, ends(1).1, ends(2).1],
            sigma: p.corr.map(|c| c.sigma),
            range: p.corr.map(|c| c.effective_range),
            clamp_tolerance: BaseOptions::default().clamp_tolerance,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSection {
    pub var_r0: f64,
    pub var_g: f64,
    pub corr: f64,
    /// Inflate the noise by held-out surrogate residuals when sampling.
    pub adjust: bool,
}

impl Default for NoiseSection {
    fn default() -> Self {
        let n = NoiseSpec::default();
        Self {
            var_r0: n.var_r0,
            var_g: n.var_g,
            corr: n.corr,
            adjust: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForwardSection {
    pub a: [f64; 6],
    pub b: [f64; 6],
}

impl Default for ForwardSection {
    fn default() -> Self {
        let f = SyntheticForward::default();
        Self { a: f.a, b: f.b }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurrogateSection {
    pub kind: String,
    pub n_train: usize,
    pub n_test: usize,
    pub max_terms: usize,
    pub max_degree: usize,
    pub penalty: f64,
    pub threshold: f64,
    pub min_span: usize,
    pub end_span: usize,
    /// Candidate knots per variable; 0 means every distinct value.
    pub max_knots: usize,
    /// Training points used by kernel regression, drawn at random.
    pub npkr_subset: usize,
    pub npkr_starts: usize,
    pub npkr_budget: usize,
    /// Fit MARS models of finite-difference derivatives for MALA.
    pub gradient_models: bool,
    pub gradient_n: usize,
    pub gradient_eps: f64,
}

impl Default for SurrogateSection {
    fn default() -> Self {
        let m = MarsFitConfig::default();
        let l = LscvConfig::default();
        Self {
            kind: "mars".into(),
            n_train: 20_000,
            n_test: 10_000,
            max_terms: m.max_terms,
            max_degree: m.max_degree,
            penalty: m.penalty,
            threshold: m.threshold,
            min_span: m.min_span,
            end_span: m.end_span,
            max_knots: m.max_knots.unwrap_or(0),
            npkr_subset: 1000,
            npkr_starts: l.starts,
            npkr_budget: l.budget,
            gradient_models: true,
            gradient_n: 5000,
            gradient_eps: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainSection {
    pub proposal: String,
    /// Step size, used as is when `tune` is false and as the starting point otherwise.
    pub s: f64,
    pub tune: bool,
    /// Target acceptance rate; defaults to the kernel's conventional target.
    pub target: Option<f64>,
    pub iterations: usize,
    pub thin: usize,
    /// Defaults to half the iterations.
    pub burn_in: Option<usize>,
    /// `prior_mean` or `prior_draw`.
    pub start: String,
    /// `surrogate` or `exact`.
    pub forward: String,
    /// MALA gradient provider: `mars_grad` (derivative models) or `analytic`.
    pub gradient: String,
    pub index: u64,
}

impl Default for ChainSection {
    fn default() -> Self {
        Self {
            proposal: "pcn".into(),
            s: 0.5,
            tune: true,
            target: None,
            iterations: 10_000,
            thin: 10,
            burn_in: None,
            start: "prior_mean".into(),
            forward: "surrogate".into(),
            gradient: "mars_grad".into(),
            index: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuneSection {
    pub batch_size: usize,
    pub batches: usize,
    pub eval_iterations: usize,
    pub tolerance: f64,
    pub gain: f64,
}

impl Default for TuneSection {
    fn default() -> Self {
        let t = avoinv::mcmc::TuneConfig::default();
        Self {
            batch_size: t.batch_size,
            batches: t.batches,
            eval_iterations: t.eval_iterations,
            tolerance: t.tolerance,
            gain: t.gain,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareSection {
    pub proposals: Vec<String>,
    pub iterations: usize,
    pub thin: usize,
    /// Chains start from the tuned positions, so little or no burn-in is needed.
    pub burn_in: usize,
}

impl Default for CompareSection {
    fn default() -> Self {
        Self {
            proposals: ["rw_identity", "rw_prior", "pcn", "mala"]
                .map(String::from)
                .to_vec(),
            iterations: 40_000,
            thin: 10,
            burn_in: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsSection {
    /// Cells (row-major index) for ternary extracts.
    pub ternary_cells: Vec<usize>,
    pub max_lag: usize,
}

impl Default for DiagnosticsSection {
    fn default() -> Self {
        Self {
            ternary_cells: vec![0],
            max_lag: 100,
        }
    }
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

/// Parses an override value as a TOML value, falling back to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Applies `section.key=value` (or top-level `key=value`) overrides.
pub fn apply_overrides(table: &mut toml::Table, overrides: &[String]) -> Result<(), CliError> {
    for item in overrides {
        let (path, raw) = item
            .split_once('=')
            .ok_or_else(|| config_err(format!("override {item:?} is not key=value")))?;
        let parts: Vec<&str> = path.trim().split('.').collect();
        let (last, sections) = parts.split_last().expect("split yields one part");
        let mut cur = &mut *table;
        for s in sections {
            let entry = cur
                .entry(s.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            cur = entry
                .as_table_mut()
                .ok_or_else(|| config_err(format!("override {path:?}: {s} is not a section")))?;
        }
        cur.insert(last.to_string(), parse_value(raw.trim()));
    }
    Ok(())
}

impl ExperimentConfig {
    /// Reads the optional file, applies overrides and the seed flag, then
    /// validates.
    pub fn load(
        text: Option<&str>,
        overrides: &[String],
        seed: Option<u64>,
    ) -> Result<Self, CliError> {
        let mut table: toml::Table = match text {
            Some(t) => t
                .parse()
                .map_err(|e: toml::de::Error| config_err(e.message().to_string()))?,
            None => toml::Table::new(),
        };
        apply_overrides(&mut table, overrides)?;
        if let Some(s) = seed {
            table.insert("seed".into(), toml::Value::Integer(s as i64));
        }
        let cfg: Self = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| config_err(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg.resolved())
    }

    fn resolved(mut self) -> Self {
        self.chain.burn_in.get_or_insert(self.chain.iterations / 2);
        if let Ok(tag) = self.chain.proposal.parse::<avoinv::mcmc::ProposalTag>() {
            self.chain.target.get_or_insert(tag.default_target());
        }
        self
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        avoinv::GridSpec::new(self.grid.nx, self.grid.ny)
            .map_err(|e| config_err(format!("grid: {e}")))?;
        self.depth_config()
            .validate()
            .map_err(|e| config_err(format!("depth: {e}")))?;
        for k in 0..3 {
            CorrelationSpec::gaussian(self.prior.sigma[k], self.prior.range[k])
                .map_err(|e| config_err(format!("prior: {e}")))?;
        }
        self.noise_spec()
            .map_err(|e| config_err(format!("noise: {e}")))?;
        self.mars_config()
            .validate()
            .map_err(|e| config_err(format!("surrogate: {e}")))?;
        if !["mars", "npkr"].contains(&self.surrogate.kind.as_str()) {
            return Err(config_err(format!(
                "surrogate.kind must be mars or npkr, got {:?}",
                self.surrogate.kind
            )));
        }
        self.chain
            .proposal
            .parse::<avoinv::mcmc::ProposalTag>()
            .map_err(|e| config_err(format!("chain.proposal: {e}")))?;
        for p in &self.compare.proposals {
            p.parse::<avoinv::mcmc::ProposalTag>()
                .map_err(|e| config_err(format!("compare.proposals: {e}")))?;
        }
        let choice = |key: &str, value: &str, allowed: &[&str]| {
            if allowed.contains(&value) {
                Ok(())
            } else {
                Err(config_err(format!(
                    "{key} must be one of {allowed:?}, got {value:?}"
                )))
            }
        };
        choice(
            "chain.start",
            &self.chain.start,
            &["prior_mean", "prior_draw"],
        )?;
        choice(
            "chain.forward",
            &self.chain.forward,
            &["surrogate", "exact"],
        )?;
        choice(
            "chain.gradient",
            &self.chain.gradient,
            &["mars_grad", "analytic"],
        )?;
        if self.compare.burn_in >= self.compare.iterations {
            return Err(config_err(
                "compare.burn_in must be below compare.iterations",
            ));
        }
        if self.chain.thin == 0 || self.compare.thin == 0 {
            return Err(config_err("thin must be at least 1"));
        }
        if self.chain.burn_in.unwrap_or(self.chain.iterations / 2) >= self.chain.iterations {
            return Err(config_err("chain.burn_in must be below chain.iterations"));
        }
        if let Some(t) = self.chain.target {
            if !(t > 0.0 && t < 1.0) {
                return Err(config_err("chain.target must be in (0, 1)"));
            }
        }
        if self.surrogate.n_train < 2 || self.surrogate.n_test < 2 {
            return Err(config_err(
                "surrogate.n_train and n_test must be at least 2",
            ));
        }
        Ok(())
    }

    pub fn grid(&self) -> avoinv::GridSpec {
        avoinv::GridSpec::new(self.grid.nx, self.grid.ny).expect("validated grid")
    }

    pub fn depth_config(&self) -> DepthConfig {
        DepthConfig {
            d_min: self.depth.d_min,
            d_max: self.depth.d_max,
            perturbation: self.depth.perturbation,
            perturbation_range: self.depth.perturbation_range,
        }
    }

    pub fn prior_config(&self) -> PriorConfig {
        let p = &self.prior;
        PriorConfig {
            trends: [0, 1, 2].map(|k| PiecewiseLinear::linear(p.top[k], p.bottom[k])),
            corr: [0, 1, 2].map(|k| {
                CorrelationSpec::gaussian(p.sigma[k], p.range[k]).expect("validated correlation")
            }),
        }
    }

    pub fn base_options(&self) -> BaseOptions {
        BaseOptions {
            clamp_tolerance: self.prior.clamp_tolerance,
        }
    }

    pub fn noise_spec(&self) -> avoinv::Result<NoiseSpec> {
        NoiseSpec::new(self.noise.var_r0, self.noise.var_g, self.noise.corr)
    }

    pub fn forward(&self) -> SyntheticForward {
        SyntheticForward {
            a: self.forward.a,
            b: self.forward.b,
        }
    }

    pub fn mars_config(&self) -> MarsFitConfig {
        let s = &self.surrogate;
        MarsFitConfig {
            max_terms: s.max_terms,
            max_degree: s.max_degree,
            penalty: s.penalty,
            min_span: s.min_span,
            end_span: s.end_span,
            max_knots: (s.max_knots > 0).then_some(s.max_knots),
            threshold: s.threshold,
        }
    }

    pub fn lscv_config(&self) -> LscvConfig {
        LscvConfig {
            starts: self.surrogate.npkr_starts,
            budget: self.surrogate.npkr_budget,
            seed: self.seed,
            ..LscvConfig::default()
        }
    }
}
