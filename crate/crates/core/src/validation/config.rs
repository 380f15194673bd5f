use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::model::{EvalPoint, MarketParams, OptionSpec};

/// Named cross-method checks. Each compares a measured value against the
/// tolerance of the same name; the check passes when `measured <= tolerance`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Check {
    /// Worst relative gap of the three PDE prices to the tree oracle.
    TreeAgreement,
    /// Worst pairwise sup-norm gap between PDE surfaces, in units of `K`.
    PdePairwiseSup,
    /// Worst pairwise weighted L2 gap between PDE surfaces, relative to the obstacle surface.
    PdePairwiseWeighted,
    /// Worst relative gap of the PDE start rows to the European value near the strike.
    EuropeanCollapsePde,
    /// Worst |z| of either BSDE price against the European value.
    EuropeanCollapseMc,
    /// Worst |z| of either BSDE price against the obstacle PDE price.
    BsdeVsPde,
    /// Fraction of `(tau, t)` pairs breaking the explicit K bound.
    Prop21,
    /// `|sum (Y - g) dK| / (K E[K_T])`.
    Skorokhod,
    /// Relative gap of European value plus premium to the tree oracle.
    PremiumDecomposition,
    /// Relative L1 gap between residual and formula densities on the contact interior.
    MeasureIdentity,
    /// Number of time slices breaking the contact-set structure.
    BoundaryStructure,
    /// Relative L2 gap between regressed `Z` and the PDE gradient.
    ZIdentification,
    /// Worst bootstrap |z| of the driver representation moments.
    Representation,
}

impl Check {
    pub const ALL: [Check; 13] = [
        Check::TreeAgreement,
        Check::PdePairwiseSup,
        Check::PdePairwiseWeighted,
        Check::EuropeanCollapsePde,
        Check::EuropeanCollapseMc,
        Check::BsdeVsPde,
        Check::Prop21,
        Check::Skorokhod,
        Check::PremiumDecomposition,
        Check::MeasureIdentity,
        Check::BoundaryStructure,
        Check::ZIdentification,
        Check::Representation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Check::TreeAgreement => "tree_agreement",
            Check::PdePairwiseSup => "pde_pairwise_sup",
            Check::PdePairwiseWeighted => "pde_pairwise_weighted",
            Check::EuropeanCollapsePde => "european_collapse_pde",
            Check::EuropeanCollapseMc => "european_collapse_mc",
            Check::BsdeVsPde => "bsde_vs_pde",
            Check::Prop21 => "prop21",
            Check::Skorokhod => "skorokhod",
            Check::PremiumDecomposition => "premium_decomposition",
            Check::MeasureIdentity => "measure_identity",
            Check::BoundaryStructure => "boundary_structure",
            Check::ZIdentification => "z_identification",
            Check::Representation => "representation",
        }
    }

    /// Acceptance-level default tolerance.
    pub fn default_tolerance(self) -> f64 {
        match self {
            Check::TreeAgreement => 1e-3,
            Check::PdePairwiseSup => 1e-3,
            Check::PdePairwiseWeighted => 1e-3,
            Check::EuropeanCollapsePde => 5e-4,
            Check::EuropeanCollapseMc => 3.0,
            Check::BsdeVsPde => 3.0,
            Check::Prop21 => 1e-2,
            Check::Skorokhod => 1e-4,
            Check::PremiumDecomposition => 2e-3,
            Check::MeasureIdentity => 5e-2,
            Check::BoundaryStructure => 0.0,
            Check::ZIdentification => 0.1,
            Check::Representation => 3.0,
        }
    }

    pub fn needs_monte_carlo(self) -> bool {
        matches!(
            self,
            Check::EuropeanCollapseMc
                | Check::BsdeVsPde
                | Check::Prop21
                | Check::Skorokhod
                | Check::ZIdentification
                | Check::Representation
        )
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Contract, market and evaluation points checked together. The PDE
/// surfaces are shared by all points; Monte Carlo runs once per point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParameterSet {
    pub name: String,
    pub params: MarketParams,
    pub spec: OptionSpec,
    pub points: Vec<EvalPoint>,
    pub checks: Vec<Check>,
}

/// Working resolution of the equivalence suite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Resolution {
    /// Space and time nodes of the common PDE grid.
    pub grid: usize,
    pub penalty: f64,
    pub tree_steps: usize,
    pub paths: usize,
    pub steps: usize,
    pub degree: usize,
    pub weight_alpha: f64,
    /// Width, in standard errors, of the statistical band in the K bound.
    pub bound_sigmas: f64,
}

impl Default for Resolution {
    fn default() -> Self {
        Self {
            grid: 800,
            penalty: 1e5,
            tree_steps: crate::lattice::ORACLE_STEPS,
            paths: 100_000,
            steps: 50,
            degree: 3,
            weight_alpha: 1.0,
            bound_sigmas: 3.0,
        }
    }
}

/// One rung of the joint path/step refinement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonteCarloRung {
    pub paths: usize,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ladders {
    pub grid: Vec<usize>,
    pub penalty: Vec<f64>,
    /// Path counts at the suite step count.
    pub paths: Vec<usize>,
    pub joint: Vec<MonteCarloRung>,
}

impl Default for Ladders {
    fn default() -> Self {
        Self {
            grid: vec![100, 200, 400, 800],
            penalty: vec![1e2, 1e3, 1e4, 1e5],
            paths: vec![10_000, 40_000, 160_000],
            joint: vec![
                MonteCarloRung {
                    paths: 25_000,
                    steps: 25,
                },
                MonteCarloRung {
                    paths: 100_000,
                    steps: 50,
                },
                MonteCarloRung {
                    paths: 400_000,
                    steps: 100,
                },
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteConfig {
    pub seed: u64,
    pub sets: Vec<ParameterSet>,
    #[serde(default)]
    pub resolution: Resolution,
    #[serde(default)]
    pub ladders: Ladders,
    /// Missing entries take the acceptance defaults when the config is
    /// loaded, so the table echoed in a report is always complete.
    #[serde(default)]
    pub tolerances: BTreeMap<Check, f64>,
}

impl SuiteConfig {
    /// Canonical put at three spots plus the two degenerate contracts.
    pub fn acceptance() -> Self {
        let canonical = MarketParams::new(0.05, 0.0, 0.2, 1.0).expect("valid");
        let put = OptionSpec::put(100.0).expect("valid");
        let call = OptionSpec::call(100.0).expect("valid");
        let at = |x: f64| EvalPoint::at_spot(x).expect("valid");
        let collapse = vec![
            Check::TreeAgreement,
            Check::PdePairwiseSup,
            Check::EuropeanCollapsePde,
            Check::EuropeanCollapseMc,
            Check::Skorokhod,
            Check::PremiumDecomposition,
        ];
        let mut cfg = Self {
            seed: 20_240_601,
            sets: vec![
                ParameterSet {
                    name: "canonical-put".into(),
                    params: canonical,
                    spec: put,
                    points: vec![at(100.0), at(80.0), at(120.0)],
                    checks: vec![
                        Check::TreeAgreement,
                        Check::PdePairwiseSup,
                        Check::PdePairwiseWeighted,
                        Check::BsdeVsPde,
                        Check::Prop21,
                        Check::Skorokhod,
                        Check::PremiumDecomposition,
                        Check::MeasureIdentity,
                        Check::BoundaryStructure,
                        Check::ZIdentification,
                        Check::Representation,
                    ],
                },
                ParameterSet {
                    name: "call-no-dividend".into(),
                    params: canonical,
                    spec: call,
                    points: vec![at(100.0)],
                    checks: collapse.clone(),
                },
                ParameterSet {
                    name: "put-no-rate".into(),
                    params: MarketParams::new(0.0, 0.0, 0.2, 1.0).expect("valid"),
                    spec: put,
                    points: vec![at(100.0)],
                    checks: collapse,
                },
            ],
            resolution: Resolution::default(),
            ladders: Ladders::default(),
            tolerances: BTreeMap::new(),
        };
        cfg.fill_tolerances();
        cfg
    }

    /// Parses and validates a JSON document.
    pub fn from_json(text: &str) -> std::result::Result<Self, ConfigError> {
        let mut cfg: SuiteConfig = serde_json::from_str(text).map_err(|e| ConfigError(e.to_string()))?;
        cfg.fill_tolerances();
        cfg.validate().map_err(|e| ConfigError(e.to_string()))?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn fill_tolerances(&mut self) {
        for check in Check::ALL {
            self.tolerances
                .entry(check)
                .or_insert_with(|| check.default_tolerance());
        }
    }

    pub fn tolerance(&self, check: Check) -> f64 {
        self.tolerances[&check]
    }

    pub fn validate(&self) -> Result<()> {
        if self.sets.is_empty() {
            return Err(invalid("sets", "need at least one parameter set"));
        }
        for set in &self.sets {
            if set.points.is_empty() {
                return Err(invalid(
                    "points",
                    format!("set `{}` has no evaluation points", set.name),
                ));
            }
            for p in &set.points {
                p.validate_against(&set.params)?;
            }
            let mut seen = set.checks.clone();
            seen.sort();
            seen.dedup();
            if seen.len() != set.checks.len() {
                return Err(invalid("checks", format!("set `{}` lists a check twice", set.name)));
            }
        }
        let mut names: Vec<&str> = self.sets.iter().map(|s| s.name.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        if names.len() != self.sets.len() {
            return Err(invalid("sets", "set names must be unique"));
        }
        for check in Check::ALL {
            match self.tolerances.get(&check) {
                Some(t) if t.is_finite() && *t >= 0.0 => {}
                Some(t) => {
                    return Err(invalid(
                        "tolerances",
                        format!("`{check}` must be finite and >= 0, got {t}"),
                    ))
                }
                None => return Err(invalid("tolerances", format!("no tolerance for `{check}`"))),
            }
        }
        let r = &self.resolution;
        if r.grid < 3 || r.tree_steps < 2 || r.paths < 2 || r.steps < 1 {
            return Err(invalid(
                "resolution",
                "grid >= 3, tree_steps >= 2, paths >= 2 and steps >= 1",
            ));
        }
        if !(r.penalty.is_finite() && r.penalty >= 1.0) {
            return Err(invalid("resolution", "penalty must be >= 1"));
        }
        if !(r.bound_sigmas.is_finite() && r.bound_sigmas >= 0.0) {
            return Err(invalid("resolution", "bound_sigmas must be finite and >= 0"));
        }
        crate::bsde::RegressionBasis::new(r.degree, true, true)?;
        crate::pde::WeightSpec::new(r.weight_alpha)?;
        let l = &self.ladders;
        increasing("ladders.grid", &l.grid.iter().map(|&v| v as f64).collect::<Vec<_>>())?;
        increasing("ladders.penalty", &l.penalty)?;
        increasing("ladders.paths", &l.paths.iter().map(|&v| v as f64).collect::<Vec<_>>())?;
        let joint_paths: Vec<f64> = l.joint.iter().map(|r| r.paths as f64).collect();
        let joint_steps: Vec<f64> = l.joint.iter().map(|r| r.steps as f64).collect();
        increasing("ladders.joint.paths", &joint_paths)?;
        increasing("ladders.joint.steps", &joint_steps)?;
        Ok(())
    }
}

fn increasing(name: &'static str, values: &[f64]) -> Result<()> {
    if values.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid(name, "ladder must be strictly increasing"));
    }
    Ok(())
}

/// Schema or validation failure of a suite configuration.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("invalid suite configuration: {0}")]
pub struct ConfigError(pub String);
