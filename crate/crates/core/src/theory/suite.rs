//! Configurable Monte Carlo suite over all theory checks, with CSV and JSON
//! output and a pass/fail verdict per named property.

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::bounds::{
    count_projection_pairs, required_samples, required_width_deep, required_width_linear,
    required_width_scalar, LayerWidth,
};
use super::estimate::{two_sigma_floor, Estimate};
use super::net::{random_unit_ball_matrix, Grid, ResampledPair, TargetNetwork};
use super::oracle::{brute_force_oracle, ORACLE_LIMIT};
use super::witness::{witness_deep, witness_linear_map, witness_scalar, DeepInstance};
use super::{check_eps, check_open_unit, TheoryError};
use crate::config::{parse_toml, read_config, ConfigError};
use crate::rng::substream_rng;

const MAX_TRIALS: usize = 10_000_000;
const GRID_TRIAL: u64 = u32::MAX as u64;

/// Independent generator per (suite, case, trial), disjoint from the named
/// training streams.
fn trial_rng(seed: u64, suite: u64, case: u64, trial: u64) -> ChaCha8Rng {
    substream_rng(seed, 1 << 63 | suite << 48 | case << 32 | trial)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoverSuite {
    pub eps: f64,
    pub delta: f64,
    pub trials: usize,
}

impl Default for CoverSuite {
    fn default() -> Self {
        Self {
            eps: 0.1,
            delta: 0.05,
            trials: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WidthSuite {
    pub eps: f64,
    pub delta: f64,
    pub r_values: Vec<usize>,
    /// Target dimensions for the deep width bound.
    pub dims: Vec<usize>,
}

impl Default for WidthSuite {
    fn default() -> Self {
        Self {
            eps: 0.5,
            delta: 0.1,
            r_values: vec![1, 4, 8],
            dims: vec![1, 1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScalarSuite {
    pub eps: f64,
    pub delta: f64,
    pub r_values: Vec<usize>,
    pub trials: usize,
    /// Fixed target weight; drawn from U[-1, 1] per trial when absent.
    pub w: Option<f64>,
    pub monotone_width: usize,
    pub monotone_r: Vec<usize>,
}

impl Default for ScalarSuite {
    fn default() -> Self {
        Self {
            eps: 0.5,
            delta: 0.1,
            r_values: vec![1, 2, 4, 8],
            trials: 500,
            w: None,
            monotone_width: 24,
            monotone_r: vec![1, 4, 8],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleSuite {
    pub instances: usize,
    pub width: usize,
    pub r: usize,
    pub eps: f64,
}

impl Default for OracleSuite {
    fn default() -> Self {
        Self {
            instances: 100,
            width: 6,
            r: 2,
            eps: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinearSuite {
    pub d0: usize,
    pub d2: usize,
    pub eps: f64,
    pub delta: f64,
    pub r: usize,
    pub trials: usize,
}

impl Default for LinearSuite {
    fn default() -> Self {
        Self {
            d0: 2,
            d2: 2,
            eps: 0.8,
            delta: 0.2,
            r: 4,
            trials: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeepSuite {
    pub dims: Vec<usize>,
    pub eps: f64,
    pub delta: f64,
    pub r: usize,
    pub trials: usize,
}

impl Default for DeepSuite {
    fn default() -> Self {
        Self {
            dims: vec![2, 2, 2],
            eps: 1.0,
            delta: 0.2,
            r: 4,
            trials: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PairSuite {
    pub max_d_prime: usize,
    pub max_r: usize,
}

impl Default for PairSuite {
    fn default() -> Self {
        Self {
            max_d_prime: 10,
            max_r: 5,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TheorySuiteConfig {
    pub seed: u64,
    pub cover: CoverSuite,
    pub widths: WidthSuite,
    pub scalar: ScalarSuite,
    pub oracle: OracleSuite,
    pub linear: LinearSuite,
    pub deep: DeepSuite,
    pub pairs: PairSuite,
}

fn constraint(key: &str, msg: impl Into<String>) -> ConfigError {
    ConfigError::Constraint {
        key: key.into(),
        msg: msg.into(),
    }
}

fn need_unit(key: &str, v: f64) -> Result<(), ConfigError> {
    check_open_unit("value", v).map_err(|_| constraint(key, format!("must lie in (0, 1), got {v}")))
}

fn need_eps(key: &str, v: f64) -> Result<(), ConfigError> {
    check_eps(v).map_err(|_| constraint(key, format!("must lie in (0, 1], got {v}")))
}

fn need_trials(key: &str, n: usize) -> Result<(), ConfigError> {
    if (1..=MAX_TRIALS).contains(&n) {
        Ok(())
    } else {
        Err(constraint(key, format!("must be between 1 and {MAX_TRIALS}, got {n}")))
    }
}

fn need_rs(key: &str, rs: &[usize]) -> Result<(), ConfigError> {
    if rs.is_empty() || rs.contains(&0) {
        Err(constraint(key, "must be a non-empty list of positive integers"))
    } else {
        Ok(())
    }
}

fn need_dims(key: &str, dims: &[usize]) -> Result<(), ConfigError> {
    if dims.len() < 2 || dims.contains(&0) {
        Err(constraint(key, "needs at least two positive dimensions"))
    } else {
        Ok(())
    }
}

impl TheorySuiteConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        need_unit("cover.eps", self.cover.eps)?;
        need_unit("cover.delta", self.cover.delta)?;
        need_trials("cover.trials", self.cover.trials)?;

        need_eps("widths.eps", self.widths.eps)?;
        need_unit("widths.delta", self.widths.delta)?;
        need_rs("widths.r_values", &self.widths.r_values)?;
        need_dims("widths.dims", &self.widths.dims)?;

        let s = &self.scalar;
        need_eps("scalar.eps", s.eps)?;
        need_unit("scalar.delta", s.delta)?;
        need_rs("scalar.r_values", &s.r_values)?;
        need_rs("scalar.monotone_r", &s.monotone_r)?;
        need_trials("scalar.trials", s.trials)?;
        if let Some(w) = s.w {
            if !(-1.0..=1.0).contains(&w) {
                return Err(constraint("scalar.w", format!("must lie in [-1, 1], got {w}")));
            }
        }
        if s.monotone_width == 0 || !s.monotone_width.is_multiple_of(2) {
            return Err(constraint("scalar.monotone_width", "must be a positive even number"));
        }

        let o = &self.oracle;
        need_trials("oracle.instances", o.instances)?;
        need_eps("oracle.eps", o.eps)?;
        if o.width == 0 || !o.width.is_multiple_of(2) {
            return Err(constraint("oracle.width", "must be a positive even number"));
        }
        need_rs("oracle.r", &[o.r])?;
        if ((o.r * o.r + 1) as f64).powi(o.width as i32) > ORACLE_LIMIT {
            return Err(constraint("oracle.width", "search space exceeds the oracle limit"));
        }

        let l = &self.linear;
        need_eps("linear.eps", l.eps)?;
        need_unit("linear.delta", l.delta)?;
        need_rs("linear.r", &[l.r])?;
        need_trials("linear.trials", l.trials)?;
        need_dims("linear", &[l.d0, l.d2])?;

        let d = &self.deep;
        need_dims("deep.dims", &d.dims)?;
        need_eps("deep.eps", d.eps)?;
        need_unit("deep.delta", d.delta)?;
        need_rs("deep.r", &[d.r])?;
        need_trials("deep.trials", d.trials)?;

        need_rs("pairs.max_d_prime", &[self.pairs.max_d_prime])?;
        need_rs("pairs.max_r", &[self.pairs.max_r])?;
        Ok(())
    }

    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let cfg: Self = parse_toml(text, overrides)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path, overrides: &[String]) -> Result<Self, ConfigError> {
        Self::from_toml(&read_config(path)?, overrides)
    }
}

pub const TRIAL_CSV_HEADER: &str = "suite,eps,delta,R,d,trial,sup_error,success";

/// One Monte Carlo trial. For the covering check `d` is the sample count and
/// `sup_error` the distance to the nearest sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub suite: String,
    pub eps: f64,
    pub delta: f64,
    #[serde(rename = "R")]
    pub r: usize,
    pub d: usize,
    pub trial: usize,
    pub sup_error: f64,
    pub success: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateSummary {
    pub suite: String,
    pub eps: f64,
    pub delta: f64,
    #[serde(rename = "R")]
    pub r: usize,
    pub d: usize,
    pub estimate: Estimate,
    /// Lower bound on the success probability the bound promises, if any.
    pub guarantee: Option<f64>,
    pub floor: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WidthRow {
    #[serde(rename = "R")]
    pub r: usize,
    pub scalar: usize,
    pub deep: Vec<LayerWidth>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteSummary {
    pub seed: u64,
    pub samples_required: usize,
    pub widths: Vec<WidthRow>,
    pub rates: Vec<RateSummary>,
    pub checks: Vec<Check>,
    pub passed: bool,
}

impl SuiteSummary {
    pub fn failed(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub rows: Vec<TrialRow>,
    pub summary: SuiteSummary,
}

/// One covering trial: `n` draws from U[-1, 1], success when one lies within
/// `eps` of `alpha` (drawn from U[-1, 1] when absent). Returns the gap.
pub fn cover_trial(n: usize, eps: f64, alpha: Option<f64>, rng: &mut impl Rng) -> (f64, bool) {
    let alpha = alpha.unwrap_or_else(|| rng.random_range(-1.0..=1.0));
    let gap = (0..n)
        .map(|_| (alpha - rng.random_range(-1.0..=1.0)).abs())
        .fold(f64::INFINITY, f64::min);
    (gap, gap <= eps)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverReport {
    pub n: usize,
    /// Target drawn from U[-1, 1] per trial.
    pub uniform: Estimate,
    /// Target fixed at the interval edge 1.
    pub edge: Estimate,
    pub rows: Vec<TrialRow>,
}

/// Covering rate at the required sample count, for random targets and for
/// the edge target, `trials` each.
pub fn verify_sample_cover(eps: f64, delta: f64, trials: usize, seed: u64) -> Result<CoverReport, TheoryError> {
    let n = required_samples(eps, delta)?;
    if trials == 0 {
        return Err(TheoryError::Domain {
            name: "trials",
            value: 0.0,
            range: "[1, inf)",
        });
    }
    let run = |case: u64, alpha: Option<f64>, suite: &str| -> Vec<TrialRow> {
        (0..trials)
            .into_par_iter()
            .map(|t| {
                let mut rng = trial_rng(seed, 0, case, t as u64);
                let (gap, success) = cover_trial(n, eps, alpha, &mut rng);
                TrialRow {
                    suite: suite.into(),
                    eps,
                    delta,
                    r: 1,
                    d: n,
                    trial: t,
                    sup_error: gap,
                    success,
                }
            })
            .collect()
    };
    let mut rows = run(0, None, "cover");
    let edge_rows = run(1, Some(1.0), "cover_edge");
    let flags = |rs: &[TrialRow]| rs.iter().map(|r| r.success).collect::<Vec<_>>();
    let uniform = Estimate::from_flags(&flags(&rows));
    let edge = Estimate::from_flags(&flags(&edge_rows));
    rows.extend(edge_rows);
    Ok(CoverReport { n, uniform, edge, rows })
}

fn rate_summary(rows: &[TrialRow], guarantee: Option<f64>) -> RateSummary {
    let first = &rows[0];
    let estimate = Estimate::from_flags(&rows.iter().map(|r| r.success).collect::<Vec<_>>());
    RateSummary {
        suite: first.suite.clone(),
        eps: first.eps,
        delta: first.delta,
        r: first.r,
        d: first.d,
        estimate,
        guarantee,
        floor: guarantee.map(|g| two_sigma_floor(g, estimate.trials)),
    }
}

fn rate_check(name: String, s: &RateSummary) -> Check {
    let floor = s.floor.unwrap_or(0.0);
    Check::new(
        name,
        s.estimate.rate >= floor,
        format!(
            "{}/{} = {:.4} vs floor {:.4} (R={}, d={})",
            s.estimate.successes, s.estimate.trials, s.estimate.rate, floor, s.r, s.d
        ),
    )
}

#[allow(clippy::too_many_arguments)]
fn scalar_rows(
    seed: u64,
    case: u64,
    suite: &str,
    cfg: &ScalarSuite,
    r: usize,
    d: usize,
    grid: &Grid,
) -> Result<Vec<TrialRow>, TheoryError> {
    (0..cfg.trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = trial_rng(seed, 2, case, t as u64);
            let w = cfg.w.unwrap_or_else(|| rng.random_range(-1.0..=1.0));
            let net = ResampledPair::draw(1, d, 1, r, &mut rng)?;
            let wit = witness_scalar(w, &net, cfg.eps, grid)?;
            Ok(TrialRow {
                suite: suite.into(),
                eps: cfg.eps,
                delta: cfg.delta,
                r,
                d,
                trial: t,
                sup_error: wit.sup_error,
                success: wit.success,
            })
        })
        .collect()
}

/// Runs every check of `cfg`. Failing checks are reported in the summary;
/// errors are reserved for invalid input.
pub fn run_theory_suite(cfg: &TheorySuiteConfig) -> Result<SuiteReport, TheoryError> {
    cfg.validate()?;
    let seed = cfg.seed;
    let mut rows = Vec::new();
    let mut rates = Vec::new();
    let mut checks = Vec::new();
    let line = Grid::uniform(1, Grid::AXIS_POINTS);

    let cover = verify_sample_cover(cfg.cover.eps, cfg.cover.delta, cfg.cover.trials, seed)?;
    let guarantee = 1.0 - cfg.cover.delta;
    let (uniform_rows, edge_rows) = cover.rows.split_at(cfg.cover.trials);
    for part in [uniform_rows, edge_rows] {
        let s = rate_summary(part, Some(guarantee));
        checks.push(rate_check(format!("{}_rate", s.suite), &s));
        rates.push(s);
    }
    rows.extend(cover.rows);

    let w = &cfg.widths;
    let mut rs = w.r_values.clone();
    rs.sort_unstable();
    rs.dedup();
    let widths = rs
        .iter()
        .map(|&r| {
            Ok(WidthRow {
                r,
                scalar: required_width_scalar(w.eps, w.delta, r)?,
                deep: required_width_deep(&w.dims, w.eps, w.delta, r)?,
            })
        })
        .collect::<Result<Vec<_>, TheoryError>>()?;
    let monotone = widths.windows(2).all(|p| {
        p[1].scalar <= p[0].scalar && p[0].deep.iter().zip(&p[1].deep).all(|(a, b)| b.width <= a.width)
    });
    checks.push(Check::new(
        "width_monotone",
        monotone,
        format!("scalar widths {:?}", widths.iter().map(|x| x.scalar).collect::<Vec<_>>()),
    ));
    let base = required_width_deep(&w.dims, w.eps, w.delta, 1)?;
    let mut collapse_ok = true;
    for (i, lw) in base.iter().enumerate() {
        let r_big = lw.collapse_threshold.floor() as usize + 1;
        let after = required_width_deep(&w.dims, w.eps, w.delta, r_big)?[i];
        collapse_ok &= after.collapsed && after.width == 2 * w.dims[i];
        if r_big > 1 {
            let before = required_width_deep(&w.dims, w.eps, w.delta, r_big - 1)?[i];
            collapse_ok &= !before.collapsed;
        }
    }
    checks.push(Check::new(
        "width_collapse",
        collapse_ok,
        format!(
            "thresholds {:?}",
            base.iter().map(|l| l.collapse_threshold).collect::<Vec<_>>()
        ),
    ));

    let sc = &cfg.scalar;
    for (case, &r) in sc.r_values.iter().enumerate() {
        let d = required_width_scalar(sc.eps, sc.delta, r)?;
        let part = scalar_rows(seed, case as u64, "scalar", sc, r, d, &line)?;
        let s = rate_summary(&part, Some(1.0 - sc.delta));
        checks.push(rate_check(format!("scalar_rate_R{r}"), &s));
        rates.push(s);
        rows.extend(part);
    }
    let mut mono_r = sc.monotone_r.clone();
    mono_r.sort_unstable();
    mono_r.dedup();
    let mut fixed = Vec::new();
    for &r in &mono_r {
        let part = scalar_rows(seed, 1000 + r as u64, "scalar_fixed_width", sc, r, sc.monotone_width, &line)?;
        let s = rate_summary(&part, None);
        fixed.push(s.estimate);
        rates.push(s);
        rows.extend(part);
    }
    let ordered = fixed.windows(2).all(|p| {
        let slack = (p[0].sigma.powi(2) + p[1].sigma.powi(2)).sqrt();
        p[1].rate >= p[0].rate - slack
    });
    checks.push(Check::new(
        "scalar_monotone",
        ordered,
        format!(
            "d={} R={:?} rates {:?}",
            sc.monotone_width,
            mono_r,
            fixed.iter().map(|e| e.rate).collect::<Vec<_>>()
        ),
    ));

    let oc = &cfg.oracle;
    let outcomes = (0..oc.instances)
        .into_par_iter()
        .map(|t| {
            let mut rng = trial_rng(seed, 3, 0, t as u64);
            let w = rng.random_range(-1.0..=1.0);
            let net = ResampledPair::draw(1, oc.width, 1, oc.r, &mut rng)?;
            let wit = witness_scalar(w, &net, oc.eps, &line)?;
            let orc = brute_force_oracle(&net, w, &line)?;
            let same_pick = orc.picks == wit.picks;
            Ok((orc.sup_error, wit.sup_error, same_pick))
        })
        .collect::<Result<Vec<_>, TheoryError>>()?;
    let dominated = outcomes.iter().filter(|(o, w, _)| *o <= *w + 1e-12).count();
    let matched = outcomes.iter().filter(|(_, _, s)| *s).count();
    let agree = outcomes
        .iter()
        .filter(|(_, _, s)| *s)
        .all(|(o, w, _)| (o - w).abs() <= 1e-12);
    checks.push(Check::new(
        "oracle_dominance",
        dominated == oc.instances,
        format!("{dominated}/{} instances", oc.instances),
    ));
    checks.push(Check::new(
        "oracle_agreement",
        agree,
        format!("{matched} instances with identical picks"),
    ));
    rows.extend(outcomes.iter().enumerate().map(|(t, &(o, w, _))| TrialRow {
        suite: "oracle".into(),
        eps: oc.eps,
        delta: 0.0,
        r: oc.r,
        d: oc.width,
        trial: t,
        sup_error: o,
        success: o <= w + 1e-12,
    }));

    let lc = &cfg.linear;
    let width = required_width_linear(lc.d0, lc.d2, lc.eps, lc.delta, lc.r)?;
    let grid = Grid::for_dim(lc.d0, &mut trial_rng(seed, 4, 0, GRID_TRIAL));
    let part = (0..lc.trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = trial_rng(seed, 4, 0, t as u64);
            let w = random_unit_ball_matrix(lc.d2 * lc.d0, &mut rng);
            let net = ResampledPair::draw(lc.d0, width, lc.d2, lc.r, &mut rng)?;
            let wit = witness_linear_map(&w, &net, lc.eps, &grid)?;
            Ok(TrialRow {
                suite: "linear".into(),
                eps: lc.eps,
                delta: lc.delta,
                r: lc.r,
                d: width,
                trial: t,
                sup_error: wit.sup_error,
                success: wit.success,
            })
        })
        .collect::<Result<Vec<_>, TheoryError>>()?;
    let s = rate_summary(&part, Some(1.0 - lc.delta));
    checks.push(rate_check("linear_rate".into(), &s));
    rates.push(s);
    rows.extend(part);

    let dc = &cfg.deep;
    let widths_deep: Vec<usize> = required_width_deep(&dc.dims, dc.eps, dc.delta, dc.r)?
        .iter()
        .map(|w| w.width)
        .collect();
    let grid = Grid::for_dim(dc.dims[0], &mut trial_rng(seed, 5, 0, GRID_TRIAL));
    let deep = (0..dc.trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = trial_rng(seed, 5, 0, t as u64);
            let target = TargetNetwork::random(dc.dims.clone(), &mut rng)?;
            let inst = DeepInstance::draw(&target, &widths_deep, dc.r, &mut rng)?;
            let wit = witness_deep(&target, &inst, dc.eps, dc.delta, &grid)?;
            Ok((
                TrialRow {
                    suite: "deep".into(),
                    eps: dc.eps,
                    delta: dc.delta,
                    r: dc.r,
                    d: widths_deep[0],
                    trial: t,
                    sup_error: wit.sup_error,
                    success: wit.success,
                },
                !wit.success || wit.induction_holds,
            ))
        })
        .collect::<Result<Vec<_>, TheoryError>>()?;
    let induction = deep.iter().filter(|(_, ok)| *ok).count();
    let part: Vec<TrialRow> = deep.into_iter().map(|(row, _)| row).collect();
    let s = rate_summary(&part, Some(1.0 - dc.delta));
    checks.push(rate_check("deep_rate".into(), &s));
    checks.push(Check::new(
        "deep_induction",
        induction == dc.trials,
        format!("{induction}/{} trials without a violated layer bound", dc.trials),
    ));
    rates.push(s);
    rows.extend(part);

    let pc = &cfg.pairs;
    let mut mismatches = Vec::new();
    for dp in 1..=pc.max_d_prime {
        for r in 1..=pc.max_r {
            let got = count_projection_pairs(dp, r);
            if got != dp * r * r {
                mismatches.push((dp, r, got));
            }
        }
    }
    checks.push(Check::new(
        "pair_count",
        mismatches.is_empty(),
        if mismatches.is_empty() {
            format!("d'≤{} R≤{}", pc.max_d_prime, pc.max_r)
        } else {
            format!("mismatches {mismatches:?}")
        },
    ));

    let passed = checks.iter().all(|c| c.passed);
    Ok(SuiteReport {
        rows,
        summary: SuiteSummary {
            seed,
            samples_required: cover.n,
            widths,
            rates,
            checks,
            passed,
        },
    })
}

/// Writes `theory.csv` and `theory_summary.json` into `dir`.
pub fn write_suite(report: &SuiteReport, dir: &Path) -> Result<(), TheoryError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| TheoryError::Io { path, source }
    };
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    let csv_path = dir.join("theory.csv");
    let mut writer = csv::Writer::from_path(&csv_path)?;
    for row in &report.rows {
        writer.serialize(row)?;
    }
    writer.flush().map_err(io(&csv_path))?;
    let json_path = dir.join("theory_summary.json");
    let json = serde_json::to_string_pretty(&report.summary).expect("summary serializes");
    std::fs::write(&json_path, json + "\n").map_err(io(&json_path))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> TheorySuiteConfig {
        TheorySuiteConfig::from_toml(
            "seed = 3\n[cover]\ntrials = 200\n[scalar]\ntrials = 60\n[oracle]\ninstances = 5\n\
             [linear]\ntrials = 10\n[deep]\ntrials = 3\n",
            &[],
        )
        .unwrap()
    }

    #[test]
    fn defaults_parse_from_empty_text() {
        let cfg = TheorySuiteConfig::from_toml("", &[]).unwrap();
        assert_eq!(cfg, TheorySuiteConfig::default());
        assert_eq!(cfg.scalar.trials, 500);
        assert_eq!(cfg.deep.eps, 1.0);
    }

    #[test]
    fn zero_trials_rejected_by_key() {
        for key in ["cover.trials", "scalar.trials", "linear.trials", "deep.trials", "oracle.instances"] {
            let err = TheorySuiteConfig::from_toml("", &[format!("{key}=0")]).unwrap_err();
            assert_eq!(err.key(), Some(key));
        }
        let err = TheorySuiteConfig::from_toml("[deep]\nbogus = 1\n", &[]).unwrap_err();
        assert_eq!(err.key(), Some("deep.bogus"));
        let err = TheorySuiteConfig::from_toml("", &["scalar.eps=1.5".into()]).unwrap_err();
        assert_eq!(err.key(), Some("scalar.eps"));
        assert!(TheorySuiteConfig::from_toml("", &["oracle.width=12".into()]).is_err());
    }

    #[test]
    fn cover_edge_cases() {
        let mut rng = substream_rng(0, 0);
        for _ in 0..100 {
            assert!(cover_trial(1, 2.0, None, &mut rng).1);
            assert!(!cover_trial(0, 0.5, None, &mut rng).1);
        }
        let rep = verify_sample_cover(0.1, 0.05, 2000, 0).unwrap();
        assert_eq!(rep.n, 60);
        assert_eq!(rep.rows.len(), 4000);
        let floor = two_sigma_floor(0.95, 2000);
        assert!(rep.uniform.rate >= floor && rep.edge.rate >= floor, "{rep:?}");
        assert!(verify_sample_cover(0.1, 0.05, 0, 0).is_err());
    }

    #[test]
    fn small_suite_is_deterministic() {
        let cfg = small();
        let a = run_theory_suite(&cfg).unwrap();
        let b = run_theory_suite(&cfg).unwrap();
        assert_eq!(a.rows, b.rows);
        assert_eq!(a.summary, b.summary);
        assert_eq!(a.summary.samples_required, 60);
        let widths: Vec<usize> = a.summary.widths.iter().map(|w| w.scalar).collect();
        assert_eq!(widths, vec![384, 24, 6]);
        for name in ["width_monotone", "width_collapse", "oracle_dominance", "oracle_agreement", "pair_count"] {
            let c = a.summary.checks.iter().find(|c| c.name == name).unwrap();
            assert!(c.passed, "{c:?}");
        }
    }

    #[test]
    fn outputs_written() {
        let mut cfg = small();
        cfg.scalar.r_values = vec![4];
        let report = run_theory_suite(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_suite(&report, dir.path()).unwrap();
        let csv = std::fs::read_to_string(dir.path().join("theory.csv")).unwrap();
        assert_eq!(csv.lines().next().unwrap(), TRIAL_CSV_HEADER);
        assert_eq!(csv.lines().count(), report.rows.len() + 1);
        let json: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("theory_summary.json")).unwrap()).unwrap();
        assert_eq!(json["passed"].as_bool(), Some(report.summary.passed));
        assert!(json["rates"][0]["estimate"]["ci_low"].is_number());
    }
}
