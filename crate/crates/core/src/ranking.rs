//! Bradley-Terry ratings from pairwise human preferences.
//!
//! `p(A beats B) = 1 / (1 + exp(θ_B - θ_A))`. Strengths are fit by maximum
//! likelihood with damped Newton steps, then reported on the Elo scale
//! (`400 / ln 10` points per unit of θ) with the mean pinned to an anchor.
//! Disconnected comparison graphs are fit and anchored per component.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const ELO_SCALE: f64 = 400.0 / std::f64::consts::LN_10;
pub const DEFAULT_ANCHOR: f64 = 1000.0;

#[derive(Debug, Error)]
pub enum RankingError {
    #[error("preference log has no usable comparisons")]
    Empty,
    #[error("need at least two models, found {0}")]
    TooFewModels(usize),
    #[error("no decisive matches between {0} and {1}")]
    NoDecisive(String, String),
    #[error("no matches between {0} and {1}")]
    NoMatches(String, String),
    #[error("record {line}: model compared against itself ({model})")]
    SelfMatch { line: usize, model: String },
    #[error("unknown verdict {0:?}")]
    Verdict(String),
    #[error("maximum-likelihood ratings do not exist: {0}")]
    Unbounded(String),
    #[error("fit did not converge after {iterations} iterations (max step {max_step:e}, gradient norm {gradient_norm:e})")]
    NoConvergence {
        iterations: usize,
        max_step: f64,
        gradient_norm: f64,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, RankingError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    #[serde(rename = "a")]
    AWins,
    #[serde(rename = "b")]
    BWins,
    TieGood,
    TieBad,
    Idk,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::AWins => "a",
            Verdict::BWins => "b",
            Verdict::TieGood => "tie_good",
            Verdict::TieBad => "tie_bad",
            Verdict::Idk => "idk",
        }
    }

    pub fn is_tie(self) -> bool {
        matches!(self, Verdict::TieGood | Verdict::TieBad)
    }

    /// The same verdict seen from the other side.
    pub fn swapped(self) -> Self {
        match self {
            Verdict::AWins => Verdict::BWins,
            Verdict::BWins => Verdict::AWins,
            other => other,
        }
    }
}

impl FromStr for Verdict {
    type Err = RankingError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim() {
            "a" => Verdict::AWins,
            "b" => Verdict::BWins,
            "tie_good" => Verdict::TieGood,
            "tie_bad" => Verdict::TieBad,
            "idk" => Verdict::Idk,
            other => return Err(RankingError::Verdict(other.to_string())),
        })
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Outcome {
    pub model_a: String,
    pub model_b: String,
    pub verdict: Verdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
}

impl Outcome {
    pub fn new(a: impl Into<String>, b: impl Into<String>, verdict: Verdict) -> Self {
        Self {
            model_a: a.into(),
            model_b: b.into(),
            verdict,
            category: None,
        }
    }

    pub fn swapped(&self) -> Self {
        Self {
            model_a: self.model_b.clone(),
            model_b: self.model_a.clone(),
            verdict: self.verdict.swapped(),
            category: self.category.clone(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferenceLog {
    pub outcomes: Vec<Outcome>,
}

impl PreferenceLog {
    pub fn new(outcomes: Vec<Outcome>) -> Self {
        Self { outcomes }
    }

    pub fn len(&self) -> usize {
        self.outcomes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcomes.is_empty()
    }

    /// Reads `model_a,model_b,verdict[,category]` with a header row.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(input);
        let mut outcomes = Vec::new();
        for (i, record) in reader.records().enumerate() {
            let record = record?;
            let line = i + 2;
            let field = |k: usize| record.get(k).unwrap_or("").to_string();
            let outcome = Outcome {
                model_a: field(0),
                model_b: field(1),
                verdict: field(2).parse()?,
                category: record.get(3).filter(|c| !c.is_empty()).map(str::to_string),
            };
            if outcome.model_a == outcome.model_b {
                return Err(RankingError::SelfMatch { line, model: outcome.model_a });
            }
            outcomes.push(outcome);
        }
        Ok(Self { outcomes })
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["model_a", "model_b", "verdict", "category"])?;
        for o in &self.outcomes {
            w.write_record([
                o.model_a.as_str(),
                o.model_b.as_str(),
                o.verdict.as_str(),
                o.category.as_deref().unwrap_or(""),
            ])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    /// Sorted, de-duplicated model ids.
    pub fn models(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self
            .outcomes
            .iter()
            .flat_map(|o| [o.model_a.as_str(), o.model_b.as_str()])
            .collect();
        set.into_iter().map(str::to_string).collect()
    }
}

/// Drops "I don't know" responses, keeping everything else in order.
pub fn filter_idk(log: &PreferenceLog) -> PreferenceLog {
    PreferenceLog::new(
        log.outcomes
            .iter()
            .filter(|o| o.verdict != Verdict::Idk)
            .cloned()
            .collect(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TiePolicy {
    /// Each tie counts as half a win for both sides.
    #[default]
    HalfWin,
    /// Ties are dropped from the likelihood.
    Ignore,
}

impl FromStr for TiePolicy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "half_win" | "half-win" => Ok(Self::HalfWin),
            "ignore" => Ok(Self::Ignore),
            other => Err(format!("unknown tie policy {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub anchor: f64,
    pub tie_policy: TiePolicy,
    pub max_iterations: usize,
    /// Convergence when the largest parameter change falls below this.
    pub tolerance: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            anchor: DEFAULT_ANCHOR,
            tie_policy: TiePolicy::HalfWin,
            max_iterations: 10_000,
            tolerance: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRating {
    pub model: String,
    pub rating: f64,
    /// Raw Bradley-Terry strength, mean-zero within its component.
    pub strength: f64,
    pub component: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingTable {
    /// Sorted by rating, highest first; ties by model id.
    pub ratings: Vec<ModelRating>,
    pub iterations: usize,
    pub gradient_norm: f64,
    pub log_likelihood: f64,
    /// Log-likelihood with every strength equal.
    pub initial_log_likelihood: f64,
    pub components: usize,
    pub warnings: Vec<String>,
}

impl RatingTable {
    pub fn rating(&self, model: &str) -> Option<f64> {
        self.ratings.iter().find(|r| r.model == model).map(|r| r.rating)
    }

    /// CSV `rank,model,rating`, highest rating first.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["rank", "model", "rating"])?;
        for (i, r) in self.ratings.iter().enumerate() {
            w.write_record([(i + 1).to_string(), r.model.clone(), format!("{:.2}", r.rating)])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

/// Pairwise win weights: `wins[i][j]` is i's (possibly fractional) wins over j.
struct Tally {
    models: Vec<String>,
    wins: Vec<Vec<f64>>,
}

impl Tally {
    fn build(log: &PreferenceLog, policy: TiePolicy) -> Self {
        let mut index: BTreeMap<&str, usize> = BTreeMap::new();
        for o in &log.outcomes {
            if o.verdict == Verdict::Idk || (policy == TiePolicy::Ignore && o.verdict.is_tie()) {
                continue;
            }
            index.entry(&o.model_a).or_default();
            index.entry(&o.model_b).or_default();
        }
        for (i, v) in index.values_mut().enumerate() {
            *v = i;
        }
        let n = index.len();
        let mut wins = vec![vec![0.0; n]; n];
        for o in &log.outcomes {
            let (Some(&a), Some(&b)) = (index.get(o.model_a.as_str()), index.get(o.model_b.as_str())) else {
                continue;
            };
            match o.verdict {
                Verdict::AWins => wins[a][b] += 1.0,
                Verdict::BWins => wins[b][a] += 1.0,
                Verdict::TieGood | Verdict::TieBad if policy == TiePolicy::HalfWin => {
                    wins[a][b] += 0.5;
                    wins[b][a] += 0.5;
                }
                _ => {}
            }
        }
        Self {
            models: index.keys().map(|s| s.to_string()).collect(),
            wins,
        }
    }

    fn games(&self, i: usize, j: usize) -> f64 {
        self.wins[i][j] + self.wins[j][i]
    }

    fn components(&self) -> Vec<Vec<usize>> {
        let n = self.models.len();
        let mut seen = vec![false; n];
        let mut comps = Vec::new();
        for start in 0..n {
            if seen[start] {
                continue;
            }
            let mut stack = vec![start];
            let mut comp = Vec::new();
            seen[start] = true;
            while let Some(i) = stack.pop() {
                comp.push(i);
                for j in 0..n {
                    if !seen[j] && self.games(i, j) > 0.0 {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
            comp.sort_unstable();
            comps.push(comp);
        }
        comps
    }

    /// Every member must reach every other through "beat" edges (and back);
    /// otherwise some strengths diverge. Returns a member that cannot be reached.
    fn unreachable_by_wins(&self, members: &[usize]) -> Option<usize> {
        let reach = |forward: bool| {
            let mut seen = vec![false; self.models.len()];
            let mut stack = vec![members[0]];
            seen[members[0]] = true;
            while let Some(i) = stack.pop() {
                for &j in members {
                    let w = if forward { self.wins[i][j] } else { self.wins[j][i] };
                    if !seen[j] && w > 0.0 {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
            members.iter().copied().find(|&m| !seen[m])
        };
        reach(true).or_else(|| reach(false))
    }
}

fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn log_likelihood(wins: &[Vec<f64>], members: &[usize], theta: &[f64]) -> f64 {
    let mut ll = 0.0;
    for (a, &i) in members.iter().enumerate() {
        for (b, &j) in members.iter().enumerate() {
            if wins[i][j] > 0.0 {
                ll += wins[i][j] * log_sigmoid(theta[a] - theta[b]);
            }
        }
    }
    ll
}

struct ComponentFit {
    theta: Vec<f64>,
    iterations: usize,
    gradient_norm: f64,
    log_likelihood: f64,
    initial_log_likelihood: f64,
}

/// Damped Newton ascent on one connected component, mean-zero gauge.
fn fit_component(tally: &Tally, members: &[usize], opts: &FitOptions) -> Result<ComponentFit> {
    let k = members.len();
    let mut theta = vec![0.0; k];
    let initial = log_likelihood(&tally.wins, members, &theta);
    if k == 1 {
        return Ok(ComponentFit {
            theta,
            iterations: 0,
            gradient_norm: 0.0,
            log_likelihood: initial,
            initial_log_likelihood: initial,
        });
    }

    let mut ll = initial;
    let mut gradient_norm = f64::INFINITY;
    let mut last_step = f64::INFINITY;
    for iteration in 1..=opts.max_iterations {
        let mut grad = DVector::<f64>::zeros(k);
        let mut info = DMatrix::<f64>::zeros(k, k);
        for a in 0..k {
            for b in (a + 1)..k {
                let (i, j) = (members[a], members[b]);
                let n = tally.games(i, j);
                if n == 0.0 {
                    continue;
                }
                let p = sigmoid(theta[a] - theta[b]);
                let g = tally.wins[i][j] - n * p;
                grad[a] += g;
                grad[b] -= g;
                let w = n * p * (1.0 - p);
                info[(a, a)] += w;
                info[(b, b)] += w;
                info[(a, b)] -= w;
                info[(b, a)] -= w;
            }
        }
        gradient_norm = grad.norm();

        // The information matrix is a weighted graph Laplacian; adding the
        // all-ones outer product removes the translation null space.
        let regularized = &info + DMatrix::from_element(k, k, 1.0 / k as f64);
        let mut step = match regularized.clone().cholesky() {
            Some(chol) => chol.solve(&grad),
            None => regularized
                .lu()
                .solve(&grad)
                .unwrap_or_else(|| grad.clone()),
        };
        let mean = step.mean();
        step.add_scalar_mut(-mean);

        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let trial: Vec<f64> = theta.iter().zip(step.iter()).map(|(t, s)| t + scale * s).collect();
            let trial_ll = log_likelihood(&tally.wins, members, &trial);
            if trial_ll >= ll - 1e-12 * ll.abs().max(1.0) {
                theta = trial;
                ll = trial_ll;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        last_step = if accepted {
            step.iter().map(|s| (s * scale).abs()).fold(0.0, f64::max)
        } else {
            0.0
        };
        if last_step < opts.tolerance {
            return Ok(ComponentFit {
                theta,
                iterations: iteration,
                gradient_norm,
                log_likelihood: ll,
                initial_log_likelihood: initial,
            });
        }
    }
    Err(RankingError::NoConvergence {
        iterations: opts.max_iterations,
        max_step: last_step,
        gradient_norm,
    })
}

pub fn fit_bradley_terry(log: &PreferenceLog, opts: &FitOptions) -> Result<RatingTable> {
    let tally = Tally::build(log, opts.tie_policy);
    if tally.models.is_empty() {
        return Err(RankingError::Empty);
    }
    if tally.models.len() < 2 {
        return Err(RankingError::TooFewModels(tally.models.len()));
    }

    let components = tally.components();
    let mut warnings = Vec::new();
    if components.len() > 1 {
        let msg = format!(
            "comparison graph has {} disconnected components; each is anchored separately and ratings are not comparable across them",
            components.len()
        );
        warn!("{msg}");
        warnings.push(msg);
    }

    let mut ratings = Vec::with_capacity(tally.models.len());
    let mut iterations = 0;
    let mut gradient_sq = 0.0;
    let mut ll = 0.0;
    let mut initial_ll = 0.0;
    for members in &components {
        if let Some(m) = tally.unreachable_by_wins(members) {
            return Err(RankingError::Unbounded(format!(
                "the win/loss record of {} is separated from the rest of its component (some model never loses or never wins)",
                tally.models[m]
            )));
        }
    }
    for (c, members) in components.iter().enumerate() {
        let fit = fit_component(&tally, members, opts)?;
        iterations = iterations.max(fit.iterations);
        gradient_sq += fit.gradient_norm * fit.gradient_norm;
        ll += fit.log_likelihood;
        initial_ll += fit.initial_log_likelihood;
        let mean = fit.theta.iter().sum::<f64>() / fit.theta.len() as f64;
        for (&i, &t) in members.iter().zip(&fit.theta) {
            let strength = t - mean;
            ratings.push(ModelRating {
                model: tally.models[i].clone(),
                rating: opts.anchor + strength * ELO_SCALE,
                strength,
                component: c,
            });
        }
    }
    ratings.sort_by(|a, b| b.rating.total_cmp(&a.rating).then_with(|| a.model.cmp(&b.model)));

    Ok(RatingTable {
        ratings,
        iterations,
        gradient_norm: gradient_sq.sqrt(),
        log_likelihood: ll,
        initial_log_likelihood: initial_ll,
        components: components.len(),
        warnings,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairCounts {
    pub wins: u64,
    pub losses: u64,
    pub tie_good: u64,
    pub tie_bad: u64,
    pub idk: u64,
}

/// Outcome counts for `model` against `opponent`, in either seat.
pub fn pair_counts(log: &PreferenceLog, model: &str, opponent: &str) -> PairCounts {
    let mut c = PairCounts::default();
    for o in &log.outcomes {
        let verdict = if o.model_a == model && o.model_b == opponent {
            o.verdict
        } else if o.model_a == opponent && o.model_b == model {
            o.verdict.swapped()
        } else {
            continue;
        };
        match verdict {
            Verdict::AWins => c.wins += 1,
            Verdict::BWins => c.losses += 1,
            Verdict::TieGood => c.tie_good += 1,
            Verdict::TieBad => c.tie_bad += 1,
            Verdict::Idk => c.idk += 1,
        }
    }
    c
}

/// `wins / (wins + losses)` for `model` against `baseline`; ties and IDK excluded.
pub fn win_rate(log: &PreferenceLog, model: &str, baseline: &str) -> Result<f64> {
    let c = pair_counts(log, model, baseline);
    let decisive = c.wins + c.losses;
    if decisive == 0 {
        return Err(RankingError::NoDecisive(model.into(), baseline.into()));
    }
    Ok(c.wins as f64 / decisive as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutcomeBreakdown {
    pub a_wins: f64,
    pub b_wins: f64,
    pub tie_good: f64,
    pub tie_bad: f64,
}

/// Fractions of wins, losses and both kinds of tie between two models. IDK
/// responses are not counted.
pub fn outcome_breakdown(log: &PreferenceLog, model_a: &str, model_b: &str) -> Result<OutcomeBreakdown> {
    let c = pair_counts(log, model_a, model_b);
    let total = c.wins + c.losses + c.tie_good + c.tie_bad;
    if total == 0 {
        return Err(RankingError::NoMatches(model_a.into(), model_b.into()));
    }
    let t = total as f64;
    Ok(OutcomeBreakdown {
        a_wins: c.wins as f64 / t,
        b_wins: c.losses as f64 / t,
        tie_good: c.tie_good as f64 / t,
        tie_bad: c.tie_bad as f64 / t,
    })
}

/// `matrix[i][j]` is the win rate of `models[i]` over `models[j]`, `None`
/// where undefined.
pub fn win_rate_matrix(log: &PreferenceLog) -> (Vec<String>, Vec<Vec<Option<f64>>>) {
    let models = log.models();
    let matrix = models
        .iter()
        .map(|a| {
            models
                .iter()
                .map(|b| if a == b { None } else { win_rate(log, a, b).ok() })
                .collect()
        })
        .collect();
    (models, matrix)
}
