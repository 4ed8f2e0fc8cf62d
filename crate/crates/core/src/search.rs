//! Latency-aware multi-objective search.
//!
//! Candidates are scored with `accuracy * (latency / target)^w`. Two
//! controllers share one evaluator interface: an independent random-sampling
//! baseline and regularized (aging) evolution.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::accel::AcceleratorConfig;
use crate::estimator::Estimator;
use crate::ir::ModelGraph;
use crate::space::{decode, mutate_with, sample_with, ArchGenome, Skeleton};
use crate::surrogate::{predict, predict_from_table, AccuracyTable, SurrogateParams};

pub type BoxError = Box<dyn std::error::Error + Send + Sync>;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewardMode {
    #[default]
    Soft,
    Hard,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardSpec {
    pub target_latency_us: f64,
    pub exponent: f64,
    pub mode: RewardMode,
}

impl RewardSpec {
    pub fn soft(target_latency_us: f64) -> Self {
        Self {
            target_latency_us,
            exponent: -0.07,
            mode: RewardMode::Soft,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SearchError {
    #[error("latency must be positive, got {0}")]
    NonPositiveLatency(f64),
    #[error("invalid reward spec: {0}")]
    Reward(&'static str),
    #[error("invalid search config: {0}")]
    Config(String),
    #[error("evaluation of genome {genome} failed: {message}")]
    Evaluator { genome: String, message: String },
}

pub fn reward(accuracy: f64, latency_us: f64, spec: &RewardSpec) -> Result<f64, SearchError> {
    if !(latency_us > 0.0) {
        return Err(SearchError::NonPositiveLatency(latency_us));
    }
    if !(spec.target_latency_us > 0.0) {
        return Err(SearchError::Reward("target latency must be positive"));
    }
    if !(spec.exponent <= 0.0) {
        return Err(SearchError::Reward("exponent must be non-positive"));
    }
    let penalty = (latency_us / spec.target_latency_us).powf(spec.exponent);
    Ok(match spec.mode {
        RewardMode::Hard if latency_us <= spec.target_latency_us => accuracy,
        _ => accuracy * penalty,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Random,
    Evolution,
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "random" => Ok(Algorithm::Random),
            "evolution" => Ok(Algorithm::Evolution),
            other => Err(format!("unknown algorithm {other:?} (expected random or evolution)")),
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::Random => "random",
            Algorithm::Evolution => "evolution",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchConfig {
    /// Total number of evaluations.
    pub budget: usize,
    pub algorithm: Algorithm,
    pub population: usize,
    pub sample_size: usize,
    pub seed: u64,
    pub reward: RewardSpec,
}

impl SearchConfig {
    pub fn new(algorithm: Algorithm, budget: usize, seed: u64, reward: RewardSpec) -> Self {
        Self {
            budget,
            algorithm,
            population: 64,
            sample_size: 16,
            seed,
            reward,
        }
    }

    pub fn validate(&self) -> Result<(), SearchError> {
        if self.budget == 0 {
            return Err(SearchError::Config("budget must be at least 1".into()));
        }
        if self.algorithm == Algorithm::Evolution
            && !(1 <= self.sample_size
                && self.sample_size <= self.population
                && self.population <= self.budget)
        {
            return Err(SearchError::Config(format!(
                "need 1 <= sample_size ({}) <= population ({}) <= budget ({})",
                self.sample_size, self.population, self.budget
            )));
        }
        reward(0.5, 1.0, &self.reward)?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub latency_us: f64,
    pub macs: u64,
    pub params: u64,
}

/// Scores genomes. Implementations must tolerate concurrent calls.
pub trait Evaluator: Sync {
    fn skeleton(&self) -> &Skeleton;
    fn evaluate(&self, genome: &ArchGenome) -> Result<Evaluation, BoxError>;
}

/// Latency of a decoded model; local estimators and remote clients both fit.
pub trait LatencyEstimator: Sync {
    fn latency_us(&self, graph: &ModelGraph) -> Result<f64, BoxError>;
}

#[derive(Clone, Debug)]
pub struct LocalEstimator {
    pub estimator: Estimator,
    pub config: AcceleratorConfig,
}

impl LatencyEstimator for LocalEstimator {
    fn latency_us(&self, graph: &ModelGraph) -> Result<f64, BoxError> {
        Ok(self.estimator.latency_us(graph, &self.config)?)
    }
}

#[derive(Clone, Debug)]
pub enum AccuracySource {
    Surrogate(SurrogateParams),
    /// Table lookup, falling back to the parametric curve on a miss when set.
    Table {
        table: AccuracyTable,
        fallback: Option<SurrogateParams>,
    },
}

impl AccuracySource {
    fn accuracy(&self, graph: &ModelGraph) -> Result<f64, BoxError> {
        match self {
            AccuracySource::Surrogate(p) => Ok(predict(graph, p)),
            AccuracySource::Table { table, fallback } => match predict_from_table(graph, table) {
                Ok(a) => Ok(a),
                Err(e) => match fallback {
                    Some(p) => Ok(predict(graph, p)),
                    None => Err(e.into()),
                },
            },
        }
    }
}

/// Decodes a genome, estimates its latency and looks up its accuracy.
pub struct GenomeEvaluator<L> {
    pub skeleton: Skeleton,
    pub latency: L,
    pub accuracy: AccuracySource,
}

impl<L: LatencyEstimator> Evaluator for GenomeEvaluator<L> {
    fn skeleton(&self) -> &Skeleton {
        &self.skeleton
    }

    fn evaluate(&self, genome: &ArchGenome) -> Result<Evaluation, BoxError> {
        let graph = decode(genome, &self.skeleton)?;
        let cost = graph.total_cost()?;
        Ok(Evaluation {
            accuracy: self.accuracy.accuracy(&graph)?,
            latency_us: self.latency.latency_us(&graph)?,
            macs: cost.macs,
            params: cost.params,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub genome: ArchGenome,
    pub accuracy: f64,
    pub latency_us: f64,
    pub macs: u64,
    pub params: u64,
    pub reward: f64,
    /// Position in the search history; doubles as age for evolution.
    pub birth_index: usize,
}

fn evaluate_all<E: Evaluator + ?Sized>(
    genomes: Vec<ArchGenome>,
    first_index: usize,
    evaluator: &E,
    spec: &RewardSpec,
) -> Result<Vec<Candidate>, SearchError> {
    let results: Vec<_> = genomes.par_iter().map(|g| evaluator.evaluate(g)).collect();
    genomes
        .into_iter()
        .zip(results)
        .enumerate()
        .map(|(i, (genome, result))| {
            let eval = result.map_err(|e| SearchError::Evaluator {
                genome: genome.to_json(),
                message: e.to_string(),
            })?;
            Ok(Candidate {
                reward: reward(eval.accuracy, eval.latency_us, spec)?,
                genome,
                accuracy: eval.accuracy,
                latency_us: eval.latency_us,
                macs: eval.macs,
                params: eval.params,
                birth_index: first_index + i,
            })
        })
        .collect()
}

/// `budget` independent uniform samples.
pub fn random_search<E: Evaluator + ?Sized>(
    cfg: &SearchConfig,
    evaluator: &E,
) -> Result<Vec<Candidate>, SearchError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let genomes = (0..cfg.budget)
        .map(|_| sample_with(evaluator.skeleton(), &mut rng))
        .collect();
    evaluate_all(genomes, 0, evaluator, &cfg.reward)
}

/// Regularized evolution: tournament of `sample_size` drawn from the living
/// population, the winner's mutant joins and the oldest member dies.
pub fn evolution_search<E: Evaluator + ?Sized>(
    cfg: &SearchConfig,
    evaluator: &E,
) -> Result<Vec<Candidate>, SearchError> {
    cfg.validate()?;
    let skeleton = evaluator.skeleton();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let initial = (0..cfg.population.min(cfg.budget))
        .map(|_| sample_with(skeleton, &mut rng))
        .collect();
    let mut history = evaluate_all(initial, 0, evaluator, &cfg.reward)?;
    let mut population: VecDeque<usize> = (0..history.len()).collect();

    while history.len() < cfg.budget {
        let contenders = rand::seq::index::sample(&mut rng, population.len(), cfg.sample_size);
        let parent = contenders
            .iter()
            .map(|slot| population[slot])
            .reduce(|best, idx| {
                let (a, b) = (&history[best], &history[idx]);
                if b.reward > a.reward || (b.reward == a.reward && b.birth_index < a.birth_index) {
                    idx
                } else {
                    best
                }
            })
            .expect("sample_size >= 1");
        let child = mutate_with(&history[parent].genome, skeleton, &mut rng);
        let next = history.len();
        history.extend(evaluate_all(vec![child], next, evaluator, &cfg.reward)?);
        population.push_back(next);
        population.pop_front();
    }
    Ok(history)
}

pub fn run_search<E: Evaluator + ?Sized>(
    cfg: &SearchConfig,
    evaluator: &E,
) -> Result<Vec<Candidate>, SearchError> {
    match cfg.algorithm {
        Algorithm::Random => random_search(cfg, evaluator),
        Algorithm::Evolution => evolution_search(cfg, evaluator),
    }
}

/// Running maximum of reward over the history.
pub fn best_so_far(history: &[Candidate]) -> Vec<f64> {
    history
        .iter()
        .scan(f64::NEG_INFINITY, |best, c| {
            *best = best.max(c.reward);
            Some(*best)
        })
        .collect()
}

pub fn best_candidate(history: &[Candidate]) -> Option<&Candidate> {
    history.iter().reduce(|a, b| if b.reward > a.reward { b } else { a })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParetoPoint {
    pub latency_us: f64,
    pub accuracy: f64,
    /// Index into the input slice.
    pub index: usize,
    pub genome: ArchGenome,
}

/// Indices of the non-dominated `(latency, accuracy)` points (minimize latency,
/// maximize accuracy), sorted by latency. Exact duplicates keep the first.
pub fn pareto_indices(points: &[(f64, f64)]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        let (pa, pb) = (points[a], points[b]);
        pa.0.total_cmp(&pb.0)
            .then(pb.1.total_cmp(&pa.1))
            .then(a.cmp(&b))
    });
    let mut best = f64::NEG_INFINITY;
    order
        .into_iter()
        .filter(|&i| {
            let keep = points[i].1 > best;
            if keep {
                best = points[i].1;
            }
            keep
        })
        .collect()
}

pub fn pareto_front(candidates: &[Candidate]) -> Vec<ParetoPoint> {
    let points: Vec<_> = candidates.iter().map(|c| (c.latency_us, c.accuracy)).collect();
    pareto_indices(&points)
        .into_iter()
        .map(|i| ParetoPoint {
            latency_us: candidates[i].latency_us,
            accuracy: candidates[i].accuracy,
            index: i,
            genome: candidates[i].genome.clone(),
        })
        .collect()
}
