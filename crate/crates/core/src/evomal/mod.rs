//! Symbolic loss discovery: genetic programming over expression trees with
//! gradient-based local search of each candidate's edge weights.

mod filters;
mod local;

use std::collections::HashMap;
use std::fmt::Write as _;
use std::time::{Duration, Instant};

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::harness::{train, HarnessError, LossFn, OptimizerConfig, Task, TrainConfig};
use crate::lossnet::{transition, LossNetError, LossNetwork, WeightInit};
use crate::rng::derive_rng;
use crate::symbolic::{
    crossover_one_point, init_population, mutate_uniform, tournament_select, ExprTree, GpConfig,
    SymbolicError,
};

pub use filters::{gradient_signature, rejection_protocol, two_digits, Probe};
pub use local::{optimize_loss, optimize_loss_tasks, MetaProblem};

pub const OPT_STREAM: u64 = 20;
pub const REJECT_STREAM: u64 = 21;
pub const PROBE_STREAM: u64 = 22;
pub const GP_STREAM: u64 = 23;
pub const CANDIDATE_STREAM: u64 = 24;

/// Fitness given to candidates that failed or were rejected.
pub const WORST_FITNESS: f64 = f64::MAX;

#[derive(Debug, Error)]
pub enum EvoError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("local search diverged at meta step {step}")]
    Diverged { step: usize },
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error(transparent)]
    LossNet(#[from] LossNetError),
    #[error(transparent)]
    Symbolic(#[from] SymbolicError),
    #[error(transparent)]
    Autodiff(#[from] crate::autodiff::AutodiffError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaConfig {
    pub meta_steps: usize,
    pub base_steps: usize,
    pub meta_lr: f64,
    /// Off runs plain GP (weights stay at their initial values).
    pub local_search: bool,
    pub rejection_batch: usize,
    pub rejection_steps: usize,
    pub rejection_lr: f64,
    pub probe_size: usize,
    pub weight_init: WeightInit,
    /// Softplus wrapper on every candidate's output.
    pub nonneg: bool,
    /// Fitness training: `steps` is the truncated evaluation length and the
    /// optimizer's rate is the unrolled step size.
    pub base: TrainConfig,
    /// Worker threads; 0 uses all cores.
    pub workers: usize,
}

impl Default for MetaConfig {
    fn default() -> Self {
        MetaConfig {
            meta_steps: 250,
            base_steps: 1,
            meta_lr: 1e-3,
            local_search: true,
            rejection_batch: 256,
            rejection_steps: 100,
            rejection_lr: 0.05,
            probe_size: 64,
            weight_init: WeightInit::Gaussian,
            nonneg: true,
            base: TrainConfig {
                steps: 500,
                eval_every: 0,
                ..TrainConfig::default()
            },
            workers: 0,
        }
    }
}

impl MetaConfig {
    pub fn validate(&self) -> Result<(), EvoError> {
        let bad = |m: &str| Err(EvoError::Config(m.to_string()));
        if self.meta_steps == 0 || self.base_steps == 0 || self.base.steps == 0 {
            return bad("step counts must be at least 1");
        }
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !(self.meta_lr >= 0.0 && self.meta_lr.is_finite())
            || !positive(self.rejection_lr)
            || !positive(self.base.optimizer.lr())
        {
            return bad("rates must be positive");
        }
        if self.rejection_batch == 0 || self.probe_size == 0 || self.base.batch_size == 0 {
            return bad("batch sizes must be positive");
        }
        if !matches!(self.base.optimizer, OptimizerConfig::Sgd { .. }) {
            return bad("local search unrolls plain SGD; use an sgd base optimizer");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Evaluated,
    EquivHit,
    Rejected,
    GradDup,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitnessRecord {
    pub key: String,
    pub fitness: f64,
    pub verdict: Verdict,
    pub network: LossNetwork,
    pub rejection_score: f64,
    pub generation: usize,
    #[serde(skip)]
    pub wall_time: Duration,
}

/// Train a fresh model under `net` for the truncated horizon and return the
/// validation metric (worst case on divergence).
pub fn evaluate_fitness(net: &LossNetwork, task: &Task, cfg: &MetaConfig) -> Result<f64, EvoError> {
    match train(task, &LossFn::Network(net.clone()), &cfg.base) {
        Ok(r) => Ok(if r.final_valid_metric.is_finite() {
            r.final_valid_metric
        } else {
            WORST_FITNESS
        }),
        Err(HarnessError::Diverged { .. }) => Ok(WORST_FITNESS),
        Err(e) => Err(e.into()),
    }
}

/// Mean [`evaluate_fitness`] over `tasks`; worst if any task diverges.
pub fn evaluate_fitness_tasks(
    net: &LossNetwork,
    tasks: &[Task],
    cfg: &MetaConfig,
) -> Result<f64, EvoError> {
    let mut total = 0.0;
    for task in tasks {
        let f = evaluate_fitness(net, task, cfg)?;
        if f == WORST_FITNESS {
            return Ok(WORST_FITNESS);
        }
        total += f;
    }
    Ok(total / tasks.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub generation: usize,
    pub best_fitness: f64,
    pub mean_fitness: f64,
    pub evaluated: usize,
    pub cache_hits: usize,
    pub rejected: usize,
    pub grad_dups: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolveReport {
    /// Distinct candidates, best first.
    pub ranked: Vec<FitnessRecord>,
    pub generations: Vec<GenerationStats>,
}

impl EvolveReport {
    pub fn best(&self) -> Option<&FitnessRecord> {
        self.ranked.first()
    }

    /// `generation,best_fitness,mean_fitness,evaluated,cache_hits,rejected,grad_dups`.
    pub fn generations_csv(&self) -> String {
        let mut s = String::from(
            "generation,best_fitness,mean_fitness,evaluated,cache_hits,rejected,grad_dups\n",
        );
        for g in &self.generations {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                g.generation,
                g.best_fitness,
                g.mean_fitness,
                g.evaluated,
                g.cache_hits,
                g.rejected,
                g.grad_dups
            );
        }
        s
    }
}

/// Shared inputs of every candidate pipeline in a run.
struct Context<'a> {
    tasks: &'a [Task],
    cfg: &'a MetaConfig,
    reject: Probe,
    probe: Probe,
}

/// Pre-evaluation result of one new candidate.
struct Prepared {
    network: LossNetwork,
    rejection_score: f64,
    passed: bool,
    signature: Option<String>,
    failed: bool,
    started: Instant,
}

fn prepare(
    ctx: &Context,
    tree: &ExprTree,
    generation: usize,
    index: usize,
) -> Result<Prepared, EvoError> {
    let started = Instant::now();
    let cfg = ctx.cfg;
    let mut rng = derive_rng(
        cfg.base.seed,
        &[CANDIDATE_STREAM, generation as u64, index as u64],
    );
    let net = transition(tree, cfg.weight_init, cfg.nonneg, &mut rng);
    let net = if cfg.local_search {
        match optimize_loss_tasks(&net, ctx.tasks, cfg) {
            Ok(n) => n,
            Err(EvoError::Diverged { .. }) => {
                return Ok(Prepared {
                    network: net,
                    rejection_score: f64::NEG_INFINITY,
                    passed: false,
                    signature: None,
                    failed: true,
                    started,
                })
            }
            Err(e) => return Err(e),
        }
    } else {
        net
    };
    let (score, passed) =
        rejection_protocol(&net, &ctx.reject, cfg.rejection_steps, cfg.rejection_lr)?;
    let signature = if passed {
        Some(gradient_signature(&net, &ctx.probe)?)
    } else {
        None
    };
    Ok(Prepared {
        network: net,
        rejection_score: score,
        passed,
        signature,
        failed: false,
        started,
    })
}

fn offspring(
    gp: &GpConfig,
    pop: &[ExprTree],
    fitness: &[f64],
    generation: usize,
) -> Result<Vec<ExprTree>, EvoError> {
    let mut rng = derive_rng(gp.seed, &[GP_STREAM, generation as u64 + 1]);
    let mut order: Vec<usize> = (0..pop.len()).collect();
    order.sort_by(|&a, &b| fitness[a].total_cmp(&fitness[b]).then(a.cmp(&b)));
    let elites = gp.elite_count().min(pop.len());
    let mut next: Vec<ExprTree> = order[..elites].iter().map(|&i| pop[i].clone()).collect();
    while next.len() < gp.population_size {
        let a = tournament_select(pop, fitness, gp.tournament_k, &mut rng)?;
        let r: f64 = rng.random();
        let child = if r < gp.crossover_rate {
            let b = tournament_select(pop, fitness, gp.tournament_k, &mut rng)?;
            crossover_one_point(&pop[a], &pop[b], gp, &mut rng)
        } else if r < gp.crossover_rate + gp.mutation_rate {
            mutate_uniform(&pop[a], gp, &mut rng)
        } else {
            pop[a].clone()
        };
        next.push(child);
    }
    Ok(next)
}

fn pool(workers: usize) -> Result<rayon::ThreadPool, EvoError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| EvoError::Config(format!("thread pool: {e}")))
}

/// Run the generational loop and rank every distinct candidate seen.
///
/// Each generation goes through the filters in order: symbolic-equivalence
/// cache, local search, rejection, gradient-equivalence cache and finally
/// fitness evaluation. Caches are resolved in candidate order so results do
/// not depend on the worker count.
pub fn evolve(gp: &GpConfig, cfg: &MetaConfig, task: &Task) -> Result<EvolveReport, EvoError> {
    evolve_with(gp, cfg, task, |_| {})
}

/// [`evolve`] with a callback after every generation.
pub fn evolve_with(
    gp: &GpConfig,
    cfg: &MetaConfig,
    task: &Task,
    on_generation: impl FnMut(&GenerationStats),
) -> Result<EvolveReport, EvoError> {
    evolve_tasks(gp, cfg, std::slice::from_ref(task), on_generation)
}

/// Multi-task meta-training: local search sums the per-task meta
/// objectives and fitness is the mean validation metric. Probes for the
/// rejection and gradient filters come from the first task.
pub fn evolve_tasks(
    gp: &GpConfig,
    cfg: &MetaConfig,
    tasks: &[Task],
    on_generation: impl FnMut(&GenerationStats),
) -> Result<EvolveReport, EvoError> {
    gp.validate()?;
    let pop = init_population(gp, &mut derive_rng(gp.seed, &[GP_STREAM]));
    evolve_from(gp, cfg, tasks, pop, on_generation)
}

/// [`evolve_tasks`] from a given initial population instead of a random one.
pub fn evolve_from(
    gp: &GpConfig,
    cfg: &MetaConfig,
    tasks: &[Task],
    initial: Vec<ExprTree>,
    mut on_generation: impl FnMut(&GenerationStats),
) -> Result<EvolveReport, EvoError> {
    gp.validate()?;
    cfg.validate()?;
    if initial.is_empty() {
        return Err(EvoError::Config("initial population is empty".into()));
    }
    let Some(task) = tasks.first() else {
        return Err(EvoError::Config("no meta-training tasks".into()));
    };
    if tasks.iter().any(|t| t.kind != task.kind) {
        return Err(EvoError::Config(
            "meta-training tasks must share a kind".into(),
        ));
    }
    let pool = pool(cfg.workers)?;
    {
        let ctx = Context {
            tasks,
            cfg,
            reject: Probe::rejection(task, cfg),
            probe: Probe::signature(task, cfg),
        };
        let mut by_key: HashMap<String, FitnessRecord> = HashMap::new();
        let mut by_signature: HashMap<String, f64> = HashMap::new();
        let mut insertion: Vec<String> = Vec::new();
        let mut pop = initial;
        let mut stats = Vec::new();
        for generation in 0..=gp.generations {
            let keys: Vec<String> = pop.iter().map(|t| t.canonical_key()).collect();
            let mut fresh: Vec<usize> = Vec::new();
            let mut seen: HashMap<&str, ()> = HashMap::new();
            for (i, k) in keys.iter().enumerate() {
                if !by_key.contains_key(k) && seen.insert(k.as_str(), ()).is_none() {
                    fresh.push(i);
                }
            }
            let prepared: Vec<Result<Prepared, EvoError>> = pool.install(|| {
                fresh
                    .par_iter()
                    .map(|&i| prepare(&ctx, &pop[i], generation, i))
                    .collect()
            });
            let mut prepared = prepared.into_iter().collect::<Result<Vec<_>, _>>()?;

            // resolve gradient duplicates in candidate order
            let mut gs = GenerationStats {
                generation,
                best_fitness: WORST_FITNESS,
                mean_fitness: f64::NAN,
                evaluated: 0,
                cache_hits: 0,
                rejected: 0,
                grad_dups: 0,
            };
            let mut to_eval: Vec<usize> = Vec::new();
            let mut pending_sig: HashMap<String, usize> = HashMap::new();
            let mut dup_of: Vec<Option<usize>> = vec![None; prepared.len()];
            for (slot, p) in prepared.iter().enumerate() {
                if !p.passed {
                    continue;
                }
                let sig = p
                    .signature
                    .as_ref()
                    .expect("passed candidates carry a signature");
                if by_signature.contains_key(sig) {
                    dup_of[slot] = Some(usize::MAX);
                } else if let Some(&first) = pending_sig.get(sig) {
                    dup_of[slot] = Some(first);
                } else {
                    pending_sig.insert(sig.clone(), slot);
                    to_eval.push(slot);
                }
            }
            let fits: Vec<Result<f64, EvoError>> = pool.install(|| {
                to_eval
                    .par_iter()
                    .map(|&s| evaluate_fitness_tasks(&prepared[s].network, tasks, cfg))
                    .collect()
            });
            let mut fitness_of: Vec<f64> = vec![WORST_FITNESS; prepared.len()];
            for (&s, f) in to_eval.iter().zip(fits) {
                fitness_of[s] = f?;
                by_signature.insert(
                    prepared[s].signature.clone().expect("evaluated"),
                    fitness_of[s],
                );
            }
            for slot in 0..prepared.len() {
                if let Some(d) = dup_of[slot] {
                    let sig = prepared[slot]
                        .signature
                        .as_ref()
                        .expect("duplicate has signature");
                    fitness_of[slot] = if d == usize::MAX {
                        by_signature[sig]
                    } else {
                        fitness_of[d]
                    };
                }
            }
            for (slot, p) in prepared.drain(..).enumerate() {
                let i = fresh[slot];
                let verdict = if p.failed {
                    Verdict::Failed
                } else if !p.passed {
                    gs.rejected += 1;
                    Verdict::Rejected
                } else if dup_of[slot].is_some() {
                    gs.grad_dups += 1;
                    Verdict::GradDup
                } else {
                    gs.evaluated += 1;
                    Verdict::Evaluated
                };
                insertion.push(keys[i].clone());
                by_key.insert(
                    keys[i].clone(),
                    FitnessRecord {
                        key: keys[i].clone(),
                        fitness: fitness_of[slot],
                        verdict,
                        network: p.network,
                        rejection_score: p.rejection_score,
                        generation,
                        wall_time: p.started.elapsed(),
                    },
                );
            }
            gs.cache_hits = pop.len() - fresh.len();
            let fitness: Vec<f64> = keys.iter().map(|k| by_key[k].fitness).collect();
            gs.best_fitness = fitness.iter().copied().fold(WORST_FITNESS, f64::min);
            let finite: Vec<f64> = fitness
                .iter()
                .copied()
                .filter(|&f| f < WORST_FITNESS)
                .collect();
            if !finite.is_empty() {
                gs.mean_fitness = finite.iter().sum::<f64>() / finite.len() as f64;
            }
            on_generation(&gs);
            stats.push(gs);
            if generation < gp.generations {
                pop = offspring(gp, &pop, &fitness, generation)?;
            }
        }
        let mut ranked: Vec<FitnessRecord> = insertion.iter().map(|k| by_key[k].clone()).collect();
        ranked.sort_by(|a, b| {
            a.fitness
                .total_cmp(&b.fitness)
                .then_with(|| a.key.cmp(&b.key))
        });
        Ok(EvolveReport {
            ranked,
            generations: stats,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::make_synthetic_regression;
    use crate::rng::rng_from;

    fn quick() -> MetaConfig {
        MetaConfig {
            meta_steps: 3,
            rejection_steps: 10,
            rejection_batch: 32,
            probe_size: 8,
            base: TrainConfig {
                steps: 20,
                hidden: vec![8],
                eval_every: 0,
                ..TrainConfig::default()
            },
            workers: 2,
            ..MetaConfig::default()
        }
    }

    fn gp(gens: usize) -> GpConfig {
        GpConfig {
            population_size: 6,
            generations: gens,
            seed: 3,
            ..GpConfig::default()
        }
    }

    #[test]
    fn zero_generations_ranks_initial_population() {
        let task = make_synthetic_regression(0, 80, 0.1).unwrap();
        let r = evolve(&gp(0), &quick(), &task).unwrap();
        assert_eq!(r.generations.len(), 1);
        assert!(!r.ranked.is_empty() && r.ranked.len() <= 6);
        assert!(r.ranked.windows(2).all(|w| w[0].fitness <= w[1].fitness));
    }

    #[test]
    fn elitism_keeps_best_non_increasing() {
        let task = make_synthetic_regression(0, 80, 0.1).unwrap();
        let r = evolve(&gp(3), &quick(), &task).unwrap();
        assert!(r
            .generations
            .windows(2)
            .all(|w| w[1].best_fitness <= w[0].best_fitness));
        assert_eq!(r.generations_csv().lines().count(), 5);
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let task = make_synthetic_regression(1, 80, 0.1).unwrap();
        let a = evolve(
            &gp(1),
            &MetaConfig {
                workers: 1,
                ..quick()
            },
            &task,
        )
        .unwrap();
        let b = evolve(
            &gp(1),
            &MetaConfig {
                workers: 3,
                ..quick()
            },
            &task,
        )
        .unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn frozen_local_search_keeps_weights() {
        let task = make_synthetic_regression(0, 80, 0.1).unwrap();
        let net = transition(
            &"square(sub(y, f))".parse().unwrap(),
            WeightInit::Unit,
            true,
            &mut rng_from(0),
        );
        assert_eq!(
            optimize_loss(&net, &task, &quick_with(|c| c.meta_lr = 0.0)).unwrap(),
            net
        );
        assert_eq!(
            optimize_loss(&net, &task, &quick_with(|c| c.meta_steps = 0)).unwrap(),
            net
        );
        assert_ne!(optimize_loss(&net, &task, &quick()).unwrap(), net);
        assert!(quick_with(|c| c.rejection_lr = 0.0).validate().is_err());
        let cfg = MetaConfig {
            local_search: false,
            weight_init: WeightInit::Unit,
            ..quick()
        };
        let r = evolve(&gp(1), &cfg, &task).unwrap();
        assert!(r
            .ranked
            .iter()
            .all(|rec| rec.network.weights().iter().all(|&w| w == 1.0)));
    }

    fn quick_with(f: impl FnOnce(&mut MetaConfig)) -> MetaConfig {
        let mut c = quick();
        f(&mut c);
        c
    }

    #[test]
    fn fitness_is_deterministic() {
        let task = make_synthetic_regression(0, 80, 0.1).unwrap();
        let net = transition(
            &"square(sub(y, f))".parse().unwrap(),
            WeightInit::Unit,
            true,
            &mut rng_from(0),
        );
        let a = evaluate_fitness(&net, &task, &quick()).unwrap();
        assert_eq!(a, evaluate_fitness(&net, &task, &quick()).unwrap());
        assert!(a < WORST_FITNESS);
    }
}
