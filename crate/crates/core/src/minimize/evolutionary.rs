//! Evolutionary search over masks of fixed sparsity.
//!
//! Every candidate stays on the constraint surface `‖B‖₁ = k`: mutation
//! swaps equal numbers of retained and removed entries, and breeding repairs
//! the child back to exactly `k`.

use std::collections::HashMap;

use rand::seq::index::sample;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::baselines::individualized_random_mask;
use crate::data::{Dataset, MinimizationMask};
use crate::error::{Error, Result};
use crate::impute::Imputer;
use crate::learner::{target_utility, TrainOptions};
use crate::rng::{derive_seed, derived_rng, Rng};

const PAPER_FLIPS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvoConfig {
    pub population: usize,
    pub generations: usize,
    /// Entries flipped in each direction per mutation; `None` picks 10,
    /// or 1 when `k < 10`, capped by feasibility.
    #[serde(default)]
    pub flips: Option<usize>,
    pub seed: u64,
    /// Best members of the current population carried into the next pool.
    pub elitism: usize,
    /// Mutants per generation; `None` means `population`.
    #[serde(default)]
    pub mutants: Option<usize>,
    /// Children per generation; `None` means `population`.
    #[serde(default)]
    pub children: Option<usize>,
}

impl Default for EvoConfig {
    fn default() -> Self {
        Self {
            population: 16,
            generations: 40,
            flips: None,
            seed: 0,
            elitism: 16,
            mutants: None,
            children: None,
        }
    }
}

impl EvoConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Flip count to use at sparsity `k` over `total` entries.
    pub fn resolve_flips(&self, k: usize, total: usize) -> Result<usize> {
        let feasible = k.min(total - k);
        match self.flips {
            Some(f) if f == 0 || f > feasible => Err(Error::InvalidArgument(format!(
                "cannot flip {f} entries each way at k={k} of {total}"
            ))),
            Some(f) => Ok(f),
            None => {
                let base = if k < PAPER_FLIPS {
                    ((0.01 * k as f64).floor() as usize).max(1)
                } else {
                    PAPER_FLIPS
                };
                Ok(base.min(feasible))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvoResult {
    pub mask: MinimizationMask,
    pub fitness: f64,
    /// Best fitness seen after each generation (index 0 = initial population).
    pub best_per_generation: Vec<f64>,
    pub evaluations: usize,
}

/// Swaps exactly `flips` retained entries to removed and `flips` removed
/// entries to retained, positions uniform without replacement.
pub fn mutate(mask: &MinimizationMask, flips: usize, rng: &mut Rng) -> MinimizationMask {
    let retained: Vec<usize> = mask.retained_indices().collect();
    let removed: Vec<usize> = mask.removed_indices().collect();
    let mut child = mask.clone();
    for pick in sample(rng, retained.len(), flips) {
        child.set_flat(retained[pick], false);
    }
    for pick in sample(rng, removed.len(), flips) {
        child.set_flat(removed[pick], true);
    }
    child
}

/// Copies entries both parents agree on; each disagreeing entry is retained
/// with the probability that preserves `k` in expectation, then the child is
/// repaired to exactly `k` by uniform flips among the disagreeing entries.
pub fn breed(
    a: &MinimizationMask,
    b: &MinimizationMask,
    k: usize,
    rng: &mut Rng,
) -> MinimizationMask {
    let mut child = a.clone();
    let disagree: Vec<usize> = (0..a.len())
        .filter(|&idx| a.as_slice()[idx] != b.as_slice()[idx])
        .collect();
    if disagree.is_empty() {
        return child;
    }
    let agreed_kept = a.k() - a.as_slice().iter().zip(b.as_slice()).filter(|(x, y)| **x && !**y).count();
    let need = k.saturating_sub(agreed_kept);
    let prob = need as f64 / disagree.len() as f64;
    for &idx in &disagree {
        child.set_flat(idx, rng.random::<f64>() < prob);
    }
    let kept: Vec<usize> = disagree.iter().copied().filter(|&i| child.as_slice()[i]).collect();
    let dropped: Vec<usize> = disagree.iter().copied().filter(|&i| !child.as_slice()[i]).collect();
    if child.k() > k {
        for pick in sample(rng, kept.len(), child.k() - k) {
            child.set_flat(kept[pick], false);
        }
    } else if child.k() < k {
        for pick in sample(rng, dropped.len(), k - child.k()) {
            child.set_flat(dropped[pick], true);
        }
    }
    child
}

#[derive(Clone)]
struct Candidate {
    mask: MinimizationMask,
    fitness: f64,
    created: u64,
}

pub fn evolutionary_mask(
    dataset: &Dataset,
    lambda: f64,
    k: usize,
    imputer: &Imputer,
    cfg: &EvoConfig,
    opts: TrainOptions,
) -> Result<EvoResult> {
    let (n, p) = (dataset.n(), dataset.p());
    if k > n * p {
        return Err(Error::InvalidArgument(format!(
            "cannot retain {k} of {} entries",
            n * p
        )));
    }
    let initial = (0..cfg.population)
        .map(|c| individualized_random_mask(n, p, k, derive_seed(cfg.seed, &[0, 0, c as u64])))
        .collect::<Result<Vec<_>>>()?;
    evolve_from(dataset, lambda, k, imputer, cfg, opts, initial)
}

/// Runs the search from a caller-supplied initial population.
pub fn evolve_from(
    dataset: &Dataset,
    lambda: f64,
    k: usize,
    imputer: &Imputer,
    cfg: &EvoConfig,
    opts: TrainOptions,
    initial: Vec<MinimizationMask>,
) -> Result<EvoResult> {
    let (n, p) = (dataset.n(), dataset.p());
    let total = n * p;
    if cfg.population < 2 {
        return Err(Error::InvalidArgument("population must be at least 2".into()));
    }
    if cfg.elitism < 1 || cfg.elitism > cfg.population {
        return Err(Error::InvalidArgument(format!(
            "elitism must lie in [1, {}], got {}",
            cfg.population, cfg.elitism
        )));
    }
    if initial.is_empty() {
        return Err(Error::InvalidArgument("empty initial population".into()));
    }
    for m in &initial {
        m.check_dims(n, p)?;
        if m.k() != k {
            return Err(Error::InvalidArgument(format!(
                "initial mask has sparsity {}, expected {k}",
                m.k()
            )));
        }
    }

    let mut cache: HashMap<MinimizationMask, f64> = HashMap::new();
    let mut evaluations = 0usize;
    let mut evaluate = |masks: Vec<MinimizationMask>,
                        cache: &mut HashMap<MinimizationMask, f64>|
     -> Result<Vec<f64>> {
        let fresh: Vec<MinimizationMask> = {
            let mut seen = std::collections::HashSet::new();
            masks
                .iter()
                .filter(|m| !cache.contains_key(*m) && seen.insert((*m).clone()))
                .cloned()
                .collect()
        };
        let scored: Vec<f64> = fresh
            .par_iter()
            .map(|m| target_utility(dataset, m, lambda, imputer, opts).map(|t| t.loss))
            .collect::<Result<_>>()?;
        evaluations += fresh.len();
        for (m, f) in fresh.into_iter().zip(scored) {
            cache.insert(m, f);
        }
        Ok(masks.iter().map(|m| cache[m]).collect())
    };

    let mut next_id = 0u64;
    let fitness = evaluate(initial.clone(), &mut cache)?;
    let mut population: Vec<Candidate> = initial
        .into_iter()
        .zip(fitness)
        .map(|(mask, fitness)| {
            next_id += 1;
            Candidate {
                mask,
                fitness,
                created: next_id - 1,
            }
        })
        .collect();
    sort_candidates(&mut population);
    population.truncate(cfg.population);
    let mut best = population[0].clone();
    let mut history = vec![best.fitness];

    // k = 0 or k = n·p admits a single mask
    if k == 0 || k == total {
        return Ok(EvoResult {
            mask: best.mask,
            fitness: best.fitness,
            best_per_generation: history,
            evaluations,
        });
    }
    let flips = cfg.resolve_flips(k, total)?;
    let n_mut = cfg.mutants.unwrap_or(cfg.population);
    let n_child = cfg.children.unwrap_or(cfg.population);

    for g in 1..=cfg.generations as u64 {
        let mut offspring = Vec::with_capacity(n_mut + n_child);
        for m in 0..n_mut as u64 {
            let mut rng = derived_rng(cfg.seed, &[g, 1, m]);
            let parent = &population[rng.random_range(0..population.len())].mask;
            offspring.push(mutate(parent, flips, &mut rng));
        }
        for c in 0..n_child as u64 {
            let mut rng = derived_rng(cfg.seed, &[g, 2, c]);
            let a = rng.random_range(0..population.len());
            let mut b = rng.random_range(0..population.len() - 1);
            if b >= a {
                b += 1;
            }
            offspring.push(breed(&population[a].mask, &population[b].mask, k, &mut rng));
        }
        let fitness = evaluate(offspring.clone(), &mut cache)?;

        let mut pool: Vec<Candidate> = population[..cfg.elitism.min(population.len())].to_vec();
        for (mask, fitness) in offspring.into_iter().zip(fitness) {
            pool.push(Candidate {
                mask,
                fitness,
                created: next_id,
            });
            next_id += 1;
        }
        sort_candidates(&mut pool);
        pool.truncate(cfg.population);
        population = pool;
        if population[0].fitness < best.fitness {
            best = population[0].clone();
        }
        history.push(best.fitness);
    }

    Ok(EvoResult {
        mask: best.mask,
        fitness: best.fitness,
        best_per_generation: history,
        evaluations,
    })
}

fn sort_candidates(c: &mut [Candidate]) {
    c.sort_by(|a, b| a.fitness.total_cmp(&b.fitness).then(a.created.cmp(&b.created)));
}
