//! Switch-vector search: exhaustive enumeration of low switch counts, a wide
//! genetic algorithm, and a local genetic algorithm seeded with both winners.

use std::cmp::Ordering;

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::SwitchVector;
use crate::rng::StreamRng;

/// Maps a switch vector to a non-negative cost; lower is better.
pub trait CostFunction: Sync {
    fn evaluate(&self, b: &SwitchVector) -> f64;
}

impl<F> CostFunction for F
where
    F: Fn(&SwitchVector) -> f64 + Sync,
{
    fn evaluate(&self, b: &SwitchVector) -> f64 {
        self(b)
    }
}

/// Actuators that may be recruited. Excluded bits are always 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SearchSpace {
    allowed: Vec<bool>,
}

impl SearchSpace {
    pub fn full(m: usize) -> Self {
        SearchSpace { allowed: vec![true; m] }
    }

    pub fn excluding(m: usize, excluded: impl IntoIterator<Item = usize>) -> Result<Self> {
        let mut allowed = vec![true; m];
        for k in excluded {
            if k >= m {
                return Err(Error::Config(format!("excluded actuator {k} out of range (m = {m})")));
            }
            allowed[k] = false;
        }
        Ok(SearchSpace { allowed })
    }

    pub fn m(&self) -> usize {
        self.allowed.len()
    }

    pub fn is_allowed(&self, k: usize) -> bool {
        self.allowed[k]
    }

    pub fn allowed_indices(&self) -> Vec<usize> {
        (0..self.m()).filter(|&k| self.allowed[k]).collect()
    }

    pub fn allowed_count(&self) -> usize {
        self.allowed.iter().filter(|&&a| a).count()
    }

    fn mask(&self, b: &mut SwitchVector) {
        for (k, &ok) in self.allowed.iter().enumerate() {
            if !ok {
                b.set(k, false);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GaParams {
    pub wide_population: usize,
    pub wide_generations: usize,
    pub local_population: usize,
    pub local_generations: usize,
    pub crossover_segment_bits: usize,
    pub crossover_base_prob: f64,
    pub mutation_prob: f64,
    pub seed_min_switches: usize,
    pub exhaustive_max_switches: usize,
    /// Largest number of exhaustive candidates accepted before failing.
    pub exhaustive_budget: u128,
}

impl Default for GaParams {
    fn default() -> Self {
        GaParams {
            wide_population: 400,
            wide_generations: 10,
            local_population: 40,
            local_generations: 100,
            crossover_segment_bits: 5,
            crossover_base_prob: 0.1,
            mutation_prob: 0.025,
            seed_min_switches: 4,
            exhaustive_max_switches: 3,
            exhaustive_budget: 5_000_000,
        }
    }
}

impl GaParams {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("crossover_base_prob", self.crossover_base_prob),
            ("mutation_prob", self.mutation_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must be in [0, 1], got {p}")));
            }
        }
        if self.wide_population < 2 || self.local_population < 2 {
            return Err(Error::Config("GA populations must have at least 2 members".into()));
        }
        if self.crossover_segment_bits == 0 {
            return Err(Error::Config("crossover segment must span at least one bit".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchStage {
    Exhaustive,
    WideGa,
    LocalGa,
}

impl SearchStage {
    pub fn as_str(self) -> &'static str {
        match self {
            SearchStage::Exhaustive => "exhaustive",
            SearchStage::WideGa => "wide_ga",
            SearchStage::LocalGa => "local_ga",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageSummary {
    pub stage: SearchStage,
    pub best_b: SwitchVector,
    pub best_cost: f64,
    pub evaluations: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub best_b: SwitchVector,
    pub best_cost: f64,
    pub evaluations: u64,
    pub source: SearchStage,
    /// Best-ever cost after initialization and after each generation.
    pub history: Vec<f64>,
    pub stages: Vec<StageSummary>,
}

/// Orders candidates by cost, then switch count, then bit pattern.
pub fn compare_candidates(cost_a: f64, a: &SwitchVector, cost_b: f64, b: &SwitchVector) -> Ordering {
    cost_a
        .total_cmp(&cost_b)
        .then_with(|| a.switch_count().cmp(&b.switch_count()))
        .then_with(|| a.cmp(b))
}

fn is_better(cost_a: f64, a: &SwitchVector, cost_b: f64, b: &SwitchVector) -> bool {
    compare_candidates(cost_a, a, cost_b, b) == Ordering::Less
}

fn checked_cost(cost: &dyn CostFunction, b: &SwitchVector) -> f64 {
    let c = cost.evaluate(b);
    if c.is_nan() {
        f64::INFINITY
    } else {
        c
    }
}

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}

/// `Σ_{j=0..=s} C(m, j)`.
pub fn low_switch_count(m: usize, max_switches: usize) -> u128 {
    (0..=max_switches.min(m)).map(|j| binomial(m, j)).sum()
}

/// Evaluates every switch vector with at most `max_switches` ones.
pub fn exhaustive_low_switch(
    cost: &dyn CostFunction,
    space: &SearchSpace,
    max_switches: usize,
    budget: u128,
) -> Result<SearchResult> {
    let m = space.m();
    if m == 0 {
        return Err(Error::Contract("search needs at least one actuator".into()));
    }
    let idx = space.allowed_indices();
    let top = max_switches.min(idx.len());
    let required = low_switch_count(idx.len(), top);
    if required > budget {
        return Err(Error::Budget { required, cap: budget });
    }

    let mut best_b = SwitchVector::zeros(m);
    let mut best_cost = checked_cost(cost, &best_b);
    let mut evaluations = 1u64;
    let mut combo: Vec<usize> = Vec::with_capacity(top);
    for s in 1..=top {
        combo.clear();
        combo.extend(0..s);
        loop {
            let mut b = SwitchVector::zeros(m);
            for &c in &combo {
                b.set(idx[c], true);
            }
            let c = checked_cost(cost, &b);
            evaluations += 1;
            if is_better(c, &b, best_cost, &best_b) {
                best_cost = c;
                best_b = b;
            }
            // next combination in lexicographic order
            let mut i = s;
            while i > 0 && combo[i - 1] == idx.len() - s + i - 1 {
                i -= 1;
            }
            if i == 0 {
                break;
            }
            combo[i - 1] += 1;
            for j in i..s {
                combo[j] = combo[j - 1] + 1;
            }
        }
    }
    Ok(SearchResult {
        stages: vec![StageSummary {
            stage: SearchStage::Exhaustive,
            best_b: best_b.clone(),
            best_cost,
            evaluations,
        }],
        best_b,
        best_cost,
        evaluations,
        source: SearchStage::Exhaustive,
        history: vec![best_cost],
    })
}

fn random_member(space: &SearchSpace, min_switches: usize, rng: &mut StreamRng) -> SwitchVector {
    let idx = space.allowed_indices();
    let floor = min_switches.min(idx.len());
    loop {
        let mut b = SwitchVector::zeros(space.m());
        for &k in &idx {
            if rng.random_bool(0.5) {
                b.set(k, true);
            }
        }
        if b.switch_count() >= floor {
            return b;
        }
    }
}

fn roulette(fitness: &[f64], total: f64, rng: &mut StreamRng) -> usize {
    let mut r = rng.random::<f64>() * total;
    for (i, &f) in fitness.iter().enumerate() {
        if r < f {
            return i;
        }
        r -= f;
    }
    fitness.len() - 1
}

/// Each bit position starts, with probability `base_prob`, a segment of
/// `segment` bits (clipped at the end) exchanged between the parents.
fn crossover(
    a: &SwitchVector,
    b: &SwitchVector,
    segment: usize,
    base_prob: f64,
    rng: &mut StreamRng,
) -> (SwitchVector, SwitchVector) {
    let m = a.len();
    let mut swap = vec![false; m];
    for p in 0..m {
        if rng.random_bool(base_prob) {
            for s in swap.iter_mut().skip(p).take(segment) {
                *s = true;
            }
        }
    }
    let mut c1 = a.clone();
    let mut c2 = b.clone();
    for (k, &sw) in swap.iter().enumerate() {
        if sw {
            c1.set(k, b.get(k));
            c2.set(k, a.get(k));
        }
    }
    (c1, c2)
}

fn mutate(b: &mut SwitchVector, prob: f64, rng: &mut StreamRng) {
    for k in 0..b.len() {
        if rng.random_bool(prob) {
            b.set(k, !b.get(k));
        }
    }
}

/// Genetic search from a random initial population.
pub fn ga_search(
    cost: &dyn CostFunction,
    space: &SearchSpace,
    population: usize,
    generations: usize,
    params: &GaParams,
    rng: &mut StreamRng,
) -> Result<SearchResult> {
    ga_search_seeded(cost, space, population, generations, params, rng, &[], SearchStage::WideGa)
}

/// Genetic search whose initial population starts with `seeds`.
#[allow(clippy::too_many_arguments)]
pub fn ga_search_seeded(
    cost: &dyn CostFunction,
    space: &SearchSpace,
    population: usize,
    generations: usize,
    params: &GaParams,
    rng: &mut StreamRng,
    seeds: &[SwitchVector],
    stage: SearchStage,
) -> Result<SearchResult> {
    params.validate()?;
    if population < 2 {
        return Err(Error::Config("GA population must have at least 2 members".into()));
    }
    let m = space.m();
    for s in seeds {
        Error::check_dim("GA seed", m, s.len())?;
    }

    let mut members: Vec<SwitchVector> = seeds
        .iter()
        .take(population)
        .map(|s| {
            let mut s = s.clone();
            space.mask(&mut s);
            s
        })
        .collect();
    while members.len() < population {
        members.push(random_member(space, params.seed_min_switches, rng));
    }
    let mut costs: Vec<f64> = members.iter().map(|b| checked_cost(cost, b)).collect();
    let mut evaluations = members.len() as u64;

    let argbest = |members: &[SwitchVector], costs: &[f64]| {
        (1..members.len()).fold(0, |best, i| {
            if is_better(costs[i], &members[i], costs[best], &members[best]) {
                i
            } else {
                best
            }
        })
    };
    let i0 = argbest(&members, &costs);
    let mut best_b = members[i0].clone();
    let mut best_cost = costs[i0];
    let mut history = vec![best_cost];

    for _ in 0..generations {
        let elite = argbest(&members, &costs);
        let fitness: Vec<f64> = costs.iter().map(|c| 1.0 / (c + 1e-9)).collect();
        let total: f64 = fitness.iter().sum();
        let mut next = vec![members[elite].clone()];
        let mut next_costs = vec![costs[elite]];
        while next.len() < population {
            let pa = roulette(&fitness, total, rng);
            let pb = roulette(&fitness, total, rng);
            let (mut c1, mut c2) = crossover(
                &members[pa],
                &members[pb],
                params.crossover_segment_bits,
                params.crossover_base_prob,
                rng,
            );
            for child in [&mut c1, &mut c2] {
                mutate(child, params.mutation_prob, rng);
                space.mask(child);
            }
            for child in [c1, c2] {
                if next.len() < population {
                    next_costs.push(checked_cost(cost, &child));
                    evaluations += 1;
                    next.push(child);
                }
            }
        }
        members = next;
        costs = next_costs;
        let i = argbest(&members, &costs);
        if is_better(costs[i], &members[i], best_cost, &best_b) {
            best_cost = costs[i];
            best_b = members[i].clone();
        }
        history.push(best_cost);
    }

    Ok(SearchResult {
        stages: vec![StageSummary {
            stage,
            best_b: best_b.clone(),
            best_cost,
            evaluations,
        }],
        best_b,
        best_cost,
        evaluations,
        source: stage,
        history,
    })
}

/// Exhaustive and wide searches (run concurrently), then a local search
/// seeded with both winners. Returns the best of the three stages.
pub fn combined_search(
    cost: &dyn CostFunction,
    space: &SearchSpace,
    params: &GaParams,
    rng: &mut StreamRng,
) -> Result<SearchResult> {
    params.validate()?;
    let mut wide_rng = StreamRng::seed_from_u64(rng.random());
    let mut local_rng = StreamRng::seed_from_u64(rng.random());

    let (exhaustive, wide) = std::thread::scope(|scope| {
        let handle = scope.spawn(|| {
            exhaustive_low_switch(cost, space, params.exhaustive_max_switches, params.exhaustive_budget)
        });
        let wide = ga_search_seeded(
            cost,
            space,
            params.wide_population,
            params.wide_generations,
            params,
            &mut wide_rng,
            &[],
            SearchStage::WideGa,
        );
        let exhaustive = handle.join().expect("exhaustive search thread panicked");
        (exhaustive, wide)
    });
    let (exhaustive, wide) = (exhaustive?, wide?);

    let local = ga_search_seeded(
        cost,
        space,
        params.local_population,
        params.local_generations,
        params,
        &mut local_rng,
        &[exhaustive.best_b.clone(), wide.best_b.clone()],
        SearchStage::LocalGa,
    )?;

    let mut best = &exhaustive;
    for r in [&wide, &local] {
        if is_better(r.best_cost, &r.best_b, best.best_cost, &best.best_b) {
            best = r;
        }
    }
    Ok(SearchResult {
        best_b: best.best_b.clone(),
        best_cost: best.best_cost,
        evaluations: exhaustive.evaluations + wide.evaluations + local.evaluations,
        source: best.source,
        history: local.history.clone(),
        stages: [&exhaustive, &wide, &local]
            .iter()
            .flat_map(|r| r.stages.iter().cloned())
            .collect(),
    })
}

/// Full `2^m` enumeration over the allowed actuators, for oracles.
pub fn brute_force(cost: &dyn CostFunction, space: &SearchSpace) -> Result<SearchResult> {
    let idx = space.allowed_indices();
    if idx.len() > 24 {
        return Err(Error::Budget {
            required: 1u128 << idx.len(),
            cap: 1 << 24,
        });
    }
    exhaustive_low_switch(cost, space, idx.len(), u128::MAX)
}
