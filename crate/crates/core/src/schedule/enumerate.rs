//! All (or a seeded sample of) interleavings of a set of programs.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::executor::{run_programs, ExecError, ExecOptions, Program};
use super::trace::ExecutionTrace;
use crate::engine::{Engine, EngineConfig, Store};

/// Largest total slot count explored exhaustively without a limit.
pub const EXHAUSTIVE_BOUND: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exploration {
    /// Every interleaving; fails above [`EXHAUSTIVE_BOUND`] slots.
    Exhaustive,
    /// At most `limit` distinct interleavings. All of them when there are no more
    /// than `limit`; otherwise a sample drawn with a ChaCha8 generator seeded by `seed`.
    Sample { limit: usize, seed: u64 },
}

pub struct Interleaving {
    /// Program index per slot.
    pub schedule: Vec<usize>,
    pub result: Result<ExecutionTrace, ExecError>,
    /// The programs after running, for pattern-level outcomes.
    pub programs: Vec<Box<dyn Program>>,
}

/// Number of distinct interleavings of programs with these slot counts, saturating.
pub fn interleaving_count(slots: &[usize]) -> u128 {
    let mut total: u128 = 1;
    let mut placed: u128 = 0;
    for &k in slots {
        // Multiply by C(placed + k, k), one factor at a time to stay exact.
        for i in 1..=k as u128 {
            total = match total.checked_mul(placed + i) {
                Some(t) => t / i,
                None => return u128::MAX,
            };
        }
        placed += k as u128;
    }
    total
}

/// Next lexicographic permutation of a multiset, in place.
fn next_permutation(v: &mut [usize]) -> bool {
    let Some(i) = (1..v.len()).rev().find(|&i| v[i - 1] < v[i]) else {
        return false;
    };
    let j = (i..v.len()).rev().find(|&j| v[j] > v[i - 1]).expect("successor exists");
    v.swap(i - 1, j);
    v[i..].reverse();
    true
}

fn base_schedule(slots: &[usize]) -> Vec<usize> {
    slots.iter().enumerate().flat_map(|(p, &k)| std::iter::repeat_n(p, k)).collect()
}

fn all_schedules(slots: &[usize]) -> Vec<Vec<usize>> {
    let mut current = base_schedule(slots);
    let mut out = vec![current.clone()];
    while next_permutation(&mut current) {
        out.push(current.clone());
    }
    out
}

fn sampled_schedules(slots: &[usize], limit: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(limit);
    let mut schedule = base_schedule(slots);
    while out.len() < limit {
        schedule.shuffle(&mut rng);
        if seen.insert(schedule.clone()) {
            out.push(schedule.clone());
        }
    }
    out
}

/// Runs `factory()`'s programs under every schedule chosen by `exploration`, each on
/// a private engine built from `config` and `store`. Schedules come in lexicographic
/// order when enumerated exhaustively and in draw order when sampled.
pub fn enumerate_interleavings<F>(
    factory: F,
    config: EngineConfig,
    store: Store,
    options: ExecOptions,
    exploration: Exploration,
) -> Result<impl Iterator<Item = Interleaving>, ExecError>
where
    F: Fn() -> Vec<Box<dyn Program>>,
{
    config.validate()?;
    let slots: Vec<usize> = factory().iter().map(|p| p.slots()).collect();
    let total: usize = slots.iter().sum();
    let count = interleaving_count(&slots);
    let schedules = match exploration {
        Exploration::Exhaustive if total > EXHAUSTIVE_BOUND => {
            return Err(ExecError::BoundExceeded { total, bound: EXHAUSTIVE_BOUND })
        }
        Exploration::Exhaustive => all_schedules(&slots),
        Exploration::Sample { limit, .. } if count <= limit as u128 => all_schedules(&slots),
        Exploration::Sample { limit, seed } => sampled_schedules(&slots, limit, seed),
    };
    Ok(schedules.into_iter().map(move |schedule| {
        let mut programs = factory();
        let result = Engine::new(config, store.clone())
            .map_err(ExecError::from)
            .and_then(|mut engine| run_programs(&mut engine, &mut programs, &schedule, options));
        Interleaving { schedule, result, programs }
    }))
}
