use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ExprTree, Func, Node, SymbolicError, Terminal};

const SPLICE_ATTEMPTS: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpConfig {
    pub population_size: usize,
    pub generations: usize,
    pub tournament_k: usize,
    pub crossover_rate: f64,
    pub mutation_rate: f64,
    pub elitism_rate: f64,
    pub init_depth: (usize, usize),
    pub max_depth: usize,
    pub seed: u64,
}

impl Default for GpConfig {
    fn default() -> Self {
        GpConfig {
            population_size: 25,
            generations: 50,
            tournament_k: 4,
            crossover_rate: 0.70,
            mutation_rate: 0.25,
            elitism_rate: 0.05,
            init_depth: (2, 6),
            max_depth: 8,
            seed: 0,
        }
    }
}

impl GpConfig {
    pub fn validate(&self) -> Result<(), SymbolicError> {
        let bad = |m: &str| Err(SymbolicError::Config(m.to_string()));
        for (name, r) in [
            ("crossover_rate", self.crossover_rate),
            ("mutation_rate", self.mutation_rate),
            ("elitism_rate", self.elitism_rate),
        ] {
            if !(0.0..=1.0).contains(&r) {
                return bad(&format!("{name} must lie in [0, 1]"));
            }
        }
        if self.crossover_rate + self.mutation_rate > 1.0 + 1e-12 {
            return bad("crossover_rate + mutation_rate must not exceed 1");
        }
        if self.population_size == 0 {
            return bad("population_size must be positive");
        }
        if self.tournament_k == 0 {
            return bad("tournament_k must be positive");
        }
        let (lo, hi) = self.init_depth;
        if lo == 0 || lo > hi {
            return bad("init_depth must satisfy 1 <= min <= max");
        }
        // enforcement may add one level
        if hi + 1 > self.max_depth {
            return bad("max_depth must exceed the initial depth range");
        }
        Ok(())
    }

    /// Number of elites carried over each generation (at least one).
    pub fn elite_count(&self) -> usize {
        ((self.population_size as f64 * self.elitism_rate).round() as usize)
            .clamp(1, self.population_size)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitMethod {
    Grow,
    Full,
}

fn random_terminal<R: Rng + ?Sized>(rng: &mut R) -> Terminal {
    Terminal::ALL[rng.random_range(0..Terminal::ALL.len())]
}

fn random_func<R: Rng + ?Sized>(rng: &mut R) -> Func {
    Func::ALL[rng.random_range(0..Func::ALL.len())]
}

fn build<R: Rng + ?Sized>(
    method: InitMethod,
    depth: usize,
    root_func: bool,
    out: &mut Vec<Node>,
    rng: &mut R,
) {
    if depth == 0 {
        out.push(Node::Term(random_terminal(rng)));
        return;
    }
    let pick_func = match method {
        InitMethod::Full => true,
        InitMethod::Grow => {
            root_func
                || rng.random_range(0..Func::ALL.len() + Terminal::ALL.len()) < Func::ALL.len()
        }
    };
    if !pick_func {
        out.push(Node::Term(random_terminal(rng)));
        return;
    }
    let f = random_func(rng);
    out.push(Node::Func(f));
    for _ in 0..f.arity() {
        build(method, depth - 1, false, out, rng);
    }
}

/// A tree of depth at most `depth` (exactly `depth` for `Full`).
pub fn gen_tree<R: Rng + ?Sized>(method: InitMethod, depth: usize, rng: &mut R) -> ExprTree {
    let mut nodes = Vec::new();
    build(method, depth, true, &mut nodes, rng);
    ExprTree { nodes }
}

/// Ramped half-and-half draw for population slot `index`: even slots grow,
/// odd slots are full; the depth is uniform over the configured range.
pub fn random_tree<R: Rng + ?Sized>(cfg: &GpConfig, index: usize, rng: &mut R) -> ExprTree {
    let (lo, hi) = cfg.init_depth;
    let depth = rng.random_range(lo..=hi);
    let method = if index.is_multiple_of(2) {
        InitMethod::Grow
    } else {
        InitMethod::Full
    };
    gen_tree(method, depth, rng)
}

/// Initial population with the argument constraint enforced.
pub fn init_population<R: Rng + ?Sized>(cfg: &GpConfig, rng: &mut R) -> Vec<ExprTree> {
    (0..cfg.population_size)
        .map(|i| {
            let t = random_tree(cfg, i, rng);
            enforce_arguments(&t, rng)
        })
        .collect()
}

/// Ensure both `y` and `f` occur by replacing a random terminal with a
/// random binary node over `f` and `y`. Valid trees are returned unchanged.
pub fn enforce_arguments<R: Rng + ?Sized>(t: &ExprTree, rng: &mut R) -> ExprTree {
    if t.has_required_arguments() {
        return t.clone();
    }
    let terminals: Vec<usize> = t
        .nodes
        .iter()
        .enumerate()
        .filter(|(_, n)| matches!(n, Node::Term(_)))
        .map(|(i, _)| i)
        .collect();
    let at = terminals[rng.random_range(0..terminals.len())];
    let op = Func::BINARY[rng.random_range(0..Func::BINARY.len())];
    let (a, b) = if rng.random_bool(0.5) {
        (Terminal::F, Terminal::Y)
    } else {
        (Terminal::Y, Terminal::F)
    };
    let mut nodes = Vec::with_capacity(t.len() + 2);
    nodes.extend_from_slice(&t.nodes[..at]);
    nodes.extend([Node::Func(op), Node::Term(a), Node::Term(b)]);
    nodes.extend_from_slice(&t.nodes[at + 1..]);
    ExprTree { nodes }
}

fn splice(base: &ExprTree, at: usize, donor: &[Node]) -> ExprTree {
    let end = base.subtree_end(at);
    let mut nodes = Vec::with_capacity(base.len() - (end - at) + donor.len());
    nodes.extend_from_slice(&base.nodes[..at]);
    nodes.extend_from_slice(donor);
    nodes.extend_from_slice(&base.nodes[end..]);
    ExprTree { nodes }
}

/// Replace the subtree of `a` at `i` with the subtree of `b` at `j`.
pub fn crossover_at(a: &ExprTree, i: usize, b: &ExprTree, j: usize) -> ExprTree {
    splice(a, i, &b.nodes[j..b.subtree_end(j)])
}

/// Replace the subtree of `t` at `i` with `sub`.
pub fn mutate_at(t: &ExprTree, i: usize, sub: &ExprTree) -> ExprTree {
    splice(t, i, &sub.nodes)
}

/// One-point crossover with uniform splice points. Children deeper than
/// `max_depth` are resampled; after 32 failures `a` is returned.
pub fn crossover_one_point<R: Rng + ?Sized>(
    a: &ExprTree,
    b: &ExprTree,
    cfg: &GpConfig,
    rng: &mut R,
) -> ExprTree {
    for _ in 0..SPLICE_ATTEMPTS {
        let i = rng.random_range(0..a.len());
        let j = rng.random_range(0..b.len());
        let child = enforce_arguments(&crossover_at(a, i, b, j), rng);
        if child.depth() <= cfg.max_depth {
            return child;
        }
    }
    a.clone()
}

/// Uniform mutation: a random subtree is replaced by a fresh grown subtree
/// of depth 0..=2.
pub fn mutate_uniform<R: Rng + ?Sized>(t: &ExprTree, cfg: &GpConfig, rng: &mut R) -> ExprTree {
    for _ in 0..SPLICE_ATTEMPTS {
        let i = rng.random_range(0..t.len());
        let depth = rng.random_range(0..=2);
        let mut nodes = Vec::new();
        build(InitMethod::Grow, depth, false, &mut nodes, rng);
        let child = enforce_arguments(&mutate_at(t, i, &ExprTree { nodes }), rng);
        if child.depth() <= cfg.max_depth {
            return child;
        }
    }
    t.clone()
}

/// Index of the winner of a `k`-way tournament over `fitness` (lower is
/// better). Ties go to the smaller tree, then the earlier index.
pub fn tournament_select<R: Rng + ?Sized>(
    pop: &[ExprTree],
    fitness: &[f64],
    k: usize,
    rng: &mut R,
) -> Result<usize, SymbolicError> {
    if pop.is_empty() {
        return Err(SymbolicError::EmptyPopulation);
    }
    assert_eq!(pop.len(), fitness.len());
    let k = k.clamp(1, pop.len());
    let mut picks = sample(rng, pop.len(), k).into_vec();
    picks.sort_unstable();
    let best = picks
        .into_iter()
        .min_by(|&a, &b| {
            fitness[a]
                .total_cmp(&fitness[b])
                .then(pop[a].len().cmp(&pop[b].len()))
                .then(a.cmp(&b))
        })
        .expect("k >= 1");
    Ok(best)
}
