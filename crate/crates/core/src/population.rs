//! Event-driven simulation of the multi-type population.
//!
//! Individuals are processed in order of birth through a priority queue.
//! Each processed individual samples its whole offspring matrix up to the
//! tail cutoff; children born by the horizon are queued in turn, later
//! ones are kept as tail records. Every individual draws from its own
//! stream, keyed by its parent's key and its rank among the parent's
//! children, so the tree does not depend on processing order and raising
//! the horizon or the tail cutoff only extends it.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels;
use crate::models::{Ancestor, OffspringModel};
use crate::rng::{self, salt};

pub const DEFAULT_POPULATION_CAP: usize = 10_000_000;

#[derive(Clone, Debug, PartialEq)]
pub struct Individual {
    /// Arena index of the parent; `None` for the ancestor.
    pub parent: Option<usize>,
    /// One-based position among the parent's children in birth order;
    /// 0 for the ancestor.
    pub rank: u32,
    /// Zero-based type.
    pub type_index: usize,
    pub birth_time: f64,
    key: u64,
}

impl Individual {
    /// Key of the individual's generator streams; see [`label_key`].
    pub fn stream_key(&self) -> u64 {
        self.key
    }

    /// Key of the stream for its type-`j` offspring.
    pub fn entry_stream_key(&self, j: usize) -> u64 {
        entry_key(self.key, j)
    }
}

/// Stream key of the individual with Ulam–Harris `label` in the tree
/// grown from `seed`.
pub fn label_key(seed: u64, label: &[u32]) -> u64 {
    label.iter().fold(rng::mix(seed, salt::ROOT), |key, &rank| rng::mix(key, rank as u64))
}

fn entry_key(key: u64, j: usize) -> u64 {
    rng::mix(key ^ salt::ENTRY, j as u64)
}

/// One sampled child of a processed individual.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OffspringRecord {
    /// Age of the parent at the birth.
    pub age: f64,
    pub birth_time: f64,
    pub type_index: usize,
    /// Arena index when the child was born by the horizon.
    pub individual: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimOptions {
    pub horizon: f64,
    pub tail_cutoff: f64,
    pub seed: u64,
    pub population_cap: usize,
}

impl SimOptions {
    pub fn new(horizon: f64, tail_cutoff: f64, seed: u64) -> Self {
        Self { horizon, tail_cutoff, seed, population_cap: DEFAULT_POPULATION_CAP }
    }
}

/// Family tree up to the horizon with all offspring of stored individuals
/// up to the tail cutoff.
#[derive(Clone, Debug, PartialEq)]
pub struct PopulationTree {
    model: OffspringModel,
    individuals: Vec<Individual>,
    /// `records[offsets[i]..offsets[i+1]]` are the children of individual `i`.
    offsets: Vec<usize>,
    records: Vec<OffspringRecord>,
    horizon: f64,
    tail_cutoff: f64,
    seed: u64,
}

struct Pending {
    birth_time: f64,
    parent: usize,
    rank: u32,
    record: usize,
    type_index: usize,
}

impl PartialEq for Pending {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Pending {}

impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Pending {
    // reversed: BinaryHeap is a max-heap
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .birth_time
            .total_cmp(&self.birth_time)
            .then(other.parent.cmp(&self.parent))
            .then(other.rank.cmp(&self.rank))
    }
}

fn ancestor_type(model: &OffspringModel, seed: u64) -> usize {
    match model.ancestor() {
        Ancestor::Fixed(i) => *i,
        Ancestor::Distribution(pi) => {
            let u: f64 = rng::stream(rng::mix(seed, salt::ANCESTOR_TYPE)).random();
            let mut acc = 0.0;
            for (i, &w) in pi.iter().enumerate() {
                acc += w;
                if u < acc {
                    return i;
                }
            }
            pi.iter().rposition(|&w| w > 0.0).unwrap_or(0)
        }
    }
}

/// Simulates with the default population cap.
pub fn simulate(model: &OffspringModel, horizon: f64, tail_cutoff: f64, seed: u64) -> Result<PopulationTree> {
    simulate_with(model, &SimOptions::new(horizon, tail_cutoff, seed))
}

pub fn simulate_with(model: &OffspringModel, opts: &SimOptions) -> Result<PopulationTree> {
    let SimOptions { horizon, tail_cutoff, seed, population_cap } = *opts;
    if !(horizon >= 0.0 && horizon.is_finite()) {
        return Err(Error::Precondition(format!("horizon must be finite and nonnegative, got {horizon}")));
    }
    if !(tail_cutoff >= horizon && tail_cutoff.is_finite()) {
        return Err(Error::Precondition(format!(
            "tail cutoff {tail_cutoff} must be finite and at least the horizon {horizon}"
        )));
    }
    let rho0 = kernels::spectral_radius(&model.atom_at_zero())?.rho;
    if rho0 >= 1.0 {
        return Err(Error::Precondition(format!(
            "(A1) fails: spectral radius of the atom at zero is {rho0}"
        )));
    }

    let p = model.p();
    let mut tree = PopulationTree {
        model: model.clone(),
        individuals: Vec::new(),
        offsets: vec![0],
        records: Vec::new(),
        horizon,
        tail_cutoff,
        seed,
    };
    tree.individuals.push(Individual {
        parent: None,
        rank: 0,
        type_index: ancestor_type(model, seed),
        birth_time: 0.0,
        key: rng::mix(seed, salt::ROOT),
    });

    let mut heap = BinaryHeap::new();
    let mut runs: Vec<Vec<f64>> = vec![Vec::new(); p];
    let mut heads = vec![0usize; p];
    let mut next = 0;
    loop {
        if next == tree.individuals.len() {
            let Some(pending) = heap.pop() else { break };
            let Pending { birth_time, parent, rank, record, type_index } = pending;
            if tree.individuals.len() >= population_cap {
                return Err(Error::PopulationCap(population_cap));
            }
            let key = rng::mix(tree.individuals[parent].key, rank as u64);
            tree.records[record].individual = Some(tree.individuals.len());
            tree.individuals.push(Individual { parent: Some(parent), rank, type_index, birth_time, key });
        }
        let idx = next;
        next += 1;
        let (s, ty, key) = {
            let ind = &tree.individuals[idx];
            (ind.birth_time, ind.type_index, ind.key)
        };
        let window = tail_cutoff - s;
        for (j, run) in runs.iter_mut().enumerate() {
            run.clear();
            let mut stream = rng::stream(entry_key(key, j));
            model.spec(ty, j).sample_into(window, &mut stream, run);
        }
        heads.iter_mut().for_each(|h| *h = 0);
        let total: usize = runs.iter().map(Vec::len).sum();
        // merge the per-type sorted runs by (age, type)
        for r in 0..total {
            let mut j = usize::MAX;
            let mut age = f64::INFINITY;
            for (c, run) in runs.iter().enumerate() {
                if let Some(&a) = run.get(heads[c]) {
                    if j == usize::MAX || a < age {
                        j = c;
                        age = a;
                    }
                }
            }
            heads[j] += 1;
            let birth_time = s + age;
            let record = tree.records.len();
            tree.records.push(OffspringRecord { age, birth_time, type_index: j, individual: None });
            if birth_time <= horizon {
                heap.push(Pending { birth_time, parent: idx, rank: r as u32 + 1, record, type_index: j });
            }
        }
        tree.offsets.push(tree.records.len());
    }
    Ok(tree)
}

impl PopulationTree {
    pub fn model(&self) -> &OffspringModel {
        &self.model
    }

    pub fn individuals(&self) -> &[Individual] {
        &self.individuals
    }

    pub fn len(&self) -> usize {
        self.individuals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.individuals.is_empty()
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn tail_cutoff(&self) -> f64 {
        self.tail_cutoff
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn ancestor_type(&self) -> usize {
        self.individuals[0].type_index
    }

    /// All sampled children of individual `i`, sorted by age.
    pub fn children(&self, i: usize) -> &[OffspringRecord] {
        &self.records[self.offsets[i]..self.offsets[i + 1]]
    }

    /// Sampled children born after the horizon.
    pub fn tail_records(&self) -> impl Iterator<Item = (usize, &OffspringRecord)> {
        (0..self.individuals.len())
            .flat_map(move |i| self.children(i).iter().map(move |r| (i, r)))
            .filter(|(_, r)| r.individual.is_none())
    }

    /// Number of individuals born at or before `t`; they occupy the arena
    /// prefix of this length.
    pub fn born_by(&self, t: f64) -> usize {
        self.individuals.partition_point(|ind| ind.birth_time <= t)
    }

    /// Ulam–Harris label: child ranks along the ancestral line.
    pub fn label(&self, mut i: usize) -> Vec<u32> {
        let mut label = Vec::new();
        while let Some(parent) = self.individuals[i].parent {
            label.push(self.individuals[i].rank);
            i = parent;
        }
        label.reverse();
        label
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if (0.0..=self.horizon).contains(&t) {
            Ok(())
        } else {
            Err(Error::TimeOutOfRange { t, horizon: self.horizon })
        }
    }
}

/// A member of the coming generation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Member {
    pub parent: usize,
    pub rank: u32,
    pub type_index: usize,
    pub birth_time: f64,
    /// Arena index when the member was born by the horizon.
    pub individual: Option<usize>,
}

/// Individuals born after `t` whose parents were born at or before `t`,
/// restricted to the sampled window.
#[derive(Clone, Debug, PartialEq)]
pub struct ComingGeneration {
    pub t: f64,
    pub members: Vec<Member>,
    /// Number of parents born by `t` (the arena prefix).
    pub parents: usize,
}

pub fn coming_generation(tree: &PopulationTree, t: f64) -> Result<ComingGeneration> {
    tree.check_time(t)?;
    let parents = tree.born_by(t);
    let mut members = Vec::new();
    for u in 0..parents {
        let kids = tree.children(u);
        let first = kids.partition_point(|r| r.birth_time <= t);
        for (offset, r) in kids[first..].iter().enumerate() {
            members.push(Member {
                parent: u,
                rank: (first + offset) as u32 + 1,
                type_index: r.type_index,
                birth_time: r.birth_time,
                individual: r.individual,
            });
        }
    }
    Ok(ComingGeneration { t, members, parents })
}

/// Type-wise numbers of births in `[0, t]`.
pub fn counting_process(tree: &PopulationTree, t: f64) -> Result<Vec<u64>> {
    tree.check_time(t)?;
    let mut counts = vec![0u64; tree.model.p()];
    for ind in &tree.individuals[..tree.born_by(t)] {
        counts[ind.type_index] += 1;
    }
    Ok(counts)
}

/// Row of the tree dump; `type` is one-based.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeRow {
    pub index: usize,
    pub parent_index: Option<usize>,
    pub child_rank: u32,
    #[serde(rename = "type")]
    pub type_id: usize,
    pub birth_time: f64,
}

pub fn tree_rows(tree: &PopulationTree) -> Vec<TreeRow> {
    tree.individuals
        .iter()
        .enumerate()
        .map(|(index, ind)| TreeRow {
            index,
            parent_index: ind.parent,
            child_rank: ind.rank,
            type_id: ind.type_index + 1,
            birth_time: ind.birth_time,
        })
        .collect()
}

fn csv_error(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// CSV with header `index,parent_index,child_rank,type,birth_time`.
pub fn write_tree_csv<W: Write>(tree: &PopulationTree, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in tree_rows(tree) {
        w.serialize(row).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_tree_csv<R: Read>(input: R) -> Result<Vec<TreeRow>> {
    csv::Reader::from_reader(input)
        .deserialize()
        .collect::<std::result::Result<Vec<TreeRow>, _>>()
        .map_err(csv_error)
}
