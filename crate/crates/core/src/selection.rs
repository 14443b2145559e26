//! Genetic search for the best set of disjoint, mutually similar fragments.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fragments::FragmentSpan;
use crate::signal_io::artifact_err;
use crate::spectral::{distance, DistanceWeights, SpectralSignature};

/// Dense symmetric matrix of pairwise fragment distances.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DistanceMatrix {
    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let v = f(i, j);
                data[i * n + j] = v;
                data[j * n + i] = v;
            }
        }
        Self { n, data }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    /// Off-diagonal entries, upper triangle, row by row.
    pub fn upper_triangle(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n).flat_map(move |i| (i + 1..self.n).map(move |j| self.get(i, j)))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .has_headers(false)
            .from_path(path)
            .map_err(|e| artifact_err(path, e))?;
        for i in 0..self.n {
            w.write_record(
                self.data[i * self.n..(i + 1) * self.n]
                    .iter()
                    .map(|v| v.to_string()),
            )
            .map_err(|e| artifact_err(path, e))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let mut r = csv::ReaderBuilder::new()
            .has_headers(false)
            .from_path(path)
            .map_err(|e| artifact_err(path, e))?;
        let mut data = Vec::new();
        let mut rows = 0;
        for rec in r.records() {
            let rec = rec.map_err(|e| artifact_err(path, e))?;
            for cell in rec.iter() {
                data.push(
                    cell.trim()
                        .parse::<f64>()
                        .map_err(|e| artifact_err(path, e))?,
                );
            }
            rows += 1;
        }
        if data.len() != rows * rows {
            return Err(artifact_err(path, "distance matrix is not square"));
        }
        Ok(Self { n: rows, data })
    }
}

/// All-pairs spectral distances, computed row-parallel.
pub fn pairwise_matrix(sigs: &[SpectralSignature], w: &DistanceWeights) -> Result<DistanceMatrix> {
    let n = sigs.len();
    if n == 0 {
        return Err(Error::NoFragments);
    }
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (i + 1..n)
                .map(|j| distance(&sigs[i], &sigs[j], w))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    let mut data = vec![0.0; n * n];
    for (i, row) in rows.into_iter().enumerate() {
        for (off, v) in row.into_iter().enumerate() {
            let j = i + 1 + off;
            data[i * n + j] = v;
            data[j * n + i] = v;
        }
    }
    Ok(DistanceMatrix { n, data })
}

/// Similarity times coverage, ignoring overlaps:
/// `1 / (1 + max pairwise distance) * total raw length / contour length`.
fn raw_fitness(
    ids: &[usize],
    dist: &DistanceMatrix,
    spans: &[FragmentSpan],
    contour_len: usize,
) -> f64 {
    let mut worst = 0.0f64;
    for (a, &i) in ids.iter().enumerate() {
        for &j in &ids[a + 1..] {
            worst = worst.max(dist.get(i, j));
        }
    }
    let covered: usize = ids.iter().map(|&i| spans[i].raw_len()).sum();
    covered as f64 / contour_len as f64 / (1.0 + worst)
}

/// Fitness of a set of pairwise disjoint fragments; a singleton has no
/// pairwise term and scores its length ratio.
pub fn fitness(
    ids: &[usize],
    dist: &DistanceMatrix,
    spans: &[FragmentSpan],
    contour_len: usize,
) -> Result<f64> {
    if ids.is_empty() {
        return Err(Error::PreconditionViolation(
            "candidate set is empty".into(),
        ));
    }
    if contour_len == 0 {
        return Err(Error::PreconditionViolation(
            "contour length must be positive".into(),
        ));
    }
    if let Some(&bad) = ids.iter().find(|&&i| i >= spans.len() || i >= dist.len()) {
        return Err(Error::PreconditionViolation(format!(
            "fragment id {bad} out of range"
        )));
    }
    for (a, &i) in ids.iter().enumerate() {
        for &j in &ids[a + 1..] {
            if i == j || spans[i].overlaps(&spans[j]) {
                return Err(Error::OverlapViolation { a: i, b: j });
            }
        }
    }
    Ok(raw_fitness(ids, dist, spans, contour_len))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    /// Sorted fragment ids.
    pub fragment_ids: Vec<usize>,
    pub fitness: f64,
    pub generation_born: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaConfig {
    pub population: usize,
    /// Rate of add-or-replace mutation.
    pub alpha: f64,
    /// Rate of removal mutation.
    pub beta: f64,
    pub stall_limit: usize,
    pub max_iterations: usize,
    pub seed: u64,
    pub elitism_count: usize,
}

impl GaConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            population: 200,
            alpha: 0.3,
            beta: 0.1,
            stall_limit: 5,
            max_iterations: 1000,
            seed,
            elitism_count: 2,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.population < 2 || self.elitism_count == 0 || self.elitism_count >= self.population {
            return Err(Error::PreconditionViolation(
                "need population >= 2 and 1 <= elitism < population".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.alpha) || !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::PreconditionViolation(
                "mutation rates must lie in [0, 1]".into(),
            ));
        }
        if self.stall_limit == 0 || self.max_iterations == 0 {
            return Err(Error::PreconditionViolation(
                "stall limit and iteration budget must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationRecord {
    pub generation: usize,
    /// Best fitness seen so far, not just in this generation.
    pub best_fitness: f64,
    pub mean_fitness: f64,
    pub restarts_so_far: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunLog {
    pub generations: Vec<GenerationRecord>,
    /// Generations at which a stall triggered a population restart.
    pub restarts: Vec<usize>,
    pub total_iterations: usize,
}

impl RunLog {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| artifact_err(path, e))?;
        w.write_record([
            "generation",
            "best_fitness",
            "mean_fitness",
            "restarts_so_far",
        ])
        .map_err(|e| artifact_err(path, e))?;
        for g in &self.generations {
            w.write_record([
                g.generation.to_string(),
                g.best_fitness.to_string(),
                g.mean_fitness.to_string(),
                g.restarts_so_far.to_string(),
            ])
            .map_err(|e| artifact_err(path, e))?;
        }
        w.flush()?;
        Ok(())
    }
}

const OUTBREEDING_POOL: usize = 10;
const INITIAL_MAX_SIZE: usize = 8;
const PLACEMENT_TRIES: usize = 20;
const DEDUP_TRIES: usize = 5;
const NEIGHBOURS: usize = 32;
const SMALL_INSTANCE: usize = 64;
/// Fraction of fresh individuals built by [`Search::grown_individual`].
const GROWN_SHARE: f64 = 0.5;

/// For each fragment, the closest other fragments by distance (ties by id).
fn nearest_neighbours(dist: &DistanceMatrix, k: usize) -> Vec<Vec<usize>> {
    let n = dist.len();
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            let cmp =
                |a: &usize, b: &usize| dist.get(i, *a).total_cmp(&dist.get(i, *b)).then(a.cmp(b));
            let keep = k.min(others.len());
            if keep < others.len() {
                others.select_nth_unstable_by(keep, cmp);
                others.truncate(keep);
            }
            others.sort_unstable_by(cmp);
            others
        })
        .collect()
}

struct Search<'a> {
    spans: &'a [FragmentSpan],
    dist: &'a DistanceMatrix,
    contour_len: usize,
    cfg: &'a GaConfig,
    neighbours: Vec<Vec<usize>>,
}

/// Per-slot generator: stream id is `(generation << 32) | slot`, so children
/// can be bred in any order and still match the serial result.
fn slot_rng(seed: u64, generation: usize, slot: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((generation as u64) << 32) | slot as u64);
    rng
}

fn symmetric_difference(a: &[usize], b: &[usize]) -> usize {
    let (mut i, mut j, mut same) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            Ordering::Less => i += 1,
            Ordering::Greater => j += 1,
            Ordering::Equal => {
                same += 1;
                i += 1;
                j += 1;
            }
        }
    }
    a.len() + b.len() - 2 * same
}

fn by_rank(a: &CandidateSet, b: &CandidateSet) -> Ordering {
    b.fitness
        .total_cmp(&a.fitness)
        .then_with(|| a.fragment_ids.cmp(&b.fragment_ids))
}

impl Search<'_> {
    fn fits(&self, ids: &[usize], cand: usize) -> bool {
        ids.iter()
            .all(|&i| i != cand && !self.spans[i].overlaps(&self.spans[cand]))
    }

    /// Half of the draws come from the near neighbours of a current member,
    /// the rest uniformly from all fragments.
    fn try_add(&self, ids: &mut Vec<usize>, rng: &mut ChaCha8Rng) -> bool {
        let guided = !ids.is_empty() && rng.gen_bool(0.5);
        let pick = if self.spans.len() <= SMALL_INSTANCE {
            // few fragments: list the fitting ones instead of probing blindly
            let pool: Vec<usize> = if guided {
                self.neighbours[ids[rng.gen_range(0..ids.len())]].clone()
            } else {
                (0..self.spans.len()).collect()
            };
            let open: Vec<usize> = pool.into_iter().filter(|&c| self.fits(ids, c)).collect();
            (!open.is_empty()).then(|| open[rng.gen_range(0..open.len())])
        } else {
            (0..PLACEMENT_TRIES)
                .map(|_| match guided {
                    true => {
                        let list = &self.neighbours[ids[rng.gen_range(0..ids.len())]];
                        list[rng.gen_range(0..list.len())]
                    }
                    false => rng.gen_range(0..self.spans.len()),
                })
                .find(|&c| self.fits(ids, c))
        };
        match pick {
            Some(cand) => {
                let pos = ids.partition_point(|&i| i < cand);
                ids.insert(pos, cand);
                true
            }
            None => false,
        }
    }

    fn random_individual(&self, rng: &mut ChaCha8Rng) -> Vec<usize> {
        if rng.gen_bool(GROWN_SHARE) {
            return self.grown_individual(rng);
        }
        let target = rng.gen_range(1..=INITIAL_MAX_SIZE.min(self.spans.len()));
        let mut ids = vec![rng.gen_range(0..self.spans.len())];
        while ids.len() < target && self.try_add(&mut ids, rng) {}
        ids
    }

    /// Grows a set around a random fragment: repeatedly adds the longest
    /// disjoint fragment whose distance to every member stays below a
    /// threshold drawn from the seed's own neighbour distances.
    fn grown_individual(&self, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let n = self.spans.len();
        let seed = rng.gen_range(0..n);
        let near = &self.neighbours[seed];
        if near.is_empty() {
            return vec![seed];
        }
        let threshold = self.dist.get(seed, near[rng.gen_range(0..near.len())]);
        let mut ids = vec![seed];
        let mut worst: Vec<f64> = (0..n).map(|j| self.dist.get(seed, j)).collect();
        let mut open: Vec<bool> = (0..n)
            .map(|j| j != seed && !self.spans[j].overlaps(&self.spans[seed]))
            .collect();
        loop {
            let next = (0..n)
                .filter(|&j| open[j] && worst[j] <= threshold)
                .max_by(|&a, &b| {
                    self.spans[a]
                        .raw_len()
                        .cmp(&self.spans[b].raw_len())
                        .then(worst[b].total_cmp(&worst[a]))
                        .then(b.cmp(&a))
                });
            let Some(j) = next else { break };
            let pos = ids.partition_point(|&i| i < j);
            ids.insert(pos, j);
            for k in 0..n {
                worst[k] = worst[k].max(self.dist.get(j, k));
                open[k] = open[k] && k != j && !self.spans[k].overlaps(&self.spans[j]);
            }
        }
        ids
    }

    /// Union of parents, then drop the lower-contribution member of each
    /// overlapping pair until the set is disjoint.
    fn crossover(&self, a: &[usize], b: &[usize]) -> Vec<usize> {
        let mut ids: Vec<usize> = a.iter().chain(b).copied().collect();
        ids.sort_unstable();
        ids.dedup();
        'repair: loop {
            for x in 0..ids.len() {
                for y in x + 1..ids.len() {
                    if self.spans[ids[x]].overlaps(&self.spans[ids[y]]) {
                        let without = |k: usize| {
                            let rest: Vec<usize> = ids
                                .iter()
                                .enumerate()
                                .filter(|(i, _)| *i != k)
                                .map(|(_, &v)| v)
                                .collect();
                            raw_fitness(&rest, self.dist, self.spans, self.contour_len)
                        };
                        // larger fitness without x means x contributes less
                        let drop = if without(x) > without(y) { x } else { y };
                        ids.remove(drop);
                        continue 'repair;
                    }
                }
            }
            break ids;
        }
    }

    fn mutate(&self, ids: &mut Vec<usize>, rng: &mut ChaCha8Rng) {
        if rng.gen::<f64>() < self.cfg.alpha {
            if ids.len() > 1 && rng.gen_bool(0.5) {
                let k = rng.gen_range(0..ids.len());
                let removed = ids.remove(k);
                if !self.try_add(ids, rng) {
                    let pos = ids.partition_point(|&i| i < removed);
                    ids.insert(pos, removed);
                }
            } else {
                self.try_add(ids, rng);
            }
        }
        if ids.len() > 1 && rng.gen::<f64>() < self.cfg.beta {
            let k = rng.gen_range(0..ids.len());
            ids.remove(k);
        }
    }

    fn tournament<'p>(&self, pop: &'p [CandidateSet], rng: &mut ChaCha8Rng) -> &'p CandidateSet {
        let a = &pop[rng.gen_range(0..pop.len())];
        let b = &pop[rng.gen_range(0..pop.len())];
        if by_rank(a, b) == Ordering::Greater {
            b
        } else {
            a
        }
    }

    fn outbreed<'p>(
        &self,
        first: &CandidateSet,
        pop: &'p [CandidateSet],
        rng: &mut ChaCha8Rng,
    ) -> &'p CandidateSet {
        let mut best = &pop[rng.gen_range(0..pop.len())];
        let mut best_gap = symmetric_difference(&first.fragment_ids, &best.fragment_ids);
        for _ in 1..OUTBREEDING_POOL {
            let c = &pop[rng.gen_range(0..pop.len())];
            let gap = symmetric_difference(&first.fragment_ids, &c.fragment_ids);
            if gap > best_gap {
                best = c;
                best_gap = gap;
            }
        }
        best
    }

    fn breed(&self, pop: &[CandidateSet], rng: &mut ChaCha8Rng) -> Vec<usize> {
        let p1 = self.tournament(pop, rng);
        let p2 = self.outbreed(p1, pop, rng);
        let mut child = self.crossover(&p1.fragment_ids, &p2.fragment_ids);
        self.mutate(&mut child, rng);
        child
    }

    fn evaluate(&self, ids: Vec<usize>, generation: usize) -> CandidateSet {
        let fitness = raw_fitness(&ids, self.dist, self.spans, self.contour_len);
        CandidateSet {
            fragment_ids: ids,
            fitness,
            generation_born: generation,
        }
    }

    /// Adds `candidates` to `pop` in order, skipping chromosomes already present.
    fn admit(
        &self,
        pop: &mut Vec<CandidateSet>,
        seen: &mut HashSet<Vec<usize>>,
        candidates: Vec<(Vec<usize>, ChaCha8Rng)>,
        generation: usize,
    ) {
        let mut fresh = Vec::new();
        for (mut ids, mut rng) in candidates {
            let mut tries = 0;
            while seen.contains(&ids) && tries < DEDUP_TRIES {
                if tries < DEDUP_TRIES / 2 {
                    self.mutate(&mut ids, &mut rng);
                    if seen.contains(&ids) {
                        self.try_add(&mut ids, &mut rng);
                    }
                } else {
                    ids = self.random_individual(&mut rng);
                }
                tries += 1;
            }
            if seen.insert(ids.clone()) {
                fresh.push(ids);
            }
        }
        let evaluated: Vec<CandidateSet> = fresh
            .into_par_iter()
            .map(|ids| self.evaluate(ids, generation))
            .collect();
        pop.extend(evaluated);
        pop.sort_by(by_rank);
    }

    fn random_candidates(
        &self,
        generation: usize,
        count: usize,
        stream_offset: usize,
    ) -> Vec<(Vec<usize>, ChaCha8Rng)> {
        (0..count)
            .into_par_iter()
            .map(|slot| {
                let mut rng = slot_rng(self.cfg.seed, generation, stream_offset + slot);
                (self.random_individual(&mut rng), rng)
            })
            .collect()
    }
}

/// Runs the search and returns the best set ever seen with its log.
pub fn select_optimal(
    spans: &[FragmentSpan],
    dist: &DistanceMatrix,
    contour_len: usize,
    cfg: &GaConfig,
) -> Result<(CandidateSet, RunLog)> {
    select_optimal_observed(spans, dist, contour_len, cfg, &mut |_, _| {})
}

/// As [`select_optimal`], calling `observer(generation, population)` after
/// every generation (generation 0 is the initial population).
pub fn select_optimal_observed(
    spans: &[FragmentSpan],
    dist: &DistanceMatrix,
    contour_len: usize,
    cfg: &GaConfig,
    observer: &mut dyn FnMut(usize, &[CandidateSet]),
) -> Result<(CandidateSet, RunLog)> {
    if spans.is_empty() {
        return Err(Error::NoFragments);
    }
    if dist.len() != spans.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} fragments, {}x{} matrix",
            spans.len(),
            dist.len(),
            dist.len()
        )));
    }
    if let Some(s) = spans.iter().find(|s| s.end >= contour_len) {
        return Err(Error::PreconditionViolation(format!(
            "fragment ends at {} beyond contour of {contour_len}",
            s.end
        )));
    }
    cfg.validate()?;
    let search = Search {
        spans,
        dist,
        contour_len,
        cfg,
        neighbours: nearest_neighbours(dist, NEIGHBOURS),
    };
    let restart_streams = 1usize << 31;

    let mut pop = Vec::with_capacity(cfg.population);
    search.admit(
        &mut pop,
        &mut HashSet::new(),
        search.random_candidates(0, cfg.population, 0),
        0,
    );
    observer(0, &pop);

    let mut best = pop[0].clone();
    let mut log = RunLog::default();
    let mut stall = 0;
    for generation in 1..=cfg.max_iterations {
        let elites = cfg.elitism_count.min(pop.len());
        let slots = cfg.population - elites;
        let parents = &pop;
        let children: Vec<(Vec<usize>, ChaCha8Rng)> = (0..slots)
            .into_par_iter()
            .map(|slot| {
                let mut rng = slot_rng(cfg.seed, generation, slot);
                (search.breed(parents, &mut rng), rng)
            })
            .collect();
        let mut next: Vec<CandidateSet> = pop[..elites].to_vec();
        let mut seen: HashSet<Vec<usize>> = next.iter().map(|c| c.fragment_ids.clone()).collect();
        search.admit(&mut next, &mut seen, children, generation);
        pop = next;

        if pop[0].fitness > best.fitness {
            best = pop[0].clone();
            stall = 0;
        } else {
            stall += 1;
        }
        if stall >= cfg.stall_limit {
            log.restarts.push(generation);
            stall = 0;
            pop.truncate(elites);
            let mut seen = pop.iter().map(|c| c.fragment_ids.clone()).collect();
            let fresh =
                search.random_candidates(generation, cfg.population - elites, restart_streams);
            search.admit(&mut pop, &mut seen, fresh, generation);
        }
        observer(generation, &pop);

        let mean = pop.iter().map(|c| c.fitness).sum::<f64>() / pop.len() as f64;
        log.generations.push(GenerationRecord {
            generation,
            best_fitness: best.fitness,
            mean_fitness: mean,
            restarts_so_far: log.restarts.len(),
        });
        log.total_iterations = generation;
    }
    Ok((best, log))
}
