//! Genetic capture of the outer contour.
//!
//! Individuals are flat gene vectors; four consecutive genes encode one
//! control point as (weight, x, y, z). Each generation mutates and crosses a
//! copy of the population, then elitist truncation keeps the fittest half of
//! parents and offspring together, so the best fitness never regresses.

use nalgebra::Point3;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::hull::{point_in_hull, PointHull};
use super::{fitness, ImagingError};
use crate::geometry::{ControlPoint, Metaball};
use crate::{real, Real};

#[derive(Debug, Clone)]
pub struct GaConfig {
    /// Generations to evolve.
    pub generations: usize,
    /// Individuals kept after each selection.
    pub population: usize,
    /// Scalar genes per individual; every four encode one control point.
    pub genes: usize,
    /// Per-gene mutation probability.
    pub mutation_coeff: f64,
    /// Fraction of the genome before the crossover cut, in (0,1).
    pub crossover_coeff: f64,
    pub rng_seed: u64,
}

impl Default for GaConfig {
    fn default() -> Self {
        Self {
            generations: 100,
            population: 1200,
            genes: 100,
            mutation_coeff: 0.6,
            crossover_coeff: 0.5,
            rng_seed: 0,
        }
    }
}

impl GaConfig {
    fn validate(&self) -> Result<(), ImagingError> {
        let fail = |what: &str| {
            Err(ImagingError::InvalidConfig {
                what: what.to_string(),
            })
        };
        if self.generations < 1 {
            return fail("generations must be at least 1");
        }
        if self.population < 1 {
            return fail("population must be at least 1");
        }
        if self.genes < 4 {
            return fail("genes must be at least 4 (one control point)");
        }
        if !(0.0..=1.0).contains(&self.mutation_coeff) {
            return fail("mutation_coeff must lie in [0, 1]");
        }
        if !(self.crossover_coeff > 0.0 && self.crossover_coeff < 1.0) {
            return fail("crossover_coeff must lie strictly between 0 and 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Individual<T: Real> {
    pub genes: Vec<T>,
    pub fitness: T,
}

impl<T: Real> Individual<T> {
    /// Decode the leading quadruples into a metaball; trailing genes that do
    /// not fill a quadruple are carried but never decoded.
    pub fn decode(&self) -> Result<Metaball<T>, ImagingError> {
        let cps: Vec<ControlPoint<T>> = self
            .genes
            .chunks_exact(4)
            .map(|q| ControlPoint::new(Point3::new(q[1], q[2], q[3]), q[0]))
            .collect();
        Ok(Metaball::new(cps, T::zero())?)
    }
}

pub struct GaOutcome<T: Real> {
    pub metaball: Metaball<T>,
    pub best_fitness: T,
    /// Best fitness after each generation; non-increasing by construction.
    pub history: Vec<T>,
}

/// Evolve a population against the hull and return the fittest model.
pub fn run_ga<T: Real>(hull: &PointHull<T>, cfg: &GaConfig) -> Result<Metaball<T>, ImagingError> {
    run_ga_detailed(hull, cfg).map(|outcome| outcome.metaball)
}

pub fn run_ga_detailed<T: Real>(
    hull: &PointHull<T>,
    cfg: &GaConfig,
) -> Result<GaOutcome<T>, ImagingError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let r_h = hull.bounding_radius().to_f64().unwrap_or(1.0);
    let position_sigma = 0.05 * r_h;

    let mut parents: Vec<Individual<T>> = (0..cfg.population)
        .map(|_| init_individual(hull, cfg, &mut rng, r_h))
        .collect::<Result<_, _>>()?;
    evaluate(&mut parents, hull);
    sort_by_fitness(&mut parents);

    let mut history = Vec::with_capacity(cfg.generations);
    for _ in 0..cfg.generations {
        let mut offspring = parents.clone();
        mutate(&mut offspring, cfg, &mut rng, position_sigma);
        crossover(&mut offspring, cfg, &mut rng);
        evaluate(&mut offspring, hull);

        parents.append(&mut offspring);
        sort_by_fitness(&mut parents);
        parents.truncate(cfg.population);
        history.push(parents[0].fitness);
    }

    let best = &parents[0];
    Ok(GaOutcome {
        metaball: best.decode()?,
        best_fitness: best.fitness,
        history,
    })
}

fn init_individual<T: Real>(
    hull: &PointHull<T>,
    cfg: &GaConfig,
    rng: &mut ChaCha8Rng,
    r_h: f64,
) -> Result<Individual<T>, ImagingError> {
    const MAX_TRIES: usize = 10_000;
    let bounds = hull.bounds();
    let lo = [
        bounds.min.x.to_f64().unwrap_or(0.0),
        bounds.min.y.to_f64().unwrap_or(0.0),
        bounds.min.z.to_f64().unwrap_or(0.0),
    ];
    let hi = [
        bounds.max.x.to_f64().unwrap_or(0.0),
        bounds.max.y.to_f64().unwrap_or(0.0),
        bounds.max.z.to_f64().unwrap_or(0.0),
    ];
    let mut genes = vec![T::zero(); cfg.genes];
    for quad in genes.chunks_exact_mut(4) {
        let mut placed = false;
        for _ in 0..MAX_TRIES {
            let candidate = Point3::new(
                real::<T>(rng.gen_range(lo[0]..=hi[0])),
                real::<T>(rng.gen_range(lo[1]..=hi[1])),
                real::<T>(rng.gen_range(lo[2]..=hi[2])),
            );
            if point_in_hull(hull, &candidate) {
                // Weight uniform in (0, r_h²].
                let w = (1.0 - rng.gen::<f64>()) * r_h * r_h;
                quad[0] = real::<T>(w);
                quad[1] = candidate.x;
                quad[2] = candidate.y;
                quad[3] = candidate.z;
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(ImagingError::InfeasibleInitialization { tries: MAX_TRIES });
        }
    }
    Ok(Individual {
        genes,
        fitness: real::<T>(f64::INFINITY),
    })
}

fn evaluate<T: Real>(pop: &mut [Individual<T>], hull: &PointHull<T>) {
    let scores: Vec<T> = pop
        .par_iter()
        .map(|ind| match ind.decode() {
            Ok(mb) => fitness(&mb, hull),
            Err(_) => real::<T>(f64::INFINITY),
        })
        .collect();
    for (ind, score) in pop.iter_mut().zip(scores) {
        ind.fitness = score;
    }
}

/// Stable fitness-ascending order; earlier entries win ties, so parents are
/// preferred over equal offspring and reruns stay deterministic.
fn sort_by_fitness<T: Real>(pop: &mut [Individual<T>]) {
    use std::cmp::Ordering;
    let mut order: Vec<usize> = (0..pop.len()).collect();
    order.sort_by(|&a, &b| {
        pop[a]
            .fitness
            .partial_cmp(&pop[b].fitness)
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut sorted: Vec<Individual<T>> = Vec::with_capacity(pop.len());
    for &i in &order {
        sorted.push(pop[i].clone());
    }
    pop.clone_from_slice(&sorted);
}

fn mutate<T: Real>(
    pop: &mut [Individual<T>],
    cfg: &GaConfig,
    rng: &mut ChaCha8Rng,
    position_sigma: f64,
) {
    for ind in pop.iter_mut() {
        for (idx, gene) in ind.genes.iter_mut().enumerate() {
            if rng.gen::<f64>() >= cfg.mutation_coeff {
                continue;
            }
            let noise: f64 = rng.sample(StandardNormal);
            let sigma = if idx % 4 == 0 {
                // Weight genes scale with their own magnitude.
                0.05 * gene.to_f64().unwrap_or(0.0).abs()
            } else {
                position_sigma
            };
            *gene += real::<T>(noise * sigma);
        }
    }
}

/// Pair individuals at random and swap the gene tails after a fixed cut
/// aligned to a control-point boundary.
fn crossover<T: Real>(pop: &mut [Individual<T>], cfg: &GaConfig, rng: &mut ChaCha8Rng) {
    let cut = ((cfg.crossover_coeff * cfg.genes as f64).floor() as usize / 4) * 4;
    if cut >= cfg.genes {
        return;
    }
    let mut order: Vec<usize> = (0..pop.len()).collect();
    order.shuffle(rng);
    for pair in order.chunks_exact(2) {
        let (lo, hi) = (pair[0].min(pair[1]), pair[0].max(pair[1]));
        let (head, tail) = pop.split_at_mut(hi);
        let a = &mut head[lo];
        let b = &mut tail[0];
        for g in cut..cfg.genes {
            std::mem::swap(&mut a.genes[g], &mut b.genes[g]);
        }
    }
}
