#![allow(dead_code)]

use koopgen::dictionary::{Basis, Dictionary, DictionarySpec};
use koopgen::edmd::{OperatorModel, TrajectoryDataset};
use koopgen::numerics::{Matrix, Vector};
use koopgen::ocp::QuadraticStageCost;
use koopgen::plants::{sample_training_set, DuffingParams, InputBox, Plant, SamplingSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
    Matrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

pub fn vector(rng: &mut ChaCha8Rng, n: usize) -> Vector {
    Vector::from_fn(n, |_, _| rng.random_range(-1.0..1.0))
}

pub fn point(rng: &mut ChaCha8Rng, n: usize, half: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-half..half)).collect()
}

pub fn rel_err(a: &Matrix, b: &Matrix) -> f64 {
    (a - b).norm() / b.norm().max(1.0)
}

pub fn monomials(n: usize, degree: usize) -> Dictionary {
    Dictionary::new(DictionarySpec::new(n, Basis::Monomials { degree })).unwrap()
}

pub fn duffing_scattered(count: usize, snapshot_dt: Option<f64>, seed: u64) -> (Plant, TrajectoryDataset) {
    let plant = Plant::duffing(DuffingParams::default());
    let spec = SamplingSpec::Scattered {
        count,
        lo: vec![-3.0, -3.0],
        hi: vec![3.0, 3.0],
        inputs: vec![vec![-1.0], vec![1.0]],
        snapshot_dt,
        stencil_radius: 0,
    };
    let data = sample_training_set(&plant, &spec, seed).unwrap();
    (plant, data)
}

/// A contractive-ish random bilinear operator model on an identity dictionary.
pub fn random_operator(rng: &mut ChaCha8Rng, n: usize, nc: usize, dt: f64, half_width: f64) -> OperatorModel {
    let k0 = Matrix::identity(n, n) + matrix(rng, n, n) * (0.5 / n as f64);
    let b = (0..nc).map(|_| matrix(rng, n, n) * (0.3 / n as f64)).collect();
    OperatorModel::new(k0, b, dt, DictionarySpec::new(n, Basis::Identity), InputBox::symmetric(half_width, nc)).unwrap()
}

pub fn random_cost(rng: &mut ChaCha8Rng, n: usize, nc: usize, horizon: usize) -> QuadraticStageCost {
    let g = matrix(rng, n, n);
    let q = &g * g.transpose() / n as f64;
    let r = Matrix::identity(nc, nc) * rng.random_range(0.01..1.0);
    let a = (0..horizon).map(|_| vector(rng, n)).collect();
    QuadraticStageCost::constant(q, r, a)
}
