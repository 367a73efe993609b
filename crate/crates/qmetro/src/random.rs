//! Seeded random instances used by optimizer initialization and property tests.

use crate::linalg::{c, cr, eye, gram_schmidt, psd_sqrt, trace, CMat, CVec};
use crate::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

pub fn gaussian<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

pub fn ginibre<R: Rng + ?Sized>(rng: &mut R, n: usize, m: usize) -> CMat {
    CMat::from_fn(n, m, |_, _| c(gaussian(rng), gaussian(rng)))
}

pub fn random_hermitian<R: Rng + ?Sized>(rng: &mut R, d: usize) -> CMat {
    let g = ginibre(rng, d, d);
    (&g + g.adjoint()) * cr(0.5)
}

pub fn random_traceless_hermitian<R: Rng + ?Sized>(rng: &mut R, d: usize) -> CMat {
    let h = random_hermitian(rng, d);
    let t = trace(&h) / cr(d as f64);
    h - eye(d) * t
}

pub fn random_ket<R: Rng + ?Sized>(rng: &mut R, d: usize) -> CVec {
    let v = CVec::from_fn(d, |_, _| c(gaussian(rng), gaussian(rng)));
    let n = v.norm();
    v / cr(n)
}

/// Haar-distributed unitary via Gram–Schmidt of a Ginibre matrix.
pub fn random_unitary<R: Rng + ?Sized>(rng: &mut R, d: usize) -> CMat {
    gram_schmidt(&ginibre(rng, d, d))
}

/// Full-rank density matrix with a small maximally mixed admixture.
pub fn random_state_full_rank<R: Rng + ?Sized>(rng: &mut R, d: usize) -> CMat {
    let g = ginibre(rng, d, d);
    let w = &g * g.adjoint();
    let w = &w / trace(&w);
    w * cr(0.95) + eye(d) * cr(0.05 / d as f64)
}

/// Random POVM with `n` elements obtained by normalizing Wishart matrices.
pub fn random_povm<R: Rng + ?Sized>(rng: &mut R, d: usize, n: usize) -> Vec<CMat> {
    let parts: Vec<CMat> = (0..n)
        .map(|_| {
            let g = ginibre(rng, d, 1);
            &g * g.adjoint()
        })
        .collect();
    let total = parts.iter().fold(CMat::zeros(d, d), |acc, p| acc + p);
    let s = psd_sqrt(&total);
    let s_inv = s.try_inverse().unwrap_or_else(|| eye(d));
    parts.iter().map(|p| &s_inv * p * &s_inv).collect()
}
