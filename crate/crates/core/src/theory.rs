//! Rate exponents and theory-driven parameter choices.
//!
//! With `a' = (1 - 2^-alpha) / ln 2`, the estimation rate exponent is
//! `gamma1 = a' / (d + 2 a')` and the block-size threshold exponent is
//! `gamma2 = (d + 2 a') / ((1 - beta) d + 2 (1 + beta) a')`. The recommended
//! settings are `m = min(n, (n/|O|)^gamma2)`,
//! `p = ((1 - 2 gamma1) / ln 2) ln m` and `T = m^(2 gamma1)`.
//!
//! These are asymptotic scalings with every constant set to 1. They are a
//! starting point for a parameter search, not tuned values.

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TheoryInputs {
    /// Hölder exponent of the target density, in (0, 1].
    pub alpha: f64,
    /// Outlier proportion exponent, in [0, 1].
    pub beta: f64,
    pub dim: usize,
    pub n: usize,
    pub n_outliers: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Exponents {
    pub alpha_prime: f64,
    pub gamma1: f64,
    pub gamma2: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RecommendedParams {
    pub alpha_prime: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub m: usize,
    pub p: u32,
    pub trees: usize,
}

fn check_exponents(alpha: f64, beta: f64, dim: usize) -> Result<()> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "alpha must lie in (0, 1], got {alpha}"
        )));
    }
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::InvalidArgument(format!(
            "beta must lie in [0, 1], got {beta}"
        )));
    }
    if dim == 0 {
        return Err(Error::InvalidArgument(
            "dimension must be at least 1".into(),
        ));
    }
    Ok(())
}

pub fn gammas(alpha: f64, beta: f64, dim: usize) -> Result<Exponents> {
    check_exponents(alpha, beta, dim)?;
    let ln2 = std::f64::consts::LN_2;
    let alpha_prime = (1.0 - (-alpha).exp2()) / ln2;
    let d = dim as f64;
    let gamma1 = alpha_prime / (d + 2.0 * alpha_prime);
    let gamma2 = (d + 2.0 * alpha_prime) / ((1.0 - beta) * d + 2.0 * (1.0 + beta) * alpha_prime);
    Ok(Exponents {
        alpha_prime,
        gamma1,
        gamma2,
    })
}

pub fn recommend(inputs: &TheoryInputs) -> Result<RecommendedParams> {
    let TheoryInputs {
        alpha,
        beta,
        dim,
        n,
        n_outliers,
    } = *inputs;
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need n >= 2, got {n}")));
    }
    if n_outliers > n {
        return Err(Error::InvalidArgument(format!(
            "{n_outliers} outliers exceed the sample size {n}"
        )));
    }
    let e = gammas(alpha, beta, dim)?;
    let threshold = if n_outliers == 0 {
        f64::INFINITY
    } else {
        (n as f64 / n_outliers as f64).powf(e.gamma2)
    };
    let m = (n as f64).min(threshold).round().max(1.0) as usize;
    let m = m.min(n);
    let ln_m = (m as f64).ln();
    let p = (((1.0 - 2.0 * e.gamma1) / std::f64::consts::LN_2) * ln_m)
        .round()
        .max(0.0) as u32;
    let trees = (m as f64).powf(2.0 * e.gamma1).round().max(1.0) as usize;
    Ok(RecommendedParams {
        alpha_prime: e.alpha_prime,
        gamma1: e.gamma1,
        gamma2: e.gamma2,
        m,
        p,
        trees,
    })
}
