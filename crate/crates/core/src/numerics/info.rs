//! Entropy, KL divergence and cross-entropy over discrete distributions.

use crate::error::{Error, Result};

const SUM_TOL: f64 = 1e-9;

fn validate(name: &str, p: &[f64]) -> Result<()> {
    if p.is_empty() {
        return Err(Error::InvalidDistribution(format!("{name} is empty")));
    }
    if let Some(v) = p.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(Error::InvalidDistribution(format!("{name} has entry {v}")));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > SUM_TOL {
        return Err(Error::InvalidDistribution(format!("{name} sums to {s}")));
    }
    Ok(())
}

fn same_len(p: &[f64], q: &[f64]) -> Result<()> {
    if p.len() != q.len() {
        return Err(Error::InvalidDistribution(format!(
            "length mismatch {} vs {}",
            p.len(),
            q.len()
        )));
    }
    Ok(())
}

/// E(P) = −Σ p ln p, with 0·ln 0 = 0.
pub fn entropy(p: &[f64]) -> Result<f64> {
    validate("p", p)?;
    Ok(-p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum::<f64>())
}

/// KL(P‖Q) = Σ p ln(p/q). Infinite when q vanishes where p does not.
pub fn kl(p: &[f64], q: &[f64]) -> Result<f64> {
    validate("p", p)?;
    validate("q", q)?;
    same_len(p, q)?;
    Ok(p.iter()
        .zip(q)
        .filter(|(&a, _)| a > 0.0)
        .map(|(&a, &b)| a * (a.ln() - b.ln()))
        .sum())
}

/// CE(P, Q) = −Σ p ln q.
pub fn cross_entropy(p: &[f64], q: &[f64]) -> Result<f64> {
    validate("p", p)?;
    validate("q", q)?;
    same_len(p, q)?;
    Ok(-p.iter()
        .zip(q)
        .filter(|(&a, _)| a > 0.0)
        .map(|(&a, &b)| a * b.ln())
        .sum::<f64>())
}
