//! Modified Bessel functions of the first kind, orders 0 and 1, plus their
//! exponentially scaled forms.
//!
//! |x| <= 20 uses the ascending power series (all terms positive, so it is
//! accurate to a few ulps); beyond that the Hankel asymptotic expansion is summed
//! up to its smallest term, whose magnitude is below 1e-17 there.

use std::f64::consts::PI;

const SERIES_LIMIT: f64 = 20.0;

fn series(x: f64, order: u32) -> f64 {
    let q = 0.25 * x * x;
    let mut term = if order == 0 { 1.0 } else { 0.5 * x };
    let mut sum = term;
    let mut k = 1.0;
    loop {
        term *= q / (k * (k + order as f64));
        sum += term;
        if term.abs() <= 1e-17 * sum.abs() {
            break;
        }
        k += 1.0;
    }
    sum
}

/// sqrt(2πx)·e^{-x}·I_ν(x) for large positive x.
fn asymptotic_scaled(x: f64, order: u32) -> f64 {
    let mu = 4.0 * (order * order) as f64;
    let mut term: f64 = 1.0;
    let mut sum: f64 = 1.0;
    let mut k = 1.0;
    loop {
        let odd = 2.0 * k - 1.0;
        let next = term * -(mu - odd * odd) / (k * 8.0 * x);
        if next.abs() >= term.abs() || next.abs() < 1e-17 * sum.abs() {
            if next.abs() < term.abs() {
                sum += next;
            }
            break;
        }
        sum += next;
        term = next;
        k += 1.0;
    }
    sum
}

pub fn i0(x: f64) -> f64 {
    let ax = x.abs();
    if ax <= SERIES_LIMIT {
        series(ax, 0)
    } else {
        asymptotic_scaled(ax, 0) * ax.exp() / (2.0 * PI * ax).sqrt()
    }
}

pub fn i1(x: f64) -> f64 {
    let ax = x.abs();
    let v = if ax <= SERIES_LIMIT {
        series(ax, 1)
    } else {
        asymptotic_scaled(ax, 1) * ax.exp() / (2.0 * PI * ax).sqrt()
    };
    v.copysign(x)
}

pub fn i0e(x: f64) -> f64 {
    let ax = x.abs();
    if ax <= SERIES_LIMIT {
        series(ax, 0) * (-ax).exp()
    } else {
        asymptotic_scaled(ax, 0) / (2.0 * PI * ax).sqrt()
    }
}

pub fn i1e(x: f64) -> f64 {
    let ax = x.abs();
    let v = if ax <= SERIES_LIMIT {
        series(ax, 1) * (-ax).exp()
    } else {
        asymptotic_scaled(ax, 1) / (2.0 * PI * ax).sqrt()
    };
    if x == 0.0 {
        0.0
    } else {
        v.copysign(x)
    }
}
