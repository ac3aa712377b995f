//! Central finite-difference checks of analytic gradients.

use rand::seq::index::sample;
use rand::Rng;

use super::params::ParamStore;
use crate::error::Result;

/// Magnitudes below this are compared on an absolute basis: the relative
/// error denominator never drops under it.
pub const REL_ERR_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

#[derive(Debug, Clone)]
pub struct CoordCheck {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone)]
pub struct GroupReport {
    pub name: String,
    pub checks: Vec<CoordCheck>,
}

impl GroupReport {
    pub fn max_rel_err(&self) -> f64 {
        self.checks.iter().map(|c| c.rel_err).fold(0.0, f64::max)
    }

    pub fn passed(&self, tol: f64) -> bool {
        self.max_rel_err() <= tol
    }
}

/// Compares `analytic` against `(f(θ + h) − f(θ − h)) / 2h` on up to
/// `per_group` random coordinates of every parameter array.
pub fn check_groups<F, R>(
    params: &ParamStore,
    analytic: &ParamStore,
    f: F,
    per_group: usize,
    step: f64,
    rng: &mut R,
) -> Result<Vec<GroupReport>>
where
    F: Fn(&ParamStore) -> Result<f64>,
    R: Rng + ?Sized,
{
    let mut work = params.clone();
    let mut reports = Vec::new();
    for name in params.names() {
        let n = params.get(&name)?.numel();
        let picks = sample(rng, n, per_group.min(n)).into_vec();
        let mut checks = Vec::with_capacity(picks.len());
        for idx in picks {
            let orig = params.get(&name)?.data()[idx];
            work.get_mut(&name)?.data_mut()[idx] = orig + step;
            let up = f(&work)?;
            work.get_mut(&name)?.data_mut()[idx] = orig - step;
            let down = f(&work)?;
            work.get_mut(&name)?.data_mut()[idx] = orig;
            let numeric = (up - down) / (2.0 * step);
            let a = analytic.get(&name)?.data()[idx];
            checks.push(CoordCheck {
                index: idx,
                analytic: a,
                numeric,
                rel_err: relative_error(a, numeric),
            });
        }
        reports.push(GroupReport { name, checks });
    }
    Ok(reports)
}
