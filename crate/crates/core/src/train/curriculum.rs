use crate::error::{Error, Result};

/// Length limit admitted during one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurriculumState {
    pub current_limit: usize,
    /// Starting limit: half the longest training sentence, rounded up.
    pub base: usize,
    pub max_len: usize,
    /// Growth per epoch, in percent.
    pub rate: f64,
    /// Grow by `rate`% of `base` each epoch instead of compounding.
    pub additive: bool,
}

impl CurriculumState {
    pub fn new(max_len: usize, rate: f64, additive: bool) -> Result<Self> {
        if max_len == 0 {
            return Err(Error::Schedule("curriculum over an empty corpus".into()));
        }
        if !(rate >= 0.0) || !rate.is_finite() {
            return Err(Error::Config(format!("curriculum rate must be a finite value ≥ 0, got {rate}")));
        }
        let base = max_len.div_ceil(2);
        Ok(CurriculumState {
            current_limit: base,
            base,
            max_len,
            rate,
            additive,
        })
    }

    pub fn admits(&self, len: usize) -> bool {
        len <= self.current_limit
    }
}

/// One epoch of growth, capped at the corpus maximum.
pub fn curriculum_next(state: &CurriculumState) -> CurriculumState {
    let grown = if state.additive {
        state.current_limit as f64 + state.base as f64 * state.rate / 100.0
    } else {
        state.current_limit as f64 * (100.0 + state.rate) / 100.0
    };
    // tolerance so exact products such as 10 × 1.1 are not pushed up by rounding
    let limit = ((grown - 1e-9).ceil() as usize).max(state.current_limit);
    CurriculumState {
        current_limit: limit.min(state.max_len),
        ..*state
    }
}
