//! Personalization masks and the personal/global merge.
//!
//! A mask bit of 1 keeps the client's own value, 0 takes the global value.
//! Variance-driven masks select exactly `round(p·n_W)` elements with the
//! largest global variance; equal variances are ordered by ascending element
//! index, so the threshold is a consequence of the selection, not an input.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::tensor::{LayerTag, Layout, ParamSet};

#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    layout: Layout,
    bits: Vec<bool>,
    p: f64,
}

impl Mask {
    pub fn from_bits(layout: Layout, bits: Vec<bool>, p: f64) -> Result<Self> {
        if bits.len() != layout.num_elements() {
            return Err(Error::Alignment(format!(
                "{} mask bits for {} elements",
                bits.len(),
                layout.num_elements()
            )));
        }
        Ok(Self { layout, bits, p })
    }

    pub fn zeros(layout: Layout) -> Self {
        let n = layout.num_elements();
        Self {
            layout,
            bits: vec![false; n],
            p: 0.0,
        }
    }

    pub fn ones(layout: Layout) -> Self {
        let n = layout.num_elements();
        Self {
            layout,
            bits: vec![true; n],
            p: 1.0,
        }
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    /// Requested personalization proportion.
    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    /// Fraction of bits that differ from `previous`.
    pub fn churn(&self, previous: &Mask) -> Result<f64> {
        self.layout.check_same(&previous.layout)?;
        if self.bits.is_empty() {
            return Ok(0.0);
        }
        let flipped = self.bits.iter().zip(&previous.bits).filter(|(a, b)| a != b).count();
        Ok(flipped as f64 / self.bits.len() as f64)
    }
}

/// `round(p·n)` with halves rounded up.
pub fn personalized_count(p: f64, n: usize) -> usize {
    ((p * n as f64 + 0.5).floor() as usize).min(n)
}

/// Mark the `round(p·n_W)` largest variances as personalized.
pub fn select_mask(sigma_g: &ParamSet, p: f64) -> Result<Mask> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::config("p", format!("must be in [0, 1], got {p}")));
    }
    let sigma = sigma_g.to_flat();
    if sigma.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(Error::NonFinite("mask variances must be finite and positive".into()));
    }
    let n = sigma.len();
    let k = personalized_count(p, n);
    let mut bits = vec![false; n];
    if k == n {
        bits.fill(true);
    } else if k > 0 {
        // Larger variance first, then lower index: a strict total order, so
        // the first k after partial selection are unique.
        let order = |a: &usize, b: &usize| -> Ordering { sigma[*b].total_cmp(&sigma[*a]).then(a.cmp(b)) };
        let mut idx: Vec<usize> = (0..n).collect();
        idx.select_nth_unstable_by(k - 1, order);
        for &i in &idx[..k] {
            bits[i] = true;
        }
    }
    Mask::from_bits(sigma_g.layout(), bits, p)
}

/// `w_i ⊙ M + w_g ⊙ (1 − M)`.
pub fn merge(w_i: &ParamSet, w_g: &ParamSet, mask: &Mask) -> Result<ParamSet> {
    w_i.check_aligned(w_g)?;
    w_i.layout().check_same(&mask.layout)?;
    let mut out = w_g.clone();
    for ((o, own), keep) in out.values_mut().zip(w_i.values()).zip(&mask.bits) {
        if *keep {
            *o = *own;
        }
    }
    Ok(out)
}

/// Personalize every element of the entries carrying `tag`.
pub fn layer_mask(params: &ParamSet, tag: LayerTag) -> Result<Mask> {
    let mut bits = Vec::with_capacity(params.num_elements());
    for e in params.entries() {
        let Some(t) = e.tag else {
            return Err(Error::config("tag", format!("entry `{}` has no layer tag", e.name)));
        };
        bits.extend(std::iter::repeat_n(t == tag, e.tensor.len()));
    }
    let n = bits.len().max(1);
    let p = bits.iter().filter(|b| **b).count() as f64 / n as f64;
    Mask::from_bits(params.layout(), bits, p)
}
