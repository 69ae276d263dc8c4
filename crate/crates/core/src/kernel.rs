//! Look-ahead kernels `η` supported on `[−1, 0]`, their rescalings
//! `η_H(x) = η(x/H)/H`, and the one-sided discrete convolution used by the
//! nonlocal scheme.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{CellField, Grid1D};

/// Sample count used to verify the kernel hypotheses at construction.
const CHECK_SAMPLES: usize = 10_000;

/// Closed-form kernel profiles on `[−1, 0]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelShape {
    /// `η(x) = 2(x + 1)`.
    #[default]
    Affine,
    /// `η(x) = 3(x + 1)²`.
    Quadratic,
}

impl KernelShape {
    fn eval(self, x: f64) -> f64 {
        if !(-1.0..=0.0).contains(&x) {
            return 0.0;
        }
        match self {
            KernelShape::Affine => 2.0 * (x + 1.0),
            KernelShape::Quadratic => 3.0 * (x + 1.0) * (x + 1.0),
        }
    }
}

/// A validated kernel: non-negative, non-decreasing on `[−1, 0]`, vanishing
/// at `−1` and of unit mass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    shape: KernelShape,
}

impl Default for KernelSpec {
    fn default() -> Self {
        Self {
            shape: KernelShape::Affine,
        }
    }
}

impl KernelSpec {
    pub fn new(shape: KernelShape) -> Result<Self> {
        let spec = Self { shape };
        spec.validate()?;
        Ok(spec)
    }

    pub fn shape(&self) -> KernelShape {
        self.shape
    }

    fn validate(&self) -> Result<()> {
        let h = 1.0 / CHECK_SAMPLES as f64;
        let samples: Vec<f64> = (0..=CHECK_SAMPLES)
            .map(|i| self.shape.eval(-1.0 + i as f64 * h))
            .collect();
        if samples[0] != 0.0 {
            return Err(Error::InvalidKernel(format!(
                "{:?}: η(−1) = {} ≠ 0",
                self.shape, samples[0]
            )));
        }
        if let Some(i) = samples.iter().position(|&v| v < 0.0) {
            return Err(Error::InvalidKernel(format!(
                "{:?}: negative at x = {}",
                self.shape,
                -1.0 + i as f64 * h
            )));
        }
        if let Some(i) = samples.windows(2).position(|w| w[1] < w[0]) {
            return Err(Error::InvalidKernel(format!(
                "{:?}: decreasing near x = {}",
                self.shape,
                -1.0 + i as f64 * h
            )));
        }
        // composite Simpson, exact for the polynomial shapes
        let mass = samples
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let w = if i == 0 || i == CHECK_SAMPLES {
                    1.0
                } else if i % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                w * v
            })
            .sum::<f64>()
            * h
            / 3.0;
        if (mass - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidKernel(format!(
                "{:?}: mass {mass} ≠ 1",
                self.shape
            )));
        }
        Ok(())
    }

    /// `η_H(x) = η(x/H)/H`, zero outside `[−H, 0]`.
    pub fn value(&self, h: f64, x: f64) -> Result<f64> {
        if !(h > 0.0) {
            return Err(Error::NonPositiveWidth(h));
        }
        Ok(self.shape.eval(x / h) / h)
    }
}

/// Number of cells spanned by a kernel of width `h`, `⌈h/dx⌉`, with ratios
/// within 1e-9 of an integer rounded to it.
pub fn tap_count(h: f64, dx: f64) -> usize {
    let ratio = h / dx;
    let r = ratio.round();
    let n = if (ratio - r).abs() <= 1e-9 * r.max(1.0) {
        r
    } else {
        ratio.ceil()
    };
    (n as usize).max(1)
}

/// Normalized look-ahead weights: `weights[i]` multiplies the value `i`
/// cells downstream.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteKernel {
    h: f64,
    dx: f64,
    weights: Vec<f64>,
}

impl DiscreteKernel {
    /// Samples `η_H` at `−i·dx`, `i = 0 … N_H − 1`, and normalizes.
    pub fn new(spec: &KernelSpec, h: f64, dx: f64) -> Result<Self> {
        if !(h > 0.0) {
            return Err(Error::NonPositiveWidth(h));
        }
        if !(dx > 0.0) {
            return Err(Error::InvalidKernel(format!("dx = {dx} must be positive")));
        }
        let n = tap_count(h, dx);
        if n == 1 {
            return Ok(Self {
                h,
                dx,
                weights: vec![1.0],
            });
        }
        let samples = (0..n)
            .map(|i| spec.value(h, -(i as f64) * dx))
            .collect::<Result<Vec<_>>>()?;
        let total: f64 = samples.iter().sum();
        if !(total > 0.0) {
            return Err(Error::InvalidKernel(format!(
                "all kernel samples vanish for H = {h}, dx = {dx}"
            )));
        }
        Ok(Self {
            h,
            dx,
            weights: samples.into_iter().map(|s| s / total).collect(),
        })
    }

    /// The pointwise kernel `[1.0]`.
    pub fn identity(dx: f64) -> Self {
        Self {
            h: dx,
            dx,
            weights: vec![1.0],
        }
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn n_taps(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn is_pointwise(&self) -> bool {
        self.weights.len() == 1
    }
}

/// Field padded with ghost cells on both sides.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedField {
    pub grid: Grid1D,
    pub n_left: usize,
    pub n_right: usize,
    pub values: Vec<f64>,
}

impl ExtendedField {
    /// The interior values, i.e. the field on the unextended grid.
    pub fn interior(&self) -> &[f64] {
        &self.values[self.n_left..self.values.len() - self.n_right]
    }
}

/// Constant extension: `n_left` copies of the first value in front and
/// `n_right` copies of the last value behind.
pub fn extend_boundary(f: &CellField, n_left: usize, n_right: usize) -> ExtendedField {
    let mut values = Vec::with_capacity(f.len() + n_left + n_right);
    extend_into(f.values(), n_left, n_right, &mut values);
    ExtendedField {
        grid: *f.grid(),
        n_left,
        n_right,
        values,
    }
}

pub(crate) fn extend_into(values: &[f64], n_left: usize, n_right: usize, out: &mut Vec<f64>) {
    out.clear();
    let first = values[0];
    let last = values[values.len() - 1];
    out.extend(std::iter::repeat_n(first, n_left));
    out.extend_from_slice(values);
    out.extend(std::iter::repeat_n(last, n_right));
}

/// `output_j = Σ_i weights_i · f_{j+i}` on the unextended grid.
pub fn convolve(f: &ExtendedField, k: &DiscreteKernel) -> Result<CellField> {
    let required = k.n_taps() - 1;
    if f.n_right < required {
        return Err(Error::InsufficientGhosts {
            required,
            available: f.n_right,
        });
    }
    let n = f.grid.n_cells();
    let mut out = vec![0.0; n];
    convolve_into(&f.values[f.n_left..], k.weights(), &mut out);
    CellField::new(f.grid, out)
}

/// Fills `out[j] = Σ_i weights[i]·values[j+i]`; `values` must hold at least
/// `out.len() + weights.len() − 1` entries.
#[inline]
pub(crate) fn convolve_into(values: &[f64], weights: &[f64], out: &mut [f64]) {
    debug_assert!(values.len() + 1 >= out.len() + weights.len());
    if weights.len() == 1 {
        let w = weights[0];
        for (o, &v) in out.iter_mut().zip(values) {
            *o = w * v;
        }
        return;
    }
    for (j, o) in out.iter_mut().enumerate() {
        *o = weights.iter().zip(&values[j..]).map(|(w, v)| w * v).sum();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_values() {
        let k = KernelSpec::default();
        assert_eq!(k.value(0.5, 0.0).unwrap(), 4.0);
        assert_eq!(k.value(0.5, -0.5).unwrap(), 0.0);
        assert_eq!(k.value(0.5, -0.25).unwrap(), 2.0);
        assert_eq!(k.value(0.5, 0.1).unwrap(), 0.0);
        assert_eq!(k.value(0.5, -0.6).unwrap(), 0.0);
        assert!(matches!(k.value(0.0, 0.0), Err(Error::NonPositiveWidth(_))));
        assert!(matches!(
            k.value(-1.0, 0.0),
            Err(Error::NonPositiveWidth(_))
        ));
    }

    #[test]
    fn shapes_pass_validation() {
        assert!(KernelSpec::new(KernelShape::Affine).is_ok());
        assert!(KernelSpec::new(KernelShape::Quadratic).is_ok());
    }

    #[test]
    fn tap_counts() {
        assert_eq!(tap_count(0.005, 0.01), 1);
        assert_eq!(tap_count(0.01, 0.01), 1);
        assert_eq!(tap_count(0.07, 0.01), 7);
        assert_eq!(tap_count(0.5, 0.01), 50);
        assert_eq!(tap_count(0.5, 0.08), 7);
    }

    #[test]
    fn narrow_kernel_is_pointwise() {
        let spec = KernelSpec::default();
        for h in [0.001, 0.005, 0.01] {
            let k = DiscreteKernel::new(&spec, h, 0.01).unwrap();
            assert_eq!(k.weights(), &[1.0]);
        }
    }

    #[test]
    fn two_tap_weights() {
        // η_H(0) = 2/H and η_H(−H/2) = 1/H normalize to 2/3 and 1/3
        let dx = 0.1;
        let k = DiscreteKernel::new(&KernelSpec::default(), 2.0 * dx, dx).unwrap();
        assert_eq!(k.n_taps(), 2);
        assert!((k.weights()[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((k.weights()[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn weights_sum_to_one() {
        let spec = KernelSpec::default();
        for (h, dx) in [(0.5, 0.01), (0.08, 0.01), (0.5, 0.002), (0.3, 0.07)] {
            let k = DiscreteKernel::new(&spec, h, dx).unwrap();
            let s: f64 = k.weights().iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
            assert!(k.weights().iter().all(|&w| w >= 0.0));
            assert!(k.weights().windows(2).all(|w| w[1] <= w[0]));
        }
    }

    #[test]
    fn extension() {
        let g = Grid1D::new(0.0, 3.0, 1.0).unwrap();
        let f = CellField::new(g, vec![1.0, 2.0, 3.0]).unwrap();
        let e = extend_boundary(&f, 1, 1);
        assert_eq!(e.values, vec![1.0, 1.0, 2.0, 3.0, 3.0]);
        assert_eq!(e.interior(), f.values());
        let c = extend_boundary(&CellField::constant(g, 0.4), 2, 5);
        assert!(c.values.iter().all(|&v| v == 0.4));
        assert_eq!(c.values.len(), 10);
    }

    #[test]
    fn convolution_hand_example() {
        let g = Grid1D::new(0.0, 0.4, 0.1).unwrap();
        let f = CellField::new(g, vec![0.2, 0.2, 0.7, 0.7]).unwrap();
        let k = DiscreteKernel::new(&KernelSpec::default(), 0.2, 0.1).unwrap();
        let out = convolve(&extend_boundary(&f, 0, 1), &k).unwrap();
        let expected = [0.2, 0.7 / 3.0 + 2.0 * 0.2 / 3.0, 0.7, 0.7];
        for (a, b) in out.values().iter().zip(expected) {
            assert!((a - b).abs() < 1e-15, "{a} vs {b}");
        }
    }

    #[test]
    fn pointwise_convolution_is_identity() {
        let g = Grid1D::new(0.0, 0.4, 0.1).unwrap();
        let f = CellField::new(g, vec![0.1, 0.9, 0.3, 0.5]).unwrap();
        let out = convolve(&extend_boundary(&f, 1, 0), &DiscreteKernel::identity(0.1)).unwrap();
        assert_eq!(out, f);
    }

    #[test]
    fn convolution_requires_ghosts() {
        let g = Grid1D::new(0.0, 0.4, 0.1).unwrap();
        let f = CellField::constant(g, 0.5);
        let k = DiscreteKernel::new(&KernelSpec::default(), 0.35, 0.1).unwrap();
        assert_eq!(k.n_taps(), 4);
        match convolve(&extend_boundary(&f, 1, 2), &k) {
            Err(Error::InsufficientGhosts {
                required: 3,
                available: 2,
            }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }
}
