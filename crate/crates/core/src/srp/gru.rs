use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;

use crate::error::SrpError;

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Gated recurrent unit. The update gate weights the *previous* state:
/// `h' = z * h + (1 - z) * g`.
#[derive(Debug, Clone, PartialEq)]
pub struct GruCell {
    pub w_z: Array2<f64>,
    pub w_r: Array2<f64>,
    pub w_h: Array2<f64>,
    pub u_z: Array2<f64>,
    pub u_r: Array2<f64>,
    pub u_h: Array2<f64>,
    pub b_z: Array1<f64>,
    pub b_r: Array1<f64>,
    pub b_h: Array1<f64>,
}

/// Intermediate values of one step, kept for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct StepCache {
    pub x: Array1<f64>,
    pub h_prev: Array1<f64>,
    pub z: Array1<f64>,
    pub r: Array1<f64>,
    pub g: Array1<f64>,
}

impl GruCell {
    pub fn zeros(hidden: usize, input: usize) -> Self {
        Self {
            w_z: Array2::zeros((hidden, input)),
            w_r: Array2::zeros((hidden, input)),
            w_h: Array2::zeros((hidden, input)),
            u_z: Array2::zeros((hidden, hidden)),
            u_r: Array2::zeros((hidden, hidden)),
            u_h: Array2::zeros((hidden, hidden)),
            b_z: Array1::zeros(hidden),
            b_r: Array1::zeros(hidden),
            b_h: Array1::zeros(hidden),
        }
    }

    /// Uniform initialisation in `[-1/sqrt(H), 1/sqrt(H)]`.
    pub fn random(hidden: usize, input: usize, rng: &mut impl Rng) -> Self {
        let k = 1.0 / (hidden as f64).sqrt();
        let mut cell = Self::zeros(hidden, input);
        for p in cell.params_mut() {
            p.iter_mut().for_each(|v| *v = rng.random_range(-k..k));
        }
        cell
    }

    pub fn hidden_size(&self) -> usize {
        self.b_z.len()
    }

    pub fn input_size(&self) -> usize {
        self.w_z.ncols()
    }

    /// Parameter arrays in a fixed order: W_z, W_r, W_h, U_z, U_r, U_h, b_z, b_r, b_h.
    pub fn params(&self) -> [&[f64]; 9] {
        [
            self.w_z.as_slice().unwrap(),
            self.w_r.as_slice().unwrap(),
            self.w_h.as_slice().unwrap(),
            self.u_z.as_slice().unwrap(),
            self.u_r.as_slice().unwrap(),
            self.u_h.as_slice().unwrap(),
            self.b_z.as_slice().unwrap(),
            self.b_r.as_slice().unwrap(),
            self.b_h.as_slice().unwrap(),
        ]
    }

    pub fn params_mut(&mut self) -> [&mut [f64]; 9] {
        [
            self.w_z.as_slice_mut().unwrap(),
            self.w_r.as_slice_mut().unwrap(),
            self.w_h.as_slice_mut().unwrap(),
            self.u_z.as_slice_mut().unwrap(),
            self.u_r.as_slice_mut().unwrap(),
            self.u_h.as_slice_mut().unwrap(),
            self.b_z.as_slice_mut().unwrap(),
            self.b_r.as_slice_mut().unwrap(),
            self.b_h.as_slice_mut().unwrap(),
        ]
    }

    pub fn check_shapes(&self) -> Result<(), SrpError> {
        let (h, d) = (self.hidden_size(), self.input_size());
        let ok = [&self.w_z, &self.w_r, &self.w_h]
            .iter()
            .all(|w| w.dim() == (h, d))
            && [&self.u_z, &self.u_r, &self.u_h]
                .iter()
                .all(|u| u.dim() == (h, h))
            && [&self.b_r, &self.b_h].iter().all(|b| b.len() == h);
        if ok {
            Ok(())
        } else {
            Err(SrpError::ShapeMismatch(format!(
                "GRU cell parameters inconsistent with hidden {h}, input {d}"
            )))
        }
    }

    pub fn step(&self, x: ArrayView1<f64>, h_prev: ArrayView1<f64>) -> Result<Array1<f64>, SrpError> {
        if x.len() != self.input_size() || h_prev.len() != self.hidden_size() {
            return Err(SrpError::ShapeMismatch(format!(
                "step got input {} / state {}, cell expects {} / {}",
                x.len(),
                h_prev.len(),
                self.input_size(),
                self.hidden_size()
            )));
        }
        let cache = self.step_cached(x, h_prev);
        Ok(Self::output(&cache))
    }

    pub(crate) fn step_cached(&self, x: ArrayView1<f64>, h_prev: ArrayView1<f64>) -> StepCache {
        let z = (self.w_z.dot(&x) + self.u_z.dot(&h_prev) + &self.b_z).mapv(sigmoid);
        let r = (self.w_r.dot(&x) + self.u_r.dot(&h_prev) + &self.b_r).mapv(sigmoid);
        let rh = &r * &h_prev;
        let g = (self.w_h.dot(&x) + self.u_h.dot(&rh) + &self.b_h).mapv(f64::tanh);
        StepCache {
            x: x.to_owned(),
            h_prev: h_prev.to_owned(),
            z,
            r,
            g,
        }
    }

    pub(crate) fn output(c: &StepCache) -> Array1<f64> {
        &c.z * &c.h_prev + &(1.0 - &c.z) * &c.g
    }

    /// Accumulates parameter gradients into `grad` given `dh` (gradient of the
    /// step output); returns gradients w.r.t. the input and the previous state.
    pub(crate) fn backward(
        &self,
        c: &StepCache,
        dh: &Array1<f64>,
        grad: &mut GruCell,
    ) -> (Array1<f64>, Array1<f64>) {
        let dz = dh * &(&c.h_prev - &c.g);
        let dg = dh * &(1.0 - &c.z);
        let mut dh_prev = dh * &c.z;

        let da_g = &dg * &(1.0 - &c.g * &c.g);
        let rh = &c.r * &c.h_prev;
        grad.w_h += &outer(&da_g, &c.x);
        grad.u_h += &outer(&da_g, &rh);
        grad.b_h += &da_g;
        let mut dx = self.w_h.t().dot(&da_g);
        let drh = self.u_h.t().dot(&da_g);
        let dr = &drh * &c.h_prev;
        dh_prev += &(&drh * &c.r);

        let da_z = &dz * &(&c.z * &(1.0 - &c.z));
        grad.w_z += &outer(&da_z, &c.x);
        grad.u_z += &outer(&da_z, &c.h_prev);
        grad.b_z += &da_z;
        dx += &self.w_z.t().dot(&da_z);
        dh_prev += &self.u_z.t().dot(&da_z);

        let da_r = &dr * &(&c.r * &(1.0 - &c.r));
        grad.w_r += &outer(&da_r, &c.x);
        grad.u_r += &outer(&da_r, &c.h_prev);
        grad.b_r += &da_r;
        dx += &self.w_r.t().dot(&da_r);
        dh_prev += &self.u_r.t().dot(&da_r);

        (dx, dh_prev)
    }
}

pub(crate) fn outer(a: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    Array2::from_shape_fn((a.len(), b.len()), |(i, j)| a[i] * b[j])
}
