use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::gru::{outer, GruCell, StepCache};
use super::soft_dtw::{loss_and_grad, LossKind};
use crate::error::SrpError;
use crate::types::VehicleState;

/// Speed magnitude, acceleration magnitude, heading sign, segment progress, TTI.
pub const FEATURES: usize = 5;

pub fn raw_features(s: &VehicleState) -> [f64; FEATURES] {
    [
        s.speed.norm(),
        s.acceleration.norm(),
        s.heading_sign as f64,
        s.segment_progress,
        s.tti,
    ]
}

/// Per-feature affine map of `[lo, hi]` onto `[-1, 1]`, clamped.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    pub lo: [f64; FEATURES],
    pub hi: [f64; FEATURES],
}

impl Normalizer {
    pub fn for_scenario(max_speed: f64, max_accel: f64) -> Self {
        Self {
            lo: [0.0, 0.0, -1.0, 0.0, 1.0],
            hi: [max_speed, max_accel, 1.0, 1.0, 3.0],
        }
    }

    pub fn apply(&self, raw: [f64; FEATURES]) -> [f64; FEATURES] {
        let mut out = [0.0; FEATURES];
        for k in 0..FEATURES {
            let span = self.hi[k] - self.lo[k];
            out[k] = if span > 0.0 {
                (2.0 * (raw[k] - self.lo[k]) / span - 1.0).clamp(-1.0, 1.0)
            } else {
                0.0
            };
        }
        out
    }

    /// Normalised feature rows for a run of states.
    pub fn sequence<'a>(&self, states: impl IntoIterator<Item = &'a VehicleState>) -> Array2<f64> {
        let rows: Vec<[f64; FEATURES]> = states
            .into_iter()
            .map(|s| self.apply(raw_features(s)))
            .collect();
        Array2::from_shape_fn((rows.len(), FEATURES), |(i, k)| rows[i][k])
    }
}

/// Encoder-decoder forecaster. The decoder starts from the encoder's final
/// state, takes the last observed input as its first input, and feeds each
/// output back as the next input.
#[derive(Debug, Clone, PartialEq)]
pub struct SrpModel {
    pub encoder: GruCell,
    pub decoder: GruCell,
    /// Output projection, `D x H`.
    pub proj_w: Array2<f64>,
    pub proj_b: Array1<f64>,
    pub seq_len: usize,
    pub horizon: usize,
    pub normalizer: Normalizer,
}

/// Gradient of a scalar objective with respect to every model parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrad {
    pub encoder: GruCell,
    pub decoder: GruCell,
    pub proj_w: Array2<f64>,
    pub proj_b: Array1<f64>,
}

struct Trace {
    enc: Vec<StepCache>,
    dec: Vec<StepCache>,
    /// Pre-activation outputs.
    pre: Vec<Array1<f64>>,
    outputs: Array2<f64>,
}

impl SrpModel {
    pub fn new(
        hidden: usize,
        seq_len: usize,
        horizon: usize,
        normalizer: Normalizer,
        seed: u64,
    ) -> Result<Self, SrpError> {
        if seq_len < 2 || horizon == 0 || hidden == 0 {
            return Err(SrpError::ShapeMismatch(format!(
                "need seq_len >= 2, horizon >= 1, hidden >= 1 (got {seq_len}, {horizon}, {hidden})"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = GruCell::random(hidden, FEATURES, &mut rng);
        let decoder = GruCell::random(hidden, FEATURES, &mut rng);
        let k = 1.0 / (hidden as f64).sqrt();
        let proj_w = Array2::from_shape_fn((FEATURES, hidden), |_| {
            rand::Rng::random_range(&mut rng, -k..k)
        });
        // a positive bias keeps the output units out of the dead ReLU region at start
        let proj_b = Array1::from_elem(FEATURES, 0.1);
        Ok(Self {
            encoder,
            decoder,
            proj_w,
            proj_b,
            seq_len,
            horizon,
            normalizer,
        })
    }

    /// All-zero parameters.
    pub fn zeros(hidden: usize, seq_len: usize, horizon: usize, normalizer: Normalizer) -> Self {
        Self {
            encoder: GruCell::zeros(hidden, FEATURES),
            decoder: GruCell::zeros(hidden, FEATURES),
            proj_w: Array2::zeros((FEATURES, hidden)),
            proj_b: Array1::zeros(FEATURES),
            seq_len,
            horizon,
            normalizer,
        }
    }

    pub fn hidden_size(&self) -> usize {
        self.encoder.hidden_size()
    }

    pub fn check_shapes(&self) -> Result<(), SrpError> {
        self.encoder.check_shapes()?;
        self.decoder.check_shapes()?;
        let h = self.hidden_size();
        if self.decoder.hidden_size() != h
            || self.encoder.input_size() != FEATURES
            || self.decoder.input_size() != FEATURES
            || self.proj_w.dim() != (FEATURES, h)
            || self.proj_b.len() != FEATURES
        {
            return Err(SrpError::ShapeMismatch(
                "encoder, decoder and projection disagree on sizes".into(),
            ));
        }
        if self.seq_len < 2 || self.horizon == 0 {
            return Err(SrpError::ShapeMismatch("seq_len must be >= 2 and horizon >= 1".into()));
        }
        Ok(())
    }

    fn check_inputs(&self, inputs: ArrayView2<f64>) -> Result<(), SrpError> {
        if inputs.nrows() == 0 {
            return Err(SrpError::EmptySequence);
        }
        if inputs.ncols() != FEATURES {
            return Err(SrpError::ShapeMismatch(format!(
                "expected {FEATURES} features per step, got {}",
                inputs.ncols()
            )));
        }
        Ok(())
    }

    /// Final hidden state after folding the encoder over `inputs` from zero.
    pub fn encode(&self, inputs: ArrayView2<f64>) -> Result<Array1<f64>, SrpError> {
        self.check_inputs(inputs)?;
        let mut h = Array1::zeros(self.hidden_size());
        for x in inputs.rows() {
            h = self.encoder.step(x, h.view())?;
        }
        Ok(h)
    }

    /// `horizon` outputs, one row each.
    pub fn decode(
        &self,
        state: ArrayView1<f64>,
        first_input: ArrayView1<f64>,
        horizon: usize,
    ) -> Result<Array2<f64>, SrpError> {
        if state.len() != self.hidden_size() || first_input.len() != FEATURES {
            return Err(SrpError::ShapeMismatch("decoder state or input has wrong size".into()));
        }
        let mut out = Array2::zeros((horizon, FEATURES));
        let mut s = state.to_owned();
        let mut x = first_input.to_owned();
        for l in 0..horizon {
            s = self.decoder.step(x.view(), s.view())?;
            let o = (self.proj_w.dot(&s) + &self.proj_b).mapv(|v| v.max(0.0));
            out.row_mut(l).assign(&o);
            x = o;
        }
        Ok(out)
    }

    /// Encodes `inputs` and decodes `self.horizon` steps.
    pub fn forecast(&self, inputs: ArrayView2<f64>) -> Result<Array2<f64>, SrpError> {
        let h = self.encode(inputs)?;
        self.decode(h.view(), inputs.row(inputs.nrows() - 1), self.horizon)
    }

    fn forward_trace(&self, inputs: ArrayView2<f64>) -> Trace {
        let mut h = Array1::zeros(self.hidden_size());
        let mut enc = Vec::with_capacity(inputs.nrows());
        for x in inputs.rows() {
            let c = self.encoder.step_cached(x, h.view());
            h = GruCell::output(&c);
            enc.push(c);
        }
        let mut dec = Vec::with_capacity(self.horizon);
        let mut pre = Vec::with_capacity(self.horizon);
        let mut outputs = Array2::zeros((self.horizon, FEATURES));
        let mut x = inputs.row(inputs.nrows() - 1).to_owned();
        for l in 0..self.horizon {
            let c = self.decoder.step_cached(x.view(), h.view());
            h = GruCell::output(&c);
            let a = self.proj_w.dot(&h) + &self.proj_b;
            let o = a.mapv(|v| v.max(0.0));
            outputs.row_mut(l).assign(&o);
            x = o;
            dec.push(c);
            pre.push(a);
        }
        Trace {
            enc,
            dec,
            pre,
            outputs,
        }
    }

    /// Loss of the forecast against `target` and the parameter gradient.
    pub fn loss_and_grad(
        &self,
        inputs: ArrayView2<f64>,
        target: ArrayView2<f64>,
        kind: LossKind,
        gamma: f64,
    ) -> Result<(f64, ModelGrad), SrpError> {
        self.check_inputs(inputs)?;
        let trace = self.forward_trace(inputs);
        let (loss, d_out) = loss_and_grad(kind, trace.outputs.view(), target, gamma)?;
        let mut grad = self.zero_grad();
        let hsz = self.hidden_size();
        let mut ds = Array1::<f64>::zeros(hsz);
        // gradient arriving at output l through its use as decoder input l+1
        let mut d_fed = Array1::<f64>::zeros(FEATURES);
        for l in (0..self.horizon).rev() {
            let d_o = &d_out.row(l) + &d_fed;
            let d_a = Array1::from_shape_fn(FEATURES, |k| {
                if trace.pre[l][k] > 0.0 {
                    d_o[k]
                } else {
                    0.0
                }
            });
            let s_l = GruCell::output(&trace.dec[l]);
            grad.proj_w += &outer(&d_a, &s_l);
            grad.proj_b += &d_a;
            ds += &self.proj_w.t().dot(&d_a);
            let (dx, dprev) = self.decoder.backward(&trace.dec[l], &ds, &mut grad.decoder);
            ds = dprev;
            d_fed = dx;
        }
        // the first decoder input is observed data: its gradient stops here
        let mut dh = ds;
        for c in trace.enc.iter().rev() {
            let (_, dprev) = self.encoder.backward(c, &dh, &mut grad.encoder);
            dh = dprev;
        }
        Ok((loss, grad))
    }

    pub fn zero_grad(&self) -> ModelGrad {
        let h = self.hidden_size();
        ModelGrad {
            encoder: GruCell::zeros(h, FEATURES),
            decoder: GruCell::zeros(h, FEATURES),
            proj_w: Array2::zeros((FEATURES, h)),
            proj_b: Array1::zeros(FEATURES),
        }
    }

    /// Flattened parameters in checkpoint order.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for p in self.encoder.params().into_iter().chain(self.decoder.params()) {
            out.extend_from_slice(p);
        }
        out.extend(self.proj_w.iter());
        out.extend(self.proj_b.iter());
        out
    }

    pub fn set_flat_params(&mut self, values: &[f64]) -> Result<(), SrpError> {
        let mut slots: Vec<&mut [f64]> = Vec::new();
        slots.extend(self.encoder.params_mut());
        slots.extend(self.decoder.params_mut());
        slots.push(self.proj_w.as_slice_mut().unwrap());
        slots.push(self.proj_b.as_slice_mut().unwrap());
        let total: usize = slots.iter().map(|s| s.len()).sum();
        if total != values.len() {
            return Err(SrpError::ShapeMismatch(format!(
                "expected {total} parameters, got {}",
                values.len()
            )));
        }
        let mut at = 0;
        for s in slots {
            s.copy_from_slice(&values[at..at + s.len()]);
            at += s.len();
        }
        Ok(())
    }

    /// `self -= lr * grad`.
    pub fn apply_grad(&mut self, grad: &ModelGrad, lr: f64) {
        let g = grad.flat();
        for (p, d) in self
            .encoder
            .params_mut()
            .into_iter()
            .chain(self.decoder.params_mut())
            .flat_map(|s| s.iter_mut())
            .chain(self.proj_w.iter_mut())
            .chain(self.proj_b.iter_mut())
            .zip(g)
        {
            *p -= lr * d;
        }
    }
}

impl ModelGrad {
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for p in self.encoder.params().into_iter().chain(self.decoder.params()) {
            out.extend_from_slice(p);
        }
        out.extend(self.proj_w.iter());
        out.extend(self.proj_b.iter());
        out
    }

    pub fn add_scaled(&mut self, other: &ModelGrad, k: f64) {
        for (a, b) in self
            .encoder
            .params_mut()
            .into_iter()
            .zip(other.encoder.params())
            .chain(self.decoder.params_mut().into_iter().zip(other.decoder.params()))
        {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += k * y);
        }
        self.proj_w.scaled_add(k, &other.proj_w);
        self.proj_b.scaled_add(k, &other.proj_b);
    }
}
