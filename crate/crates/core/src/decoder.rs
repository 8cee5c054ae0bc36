//! Recurrent ray color decoder: stacked LSTM over the feature sequence,
//! followed by an affine → ReLU → affine → sigmoid head on the last hidden state.
//!
//! All parameters live in one flat vector. Per layer `l`:
//! `W (4h × in_l)`, `U (4h × h)`, `b_ih (4h)`, `b_hh (4h)`, gate blocks ordered
//! i, f, g, o. Then the head: `W1 (m × h)`, `b1 (m)`, `W2 (3 × m)`, `b2 (3)`.
//!
//! The batched path processes `B` rays at once; sequences are stacked time-major,
//! row `t * B + b` holding step `t` of ray `b`.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, ArrayView2, ArrayViewMut2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridenc::SH_DIM;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecoderConfig {
    pub hidden_size: usize,
    pub num_layers: usize,
    /// Point feature width plus the 16 direction coefficients.
    pub input_dim: usize,
    pub mlp_hidden: usize,
}

impl DecoderConfig {
    /// Head width defaults to twice the hidden size.
    pub fn new(hidden_size: usize, num_layers: usize, feature_dim: usize) -> Self {
        Self {
            hidden_size,
            num_layers,
            input_dim: feature_dim + SH_DIM,
            mlp_hidden: 2 * hidden_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_size == 0 || self.num_layers == 0 || self.mlp_hidden == 0 {
            return Err(Error::Config("decoder sizes must be >= 1".into()));
        }
        if self.input_dim <= SH_DIM {
            return Err(Error::Config(format!(
                "decoder input_dim {} leaves no room for point features",
                self.input_dim
            )));
        }
        Ok(())
    }

    pub fn feature_dim(&self) -> usize {
        self.input_dim - SH_DIM
    }

    /// `sum_l 4h (in_l + h + 2) + (h m + m) + (3 m + 3)`.
    pub fn parameter_count(&self) -> usize {
        let h = self.hidden_size;
        let m = self.mlp_hidden;
        (0..self.num_layers)
            .map(|l| {
                let input = if l == 0 { self.input_dim } else { h };
                4 * h * (input + h + 2)
            })
            .sum::<usize>()
            + h * m
            + m
            + 3 * m
            + 3
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct LayerLayout {
    input: usize,
    w: usize,
    u: usize,
    b_ih: usize,
    b_hh: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Layout {
    layers: Vec<LayerLayout>,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    total: usize,
}

impl Layout {
    fn new(cfg: &DecoderConfig) -> Self {
        let h = cfg.hidden_size;
        let mut off = 0;
        let mut layers = Vec::with_capacity(cfg.num_layers);
        for l in 0..cfg.num_layers {
            let input = if l == 0 { cfg.input_dim } else { h };
            let w = off;
            let u = w + 4 * h * input;
            let b_ih = u + 4 * h * h;
            let b_hh = b_ih + 4 * h;
            off = b_hh + 4 * h;
            layers.push(LayerLayout { input, w, u, b_ih, b_hh });
        }
        let m = cfg.mlp_hidden;
        let w1 = off;
        let b1 = w1 + m * h;
        let w2 = b1 + m;
        let b2 = w2 + 3 * m;
        Self {
            layers,
            w1,
            b1,
            w2,
            b2,
            total: b2 + 3,
        }
    }
}

/// Named parameter blocks, used by gradient checks and checkpoint manifests.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamBlock {
    pub name: String,
    pub range: std::ops::Range<usize>,
}

/// Per-layer hidden and cell state for step-by-step evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderState<T> {
    pub hidden: Vec<Vec<T>>,
    pub cell: Vec<Vec<T>>,
}

impl<T: Scalar> DecoderState<T> {
    pub fn zeros(cfg: &DecoderConfig) -> Self {
        Self {
            hidden: vec![vec![T::zero(); cfg.hidden_size]; cfg.num_layers],
            cell: vec![vec![T::zero(); cfg.hidden_size]; cfg.num_layers],
        }
    }
}

#[derive(Debug, Clone)]
pub struct RayColorDecoder<T> {
    config: DecoderConfig,
    layout: Layout,
    params: Vec<T>,
}

/// Activations kept for backpropagation through time.
#[derive(Debug, Clone)]
pub struct DecoderCache<T> {
    steps: usize,
    batch: usize,
    features: Array2<T>,
    dirs: Array2<T>,
    layers: Vec<LayerCache<T>>,
    head_hidden: Array2<T>,
}

#[derive(Debug, Clone)]
struct LayerCache<T> {
    /// Activated gates `[i | f | g | o]`, `(K B) × 4h`.
    gates: Array2<T>,
    cell: Array2<T>,
    tanh_cell: Array2<T>,
    hidden: Array2<T>,
}

/// Result of a batched forward pass.
#[derive(Debug, Clone)]
pub struct DecoderForward<T> {
    /// `B × 3` colors in `(0, 1)`.
    pub rgb: Array2<T>,
    pub cache: Option<DecoderCache<T>>,
}

impl<T: Scalar> RayColorDecoder<T> {
    pub fn zeros(config: DecoderConfig) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let params = vec![T::zero(); layout.total];
        Ok(Self { config, layout, params })
    }

    /// LSTM weights uniform in `±1/sqrt(h)`, head weights uniform in
    /// `±1/sqrt(fan_in)`, biases zero except the input-side forget bias at 1.
    pub fn new(config: DecoderConfig, seed: u64) -> Result<Self> {
        let mut dec = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = config.hidden_size;
        let k = 1.0 / (h as f64).sqrt();
        let mut fill = |slice: &mut [T], bound: f64| {
            for v in slice {
                *v = T::c(rng.gen_range(-bound..bound));
            }
        };
        for layer in dec.layout.layers.clone() {
            fill(&mut dec.params[layer.w..layer.b_ih], k);
            for v in &mut dec.params[layer.b_ih + h..layer.b_ih + 2 * h] {
                *v = T::one();
            }
        }
        let (w1, b1, w2, b2) = (dec.layout.w1, dec.layout.b1, dec.layout.w2, dec.layout.b2);
        fill(&mut dec.params[w1..b1], 1.0 / (h as f64).sqrt());
        fill(&mut dec.params[w2..b2], 1.0 / (config.mlp_hidden as f64).sqrt());
        Ok(dec)
    }

    pub fn config(&self) -> &DecoderConfig {
        &self.config
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn set_params(&mut self, values: Vec<T>) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(Error::shape(format!(
                "decoder expects {} parameters, got {}",
                self.params.len(),
                values.len()
            )));
        }
        self.params = values;
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        self.params.len()
    }

    pub fn blocks(&self) -> Vec<ParamBlock> {
        let mut out = Vec::new();
        let h = self.config.hidden_size;
        for (l, lay) in self.layout.layers.iter().enumerate() {
            out.push(ParamBlock {
                name: format!("lstm{l}.w_ih"),
                range: lay.w..lay.u,
            });
            out.push(ParamBlock {
                name: format!("lstm{l}.w_hh"),
                range: lay.u..lay.b_ih,
            });
            out.push(ParamBlock {
                name: format!("lstm{l}.b_ih"),
                range: lay.b_ih..lay.b_ih + 4 * h,
            });
            out.push(ParamBlock {
                name: format!("lstm{l}.b_hh"),
                range: lay.b_hh..lay.b_hh + 4 * h,
            });
        }
        let lay = &self.layout;
        out.push(ParamBlock { name: "head.w1".into(), range: lay.w1..lay.b1 });
        out.push(ParamBlock { name: "head.b1".into(), range: lay.b1..lay.w2 });
        out.push(ParamBlock { name: "head.w2".into(), range: lay.w2..lay.b2 });
        out.push(ParamBlock { name: "head.b2".into(), range: lay.b2..lay.total });
        out
    }

    fn mat(&self, off: usize, rows: usize, cols: usize) -> ArrayView2<'_, T> {
        ArrayView2::from_shape((rows, cols), &self.params[off..off + rows * cols]).expect("layout")
    }

    fn combined_bias(&self, layer: usize) -> Vec<T> {
        let lay = &self.layout.layers[layer];
        let n = 4 * self.config.hidden_size;
        (0..n)
            .map(|i| self.params[lay.b_ih + i] + self.params[lay.b_hh + i])
            .collect()
    }

    /// One LSTM cell step on plain vectors, gates ordered i, f, g, o.
    pub fn lstm_cell_forward(&self, layer: usize, x: &[T], h_prev: &[T], c_prev: &[T]) -> (Vec<T>, Vec<T>) {
        let lay = &self.layout.layers[layer];
        let h = self.config.hidden_size;
        assert_eq!(x.len(), lay.input, "cell input width");
        let w = self.mat(lay.w, 4 * h, lay.input);
        let u = self.mat(lay.u, 4 * h, h);
        let bias = self.combined_bias(layer);
        let mut pre = vec![T::zero(); 4 * h];
        for (r, p) in pre.iter_mut().enumerate() {
            let mut acc = bias[r];
            for (c, &xv) in x.iter().enumerate() {
                acc += w[[r, c]] * xv;
            }
            for (c, &hv) in h_prev.iter().enumerate() {
                acc += u[[r, c]] * hv;
            }
            *p = acc;
        }
        let mut h_out = vec![T::zero(); h];
        let mut c_out = vec![T::zero(); h];
        for j in 0..h {
            let i = pre[j].sigmoid();
            let f = pre[h + j].sigmoid();
            let g = pre[2 * h + j].tanh();
            let o = pre[3 * h + j].sigmoid();
            c_out[j] = f * c_prev[j] + i * g;
            h_out[j] = o * c_out[j].tanh();
        }
        (h_out, c_out)
    }

    /// Advances every layer by one step on input `x` (point feature ++ direction).
    pub fn step(&self, state: &mut DecoderState<T>, x: &[T]) {
        let mut input = x.to_vec();
        for l in 0..self.config.num_layers {
            let (h, c) = self.lstm_cell_forward(l, &input, &state.hidden[l], &state.cell[l]);
            state.hidden[l] = h.clone();
            state.cell[l] = c;
            input = h;
        }
    }

    /// The output head applied to a top-layer hidden state.
    pub fn head(&self, hidden: &[T]) -> [T; 3] {
        let h = self.config.hidden_size;
        let m = self.config.mlp_hidden;
        let w1 = self.mat(self.layout.w1, m, h);
        let w2 = self.mat(self.layout.w2, 3, m);
        let a1: Vec<T> = (0..m)
            .map(|r| {
                let z = self.params[self.layout.b1 + r]
                    + (0..h).map(|c| w1[[r, c]] * hidden[c]).sum::<T>();
                z.max(T::zero())
            })
            .collect();
        let mut rgb = [T::zero(); 3];
        for (r, out) in rgb.iter_mut().enumerate() {
            let z = self.params[self.layout.b2 + r] + (0..m).map(|c| w2[[r, c]] * a1[c]).sum::<T>();
            *out = z.sigmoid();
        }
        rgb
    }

    /// Decodes one ray from its `K × N` feature sequence and encoded direction.
    pub fn decode_ray(&self, feature_seq: ArrayView2<'_, T>, dir_enc: &[T; SH_DIM]) -> Result<[T; 3]> {
        if feature_seq.iter().any(|v| !v.is_finite()) || dir_enc.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("decoder input contains non-finite values"));
        }
        let dirs = ArrayView2::from_shape((1, SH_DIM), &dir_enc[..]).expect("shape");
        let fwd = self.forward(feature_seq.to_owned(), dirs.to_owned(), feature_seq.nrows(), false)?;
        Ok([fwd.rgb[[0, 0]], fwd.rgb[[0, 1]], fwd.rgb[[0, 2]]])
    }

    /// Batched forward pass over `B = dirs.nrows()` rays of `steps` samples each.
    /// `features` is `(steps * B) × N`, time-major.
    pub fn forward(&self, features: Array2<T>, dirs: Array2<T>, steps: usize, keep_cache: bool) -> Result<DecoderForward<T>> {
        let cfg = &self.config;
        let (h, n) = (cfg.hidden_size, cfg.feature_dim());
        let batch = dirs.nrows();
        if steps == 0 {
            return Err(Error::domain("feature sequence must have at least one step"));
        }
        if features.dim() != (steps * batch, n) || dirs.ncols() != SH_DIM {
            return Err(Error::shape(format!(
                "decoder expects features ({}, {n}) and dirs ({batch}, {SH_DIM}), got {:?} and {:?}",
                steps * batch,
                features.dim(),
                dirs.dim()
            )));
        }
        let rows = steps * batch;
        let mut layers = Vec::with_capacity(cfg.num_layers);
        for l in 0..cfg.num_layers {
            let lay = self.layout.layers[l];
            let w = self.mat(lay.w, 4 * h, lay.input);
            let mut pre = Array2::<T>::zeros((rows, 4 * h));
            if l == 0 {
                let w_feat = w.slice(s![.., ..n]);
                let w_dir = w.slice(s![.., n..]);
                general_mat_mul(T::one(), &features, &w_feat.t(), T::zero(), &mut pre);
                let dir_proj = dirs.dot(&w_dir.t());
                for t in 0..steps {
                    let mut block = pre.slice_mut(s![t * batch..(t + 1) * batch, ..]);
                    block += &dir_proj;
                }
            } else {
                let below: &LayerCache<T> = &layers[l - 1];
                general_mat_mul(T::one(), &below.hidden, &w.t(), T::zero(), &mut pre);
            }
            let bias = self.combined_bias(l);
            for mut row in pre.rows_mut() {
                for (v, b) in row.iter_mut().zip(&bias) {
                    *v += *b;
                }
            }
            layers.push(self.run_layer(l, pre, steps, batch));
        }
        let top = &layers[cfg.num_layers - 1].hidden;
        let last = top.slice(s![(steps - 1) * batch.., ..]);
        let (head_hidden, rgb) = self.head_batch(last);
        let cache = keep_cache.then(|| DecoderCache {
            steps,
            batch,
            features,
            dirs,
            layers,
            head_hidden,
        });
        Ok(DecoderForward { rgb, cache })
    }

    /// Runs the recurrence of one layer given its input pre-activations
    /// (input projection plus biases), overwriting them with activated gates.
    fn run_layer(&self, layer: usize, mut gates: Array2<T>, steps: usize, batch: usize) -> LayerCache<T> {
        let h = self.config.hidden_size;
        let lay = self.layout.layers[layer];
        let u = self.mat(lay.u, 4 * h, h);
        let rows = steps * batch;
        let mut cell = Array2::<T>::zeros((rows, h));
        let mut tanh_cell = Array2::<T>::zeros((rows, h));
        let mut hidden = Array2::<T>::zeros((rows, h));
        for t in 0..steps {
            let r0 = t * batch;
            if t > 0 {
                let h_prev = hidden.slice(s![r0 - batch..r0, ..]);
                let mut block = gates.slice_mut(s![r0..r0 + batch, ..]);
                general_mat_mul(T::one(), &h_prev, &u.t(), T::one(), &mut block);
            }
            for b in 0..batch {
                let r = r0 + b;
                let g_row = gates.row_mut(r).into_slice().expect("contiguous");
                for v in &mut g_row[..2 * h] {
                    *v = v.sigmoid();
                }
                for v in &mut g_row[2 * h..3 * h] {
                    *v = v.tanh();
                }
                for v in &mut g_row[3 * h..] {
                    *v = v.sigmoid();
                }
                for j in 0..h {
                    let c_prev = if t > 0 { cell[[r - batch, j]] } else { T::zero() };
                    let c = g_row[h + j] * c_prev + g_row[j] * g_row[2 * h + j];
                    let tc = c.tanh();
                    cell[[r, j]] = c;
                    tanh_cell[[r, j]] = tc;
                    hidden[[r, j]] = g_row[3 * h + j] * tc;
                }
            }
        }
        LayerCache {
            gates,
            cell,
            tanh_cell,
            hidden,
        }
    }

    /// Returns the post-ReLU head activations and the sigmoid colors.
    fn head_batch(&self, top: ArrayView2<'_, T>) -> (Array2<T>, Array2<T>) {
        let (h, m) = (self.config.hidden_size, self.config.mlp_hidden);
        let w1 = self.mat(self.layout.w1, m, h);
        let w2 = self.mat(self.layout.w2, 3, m);
        let mut a1 = top.dot(&w1.t());
        for mut row in a1.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v + self.params[self.layout.b1 + j]).max(T::zero());
            }
        }
        let mut rgb = a1.dot(&w2.t());
        for mut row in rgb.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v + self.params[self.layout.b2 + j]).sigmoid();
            }
        }
        (a1, rgb)
    }

    /// Backpropagation through time. Accumulates parameter gradients into
    /// `grads` (same layout as the parameters) and returns `∂L/∂features`,
    /// `(steps * B) × N`. `upstream` is `∂L/∂rgb`, `B × 3`.
    pub fn backward(&self, fwd: &DecoderForward<T>, upstream: ArrayView2<'_, T>, grads: &mut [T]) -> Result<Array2<T>> {
        let cache = fwd
            .cache
            .as_ref()
            .ok_or_else(|| Error::Contract("backward needs a forward pass run with keep_cache".into()))?;
        if grads.len() != self.params.len() {
            return Err(Error::shape("gradient buffer does not match decoder parameters"));
        }
        let cfg = &self.config;
        let (h, m, n) = (cfg.hidden_size, cfg.mlp_hidden, cfg.feature_dim());
        let (steps, batch) = (cache.steps, cache.batch);
        if upstream.dim() != (batch, 3) {
            return Err(Error::shape(format!("upstream must be ({batch}, 3), got {:?}", upstream.dim())));
        }
        let rows = steps * batch;
        let lay = self.layout.clone();

        // head
        let mut dz2 = upstream.to_owned();
        for (d, &y) in dz2.iter_mut().zip(fwd.rgb.iter()) {
            *d *= y * (T::one() - y);
        }
        {
            let mut dw2 = grad_mat(grads, lay.w2, 3, m);
            general_mat_mul(T::one(), &dz2.t(), &cache.head_hidden, T::one(), &mut dw2);
        }
        add_col_sums(&dz2, &mut grads[lay.b2..lay.b2 + 3]);
        let mut dz1 = dz2.dot(&self.mat(lay.w2, 3, m));
        for (d, &a) in dz1.iter_mut().zip(cache.head_hidden.iter()) {
            if a <= T::zero() {
                *d = T::zero();
            }
        }
        let top = &cache.layers[cfg.num_layers - 1].hidden;
        let last = top.slice(s![(steps - 1) * batch.., ..]);
        {
            let mut dw1 = grad_mat(grads, lay.w1, m, h);
            general_mat_mul(T::one(), &dz1.t(), &last, T::one(), &mut dw1);
        }
        add_col_sums(&dz1, &mut grads[lay.b1..lay.b1 + m]);
        let dh_last = dz1.dot(&self.mat(lay.w1, m, h));

        // stacked LSTM, top layer first; `dh_ext` is the gradient arriving at each
        // step's hidden output from above
        let mut dh_ext = Array2::<T>::zeros((rows, h));
        dh_ext.slice_mut(s![(steps - 1) * batch.., ..]).assign(&dh_last);
        let mut d_features = Array2::<T>::zeros((0, 0));
        for l in (0..cfg.num_layers).rev() {
            let ll = lay.layers[l];
            let lc = &cache.layers[l];
            let u = self.mat(ll.u, 4 * h, h);
            let mut dg = Array2::<T>::zeros((rows, 4 * h));
            let mut dh_next = Array2::<T>::zeros((batch, h));
            let mut dc_next = Array2::<T>::zeros((batch, h));
            for t in (0..steps).rev() {
                let r0 = t * batch;
                for b in 0..batch {
                    let r = r0 + b;
                    let g = lc.gates.row(r);
                    let g = g.as_slice().expect("contiguous");
                    let dg_row = dg.row_mut(r).into_slice().expect("contiguous");
                    for j in 0..h {
                        let (i, f, gg, o) = (g[j], g[h + j], g[2 * h + j], g[3 * h + j]);
                        let tc = lc.tanh_cell[[r, j]];
                        let c_prev = if t > 0 { lc.cell[[r - batch, j]] } else { T::zero() };
                        let dh = dh_ext[[r, j]] + dh_next[[b, j]];
                        let dc = dc_next[[b, j]] + dh * o * (T::one() - tc * tc);
                        dc_next[[b, j]] = dc * f;
                        dg_row[j] = dc * gg * i * (T::one() - i);
                        dg_row[h + j] = dc * c_prev * f * (T::one() - f);
                        dg_row[2 * h + j] = dc * i * (T::one() - gg * gg);
                        dg_row[3 * h + j] = dh * tc * o * (T::one() - o);
                    }
                }
                if t > 0 {
                    let block = dg.slice(s![r0..r0 + batch, ..]);
                    general_mat_mul(T::one(), &block, &u, T::zero(), &mut dh_next);
                }
            }
            if steps > 1 {
                let mut du = grad_mat(grads, ll.u, 4 * h, h);
                let later = dg.slice(s![batch.., ..]);
                let earlier = lc.hidden.slice(s![..rows - batch, ..]);
                general_mat_mul(T::one(), &later.t(), &earlier, T::one(), &mut du);
            }
            add_col_sums(&dg, &mut grads[ll.b_ih..ll.b_ih + 4 * h]);
            add_col_sums(&dg, &mut grads[ll.b_hh..ll.b_hh + 4 * h]);
            let w = self.mat(ll.w, 4 * h, ll.input);
            if l == 0 {
                let mut gsum = Array2::<T>::zeros((batch, 4 * h));
                for t in 0..steps {
                    gsum += &dg.slice(s![t * batch..(t + 1) * batch, ..]);
                }
                let mut dw = grad_mat(grads, ll.w, 4 * h, ll.input);
                {
                    let mut dw_feat = dw.slice_mut(s![.., ..n]);
                    general_mat_mul(T::one(), &dg.t(), &cache.features, T::one(), &mut dw_feat);
                }
                let mut dw_dir = dw.slice_mut(s![.., n..]);
                general_mat_mul(T::one(), &gsum.t(), &cache.dirs, T::one(), &mut dw_dir);
                d_features = dg.dot(&w.slice(s![.., ..n]));
            } else {
                let below = &cache.layers[l - 1].hidden;
                let mut dw = grad_mat(grads, ll.w, 4 * h, ll.input);
                general_mat_mul(T::one(), &dg.t(), below, T::one(), &mut dw);
                dh_ext = dg.dot(&w);
            }
        }
        Ok(d_features)
    }
}

fn grad_mat<T: Scalar>(grads: &mut [T], off: usize, rows: usize, cols: usize) -> ArrayViewMut2<'_, T> {
    ArrayViewMut2::from_shape((rows, cols), &mut grads[off..off + rows * cols]).expect("layout")
}

fn add_col_sums<T: Scalar>(m: &Array2<T>, out: &mut [T]) {
    let sums = m.sum_axis(Axis(0));
    for (o, s) in out.iter_mut().zip(sums.iter()) {
        *o += *s;
    }
}
