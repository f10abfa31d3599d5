//! Small tanh MLP with hand-written backpropagation, optional layer
//! normalization, and a forward-mode directional derivative (JVP).
//!
//! Flat parameter layout, in order: for each layer its weight matrix
//! (row-major, out x in) then its bias; then for each hidden layer the
//! layer-norm gain and bias; nothing else. Callers that need extra
//! parameters (e.g. the policy's log-std head) append them after this block.

use crate::error::{Error, Result};
use crate::linalg::Vector;
use crate::scalar::Scalar;
use rand::Rng;

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct MlpShape {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    pub layer_norm: bool,
}

impl MlpShape {
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::new();
        let mut prev = self.input_dim;
        for &h in &self.hidden {
            dims.push((prev, h));
            prev = h;
        }
        dims.push((prev, self.output_dim));
        dims
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        for (i, o) in self.layer_dims() {
            n += i * o + o;
        }
        if self.layer_norm {
            for &h in &self.hidden {
                n += 2 * h;
            }
        }
        n
    }
}

#[derive(Debug, Clone)]
pub struct Mlp<T> {
    pub shape: MlpShape,
    pub params: Vec<T>,
}

/// Per-layer activations saved by `forward_cached` for the backward pass.
pub struct ForwardCache<T> {
    // input to each layer
    inputs: Vec<Vector<T>>,
    // pre-LN linear output z, hidden layers only
    pre_ln: Vec<Vector<T>>,
    // normalized zhat and inv_std, hidden layers only (empty when LN off)
    zhat: Vec<Vector<T>>,
    inv_std: Vec<T>,
    // tanh outputs, hidden layers only
    activations: Vec<Vector<T>>,
    pub output: Vector<T>,
}

impl<T: Scalar> Mlp<T> {
    pub fn new(shape: MlpShape) -> Self {
        let n = shape.param_count();
        Self { shape, params: vec![T::zero(); n] }
    }

    /// Uniform Glorot-style init; layer-norm gains start at one.
    /// `final_scale` shrinks the output layer so the initial map is near zero.
    pub fn init<R: Rng + ?Sized>(shape: MlpShape, final_scale: f64, rng: &mut R) -> Self {
        let mut mlp = Self::new(shape);
        let dims = mlp.shape.layer_dims();
        let n_layers = dims.len();
        let mut off = 0;
        for (l, (fan_in, fan_out)) in dims.iter().enumerate() {
            let mut a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            if l == n_layers - 1 {
                a *= final_scale;
            }
            for _ in 0..(fan_in * fan_out) {
                mlp.params[off] = T::lit(rng.gen_range(-a..a));
                off += 1;
            }
            off += fan_out; // biases stay zero
        }
        if mlp.shape.layer_norm {
            for &h in &mlp.shape.hidden.clone() {
                for _ in 0..h {
                    mlp.params[off] = T::one();
                    off += 1;
                }
                off += h; // LN biases stay zero
            }
        }
        mlp
    }

    fn layer_offsets(&self) -> Vec<usize> {
        let mut offs = Vec::new();
        let mut off = 0;
        for (i, o) in self.shape.layer_dims() {
            offs.push(off);
            off += i * o + o;
        }
        offs.push(off); // start of LN block
        offs
    }

    fn ln_offset(&self, hidden_idx: usize) -> usize {
        let base = *self.layer_offsets().last().unwrap();
        let mut off = base;
        for &h in &self.shape.hidden[..hidden_idx] {
            off += 2 * h;
        }
        off
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn forward(&self, x: &[T]) -> Result<Vector<T>> {
        Ok(self.forward_cached(x)?.output)
    }

    pub fn forward_cached(&self, x: &[T]) -> Result<ForwardCache<T>> {
        if x.len() != self.shape.input_dim {
            return Err(Error::DimensionMismatch { expected: self.shape.input_dim, got: x.len() });
        }
        let dims = self.shape.layer_dims();
        let offs = self.layer_offsets();
        let n_hidden = self.shape.hidden.len();
        let mut cache = ForwardCache {
            inputs: Vec::with_capacity(dims.len()),
            pre_ln: Vec::with_capacity(n_hidden),
            zhat: Vec::with_capacity(n_hidden),
            inv_std: Vec::with_capacity(n_hidden),
            activations: Vec::with_capacity(n_hidden),
            output: Vec::new(),
        };
        let mut cur: Vector<T> = x.to_vec();
        for (l, &(fan_in, fan_out)) in dims.iter().enumerate() {
            cache.inputs.push(cur.clone());
            let w = &self.params[offs[l]..offs[l] + fan_in * fan_out];
            let b = &self.params[offs[l] + fan_in * fan_out..offs[l] + fan_in * fan_out + fan_out];
            let mut z = vec![T::zero(); fan_out];
            for r in 0..fan_out {
                let row = &w[r * fan_in..(r + 1) * fan_in];
                let mut acc = b[r];
                for c in 0..fan_in {
                    acc += row[c] * cur[c];
                }
                z[r] = acc;
            }
            let is_hidden = l < n_hidden;
            if !is_hidden {
                if !crate::linalg::all_finite(&z) {
                    return Err(Error::NonFinite("mlp output"));
                }
                cache.output = z;
                return Ok(cache);
            }
            cache.pre_ln.push(z.clone());
            let h = if self.shape.layer_norm {
                let hf = T::lit(fan_out as f64);
                let mean = z.iter().copied().sum::<T>() / hf;
                let var = z.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / hf;
                let inv_std = T::one() / (var + T::lit(LN_EPS)).sqrt();
                let zhat: Vector<T> = z.iter().map(|&v| (v - mean) * inv_std).collect();
                let ln_off = self.ln_offset(l);
                let gain = &self.params[ln_off..ln_off + fan_out];
                let lbias = &self.params[ln_off + fan_out..ln_off + 2 * fan_out];
                let h: Vector<T> =
                    (0..fan_out).map(|i| gain[i] * zhat[i] + lbias[i]).collect();
                cache.zhat.push(zhat);
                cache.inv_std.push(inv_std);
                h
            } else {
                z
            };
            let y: Vector<T> = h.iter().map(|&v| v.tanh()).collect();
            cache.activations.push(y.clone());
            cur = y;
        }
        unreachable!("output layer returns inside the loop");
    }

    /// Accumulate d(output . grad_out)/d(params) into `grad[..self.n_params()]`.
    pub fn backward(&self, cache: &ForwardCache<T>, grad_out: &[T], grad: &mut [T]) {
        let dims = self.shape.layer_dims();
        let offs = self.layer_offsets();
        let n_hidden = self.shape.hidden.len();
        let mut dz: Vector<T> = grad_out.to_vec();
        for l in (0..dims.len()).rev() {
            let (fan_in, fan_out) = dims[l];
            let is_hidden = l < n_hidden;
            if is_hidden {
                // dz currently holds dL/dy for this layer's tanh output
                let y = &cache.activations[l];
                let mut dh: Vector<T> = (0..fan_out)
                    .map(|i| dz[i] * (T::one() - y[i] * y[i]))
                    .collect();
                if self.shape.layer_norm {
                    let zhat = &cache.zhat[l];
                    let inv_std = cache.inv_std[l];
                    let ln_off = self.ln_offset(l);
                    let gain = &self.params[ln_off..ln_off + fan_out];
                    let hf = T::lit(fan_out as f64);
                    // grads for gain and LN bias
                    for i in 0..fan_out {
                        grad[ln_off + i] += dh[i] * zhat[i];
                        grad[ln_off + fan_out + i] += dh[i];
                    }
                    let dzhat: Vector<T> = (0..fan_out).map(|i| dh[i] * gain[i]).collect();
                    let mean_dzhat = dzhat.iter().copied().sum::<T>() / hf;
                    let mean_dzhat_zhat =
                        (0..fan_out).map(|i| dzhat[i] * zhat[i]).sum::<T>() / hf;
                    dh = (0..fan_out)
                        .map(|i| inv_std * (dzhat[i] - mean_dzhat - zhat[i] * mean_dzhat_zhat))
                        .collect();
                }
                dz = dh;
            }
            // dz is now dL/d(linear output) of layer l
            let x = &cache.inputs[l];
            let w_off = offs[l];
            for r in 0..fan_out {
                let g = dz[r];
                if g == T::zero() {
                    continue;
                }
                let row = &mut grad[w_off + r * fan_in..w_off + (r + 1) * fan_in];
                for c in 0..fan_in {
                    row[c] += g * x[c];
                }
                grad[w_off + fan_in * fan_out + r] += g;
            }
            if l > 0 {
                let w = &self.params[w_off..w_off + fan_in * fan_out];
                let mut dx = vec![T::zero(); fan_in];
                for r in 0..fan_out {
                    let g = dz[r];
                    let row = &w[r * fan_in..(r + 1) * fan_in];
                    for c in 0..fan_in {
                        dx[c] += g * row[c];
                    }
                }
                dz = dx;
            }
        }
    }

    /// Directional derivative of the output with respect to the parameters,
    /// along `dp` (length `n_params`), at fixed input `x`.
    pub fn jvp(&self, x: &[T], dp: &[T]) -> Result<Vector<T>> {
        assert_eq!(dp.len(), self.n_params());
        if x.len() != self.shape.input_dim {
            return Err(Error::DimensionMismatch { expected: self.shape.input_dim, got: x.len() });
        }
        let dims = self.shape.layer_dims();
        let offs = self.layer_offsets();
        let n_hidden = self.shape.hidden.len();
        let mut cur: Vector<T> = x.to_vec();
        let mut dcur: Vector<T> = vec![T::zero(); x.len()];
        for (l, &(fan_in, fan_out)) in dims.iter().enumerate() {
            let w = &self.params[offs[l]..offs[l] + fan_in * fan_out];
            let dw = &dp[offs[l]..offs[l] + fan_in * fan_out];
            let b = &self.params[offs[l] + fan_in * fan_out..offs[l] + fan_in * fan_out + fan_out];
            let db = &dp[offs[l] + fan_in * fan_out..offs[l] + fan_in * fan_out + fan_out];
            let mut z = vec![T::zero(); fan_out];
            let mut dz = vec![T::zero(); fan_out];
            for r in 0..fan_out {
                let row = &w[r * fan_in..(r + 1) * fan_in];
                let drow = &dw[r * fan_in..(r + 1) * fan_in];
                let mut acc = b[r];
                let mut dacc = db[r];
                for c in 0..fan_in {
                    acc += row[c] * cur[c];
                    dacc += drow[c] * cur[c] + row[c] * dcur[c];
                }
                z[r] = acc;
                dz[r] = dacc;
            }
            let is_hidden = l < n_hidden;
            if !is_hidden {
                return Ok(dz);
            }
            let (h, dh) = if self.shape.layer_norm {
                let hf = T::lit(fan_out as f64);
                let mean = z.iter().copied().sum::<T>() / hf;
                let dmean = dz.iter().copied().sum::<T>() / hf;
                let var = z.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / hf;
                let dvar = (0..fan_out)
                    .map(|i| T::lit(2.0) * (z[i] - mean) * (dz[i] - dmean))
                    .sum::<T>()
                    / hf;
                let inv_std = T::one() / (var + T::lit(LN_EPS)).sqrt();
                let dinv_std = -T::lit(0.5) * inv_std * inv_std * inv_std * dvar;
                let zhat: Vector<T> = z.iter().map(|&v| (v - mean) * inv_std).collect();
                let dzhat: Vector<T> = (0..fan_out)
                    .map(|i| (dz[i] - dmean) * inv_std + (z[i] - mean) * dinv_std)
                    .collect();
                let ln_off = self.ln_offset(l);
                let gain = &self.params[ln_off..ln_off + fan_out];
                let dgain = &dp[ln_off..ln_off + fan_out];
                let lbias = &self.params[ln_off + fan_out..ln_off + 2 * fan_out];
                let dlbias = &dp[ln_off + fan_out..ln_off + 2 * fan_out];
                let h: Vector<T> =
                    (0..fan_out).map(|i| gain[i] * zhat[i] + lbias[i]).collect();
                let dh: Vector<T> = (0..fan_out)
                    .map(|i| dgain[i] * zhat[i] + gain[i] * dzhat[i] + dlbias[i])
                    .collect();
                (h, dh)
            } else {
                (z, dz)
            };
            let y: Vector<T> = h.iter().map(|&v| v.tanh()).collect();
            let dy: Vector<T> =
                (0..fan_out).map(|i| (T::one() - y[i] * y[i]) * dh[i]).collect();
            cur = y;
            dcur = dy;
        }
        unreachable!()
    }
}
