//! The U-Net surrogate with hard homogeneous-Dirichlet output encoding.
//!
//! Topology, for depth `D` and first width `C1`:
//! encoder level `l` (`0..D`) applies two 3x3 convolutions with `C1 * 2^l`
//! channels, each followed by a rectifier, then 2x2 max pooling (except the
//! deepest level). Each decoder level upsamples with a 2x2 transposed
//! convolution, concatenates the matching encoder output (skip first), and
//! applies two 3x3 convolutions with rectifiers. A 1x1 convolution maps to a
//! single channel and the outermost node ring is multiplied by zero.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::kernels::{self, Tensor};
use crate::error::{Error, Result};
use crate::grid::{Field, Grid};
use crate::scalar::Scalar;
use crate::source::InputTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UNetConfig {
    pub in_channels: usize,
    /// Width of the first level (`C1`).
    pub first_channels: usize,
    /// Number of resolution levels (`D`).
    pub depth: usize,
    pub n: usize,
    pub m: usize,
}

impl UNetConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.in_channels) {
            return Err(Error::InvalidModel(format!(
                "in_channels must be 1, 2 or 3, got {}",
                self.in_channels
            )));
        }
        if self.first_channels < 1 {
            return Err(Error::InvalidModel("first_channels must be at least 1".into()));
        }
        if self.depth < 2 {
            return Err(Error::InvalidModel(format!("depth must be at least 2, got {}", self.depth)));
        }
        if self.depth > 12 {
            return Err(Error::InvalidModel(format!("depth {} is unreasonably large", self.depth)));
        }
        let f = 1usize << (self.depth - 1);
        if self.n < 3 || self.m < 3 || self.n % f != 0 || self.m % f != 0 {
            return Err(Error::InvalidModel(format!(
                "grid {}x{} must be at least 3x3 and divisible by 2^(depth-1) = {f}",
                self.n, self.m
            )));
        }
        Ok(())
    }

    pub fn width(&self, level: usize) -> usize {
        self.first_channels << level
    }

    pub fn param_count(&self) -> usize {
        layout(self).iter().map(|l| l.param_len()).sum()
    }
}

/// Exact trainable-parameter count of the topology for `config`.
pub fn param_count(config: &UNetConfig) -> usize {
    config.param_count()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv3x3,
    ConvTranspose2x2,
    Conv1x1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub cin: usize,
    pub cout: usize,
    pub offset: usize,
}

impl LayerSpec {
    pub fn weight_len(&self) -> usize {
        let k = match self.kind {
            LayerKind::Conv3x3 => 9,
            LayerKind::ConvTranspose2x2 => 4,
            LayerKind::Conv1x1 => 1,
        };
        self.cin * self.cout * k
    }

    pub fn param_len(&self) -> usize {
        self.weight_len() + self.cout
    }

    fn weight_range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.weight_len()
    }

    fn bias_range(&self) -> std::ops::Range<usize> {
        let s = self.offset + self.weight_len();
        s..s + self.cout
    }

    fn fan_in(&self) -> usize {
        match self.kind {
            LayerKind::Conv3x3 => 9 * self.cin,
            LayerKind::ConvTranspose2x2 | LayerKind::Conv1x1 => self.cin,
        }
    }
}

/// Layers in declaration order: encoder levels (two convs each), then per
/// decoder level from deepest to shallowest (upsample, two convs), then head.
fn layout(cfg: &UNetConfig) -> Vec<LayerSpec> {
    let mut out = Vec::with_capacity(4 * cfg.depth + 1);
    let mut offset = 0;
    let mut push = |kind, cin, cout| {
        let l = LayerSpec {
            kind,
            cin,
            cout,
            offset,
        };
        offset += l.param_len();
        out.push(l);
    };
    let mut cin = cfg.in_channels;
    for l in 0..cfg.depth {
        let c = cfg.width(l);
        push(LayerKind::Conv3x3, cin, c);
        push(LayerKind::Conv3x3, c, c);
        cin = c;
    }
    for l in (0..cfg.depth - 1).rev() {
        let c = cfg.width(l);
        push(LayerKind::ConvTranspose2x2, 2 * c, c);
        push(LayerKind::Conv3x3, 2 * c, c);
        push(LayerKind::Conv3x3, c, c);
    }
    push(LayerKind::Conv1x1, cfg.width(0), 1);
    out
}

/// Network configuration plus the flat parameter vector `Θ`.
#[derive(Debug, Clone, PartialEq)]
pub struct UNet<T> {
    config: UNetConfig,
    layers: Vec<LayerSpec>,
    pub params: Vec<T>,
}

/// Activations kept from a forward pass for the reverse pass.
#[derive(Debug)]
pub struct ForwardCache<T> {
    enc_in: Vec<Tensor<T>>,
    enc_mid: Vec<Tensor<T>>,
    enc_out: Vec<Tensor<T>>,
    pool_arg: Vec<Vec<u32>>,
    /// Indexed by decoder level `l` (`0..D-1`).
    dec_cat: Vec<Tensor<T>>,
    dec_mid: Vec<Tensor<T>>,
    dec_out: Vec<Tensor<T>>,
}

impl<T: Scalar> UNet<T> {
    /// Fan-in scaled uniform initialization: every weight and bias of a
    /// layer from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    ///
    /// The He bound `sqrt(6/fan_in)` trains markedly slower here under Adam
    /// at the default learning rate, and zero biases leave source-free
    /// regions exactly on the ReLU kink where they receive no gradient.
    pub fn init(config: UNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layers = layout(&config);
        let total = layers.iter().map(|l| l.param_len()).sum();
        let mut params = vec![T::zero(); total];
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        for l in &layers {
            let bound = 1.0 / (l.fan_in() as f64).sqrt();
            for p in &mut params[l.offset..l.offset + l.param_len()] {
                *p = T::of(rng.gen_range(-bound..bound));
            }
        }
        Ok(Self {
            config,
            layers,
            params,
        })
    }

    pub fn from_params(config: UNetConfig, params: Vec<T>) -> Result<Self> {
        config.validate()?;
        let layers = layout(&config);
        let total: usize = layers.iter().map(|l| l.param_len()).sum();
        if params.len() != total {
            return Err(Error::InvalidModel(format!(
                "expected {total} parameters, got {}",
                params.len()
            )));
        }
        Ok(Self {
            config,
            layers,
            params,
        })
    }

    pub fn config(&self) -> &UNetConfig {
        &self.config
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Same network in another precision.
    pub fn cast<U: Scalar>(&self) -> UNet<U> {
        UNet {
            config: self.config,
            layers: self.layers.clone(),
            params: self.params.iter().map(|p| U::of(p.as_f64())).collect(),
        }
    }

    fn wb(&self, idx: usize) -> (&[T], &[T], usize) {
        let l = &self.layers[idx];
        (&self.params[l.weight_range()], &self.params[l.bias_range()], l.cout)
    }

    fn check_input(&self, input: &InputTensor) -> Result<()> {
        if input.channels != self.config.in_channels
            || input.grid.n != self.config.n
            || input.grid.m != self.config.m
        {
            return Err(Error::ShapeMismatch(format!(
                "network expects {}x{}x{}, input is {}x{}x{}",
                self.config.n, self.config.m, self.config.in_channels, input.grid.n, input.grid.m, input.channels
            )));
        }
        Ok(())
    }

    pub fn to_tensor(&self, input: &InputTensor) -> Result<Tensor<T>> {
        self.check_input(input)?;
        Ok(Tensor {
            c: input.channels,
            h: self.config.m,
            w: self.config.n,
            data: input.data.iter().map(|v| T::of(*v)).collect(),
        })
    }

    /// Forward pass on an already converted input. Returns the masked
    /// `n x m` output (i fastest) and, if requested, the activation cache.
    pub fn forward_tensor(&self, x: Tensor<T>, keep: bool) -> (Vec<T>, Option<ForwardCache<T>>) {
        let d = self.config.depth;
        let mut enc_in = Vec::with_capacity(d);
        let mut enc_mid = Vec::with_capacity(d);
        let mut enc_out: Vec<Tensor<T>> = Vec::with_capacity(d);
        let mut pool_arg = Vec::with_capacity(d - 1);
        let mut next_in = Some(x);
        for l in 0..d {
            let cur = next_in.take().expect("set by previous level");
            let (w, b, c) = self.wb(2 * l);
            let mut mid = kernels::conv3x3(&cur, w, b, c);
            kernels::relu_inplace(&mut mid);
            let (w, b, c) = self.wb(2 * l + 1);
            let mut out = kernels::conv3x3(&mid, w, b, c);
            kernels::relu_inplace(&mut out);
            let next = if l + 1 < d {
                let (p, arg) = kernels::maxpool2(&out);
                pool_arg.push(arg);
                Some(p)
            } else {
                None
            };
            if keep {
                enc_in.push(cur);
                enc_mid.push(mid);
            }
            enc_out.push(out);
            next_in = next;
        }
        let mut dec_cat: Vec<Option<Tensor<T>>> = (0..d - 1).map(|_| None).collect();
        let mut dec_mid: Vec<Option<Tensor<T>>> = (0..d - 1).map(|_| None).collect();
        let mut dec_out: Vec<Option<Tensor<T>>> = (0..d - 1).map(|_| None).collect();
        let mut below = enc_out[d - 1].clone();
        let mut li = 2 * d;
        for l in (0..d - 1).rev() {
            let (w, b, c) = self.wb(li);
            let up = kernels::conv_transpose2x2(&below, w, b, c);
            let cat = Tensor::concat(&enc_out[l], &up);
            let (w, b, c) = self.wb(li + 1);
            let mut mid = kernels::conv3x3(&cat, w, b, c);
            kernels::relu_inplace(&mut mid);
            let (w, b, c) = self.wb(li + 2);
            let mut out = kernels::conv3x3(&mid, w, b, c);
            kernels::relu_inplace(&mut out);
            li += 3;
            if keep {
                dec_cat[l] = Some(cat);
                dec_mid[l] = Some(mid);
                dec_out[l] = Some(out.clone());
            }
            below = out;
        }
        let (w, b, c) = self.wb(li);
        let head = kernels::conv1x1(&below, w, b, c);
        let mut y = head.data;
        self.mask(&mut y);
        let cache = keep.then(|| ForwardCache {
            enc_in,
            enc_mid,
            enc_out,
            pool_arg,
            dec_cat: dec_cat.into_iter().map(Option::unwrap).collect(),
            dec_mid: dec_mid.into_iter().map(Option::unwrap).collect(),
            dec_out: dec_out.into_iter().map(Option::unwrap).collect(),
        });
        (y, cache)
    }

    fn mask(&self, y: &mut [T]) {
        let (n, m) = (self.config.n, self.config.m);
        for i in 0..n {
            y[i] = T::zero();
            y[i + n * (m - 1)] = T::zero();
        }
        for j in 0..m {
            y[n * j] = T::zero();
            y[n - 1 + n * j] = T::zero();
        }
    }

    /// Maps an input tensor to a field whose boundary ring is exactly zero.
    pub fn forward(&self, input: &InputTensor) -> Result<Field> {
        let x = self.to_tensor(input)?;
        let (y, _) = self.forward_tensor(x, false);
        Field::from_vec(input.grid, y.into_iter().map(|v| v.as_f64()).collect())
    }

    /// Reverse pass: accumulates `d<upstream, forward>/dΘ` into `grads`.
    pub fn backward(&self, cache: &ForwardCache<T>, upstream: &[T], grads: &mut [T]) {
        let d = self.config.depth;
        let (n, m) = (self.config.n, self.config.m);
        let mut g = Tensor {
            c: 1,
            h: m,
            w: n,
            data: upstream.to_vec(),
        };
        self.mask(&mut g.data);

        let head_idx = self.layers.len() - 1;
        let head_in = if d >= 2 { &cache.dec_out[0] } else { &cache.enc_out[0] };
        let mut g = self.layer_backward_1x1(head_idx, head_in, &g, grads);

        // decoder, shallowest level first (reverse of the forward order)
        let mut skip_grads: Vec<Option<Tensor<T>>> = (0..d - 1).map(|_| None).collect();
        for l in 0..d - 1 {
            let li = 2 * d + 3 * (d - 2 - l);
            kernels::relu_backward_inplace(&cache.dec_out[l], &mut g);
            g = self.layer_backward_3x3(li + 2, &cache.dec_mid[l], &g, grads, true).unwrap();
            kernels::relu_backward_inplace(&cache.dec_mid[l], &mut g);
            let gcat = self.layer_backward_3x3(li + 1, &cache.dec_cat[l], &g, grads, true).unwrap();
            let (g_skip, g_up) = gcat.split(self.config.width(l));
            skip_grads[l] = Some(g_skip);
            let below = if l + 2 == d { &cache.enc_out[d - 1] } else { &cache.dec_out[l + 1] };
            g = self.layer_backward_t2(li, below, &g_up, grads);
        }

        // encoder, deepest level first; `g` is the gradient of enc_out[d-1]
        for l in (0..d).rev() {
            if l + 1 < d {
                let src = &cache.enc_out[l];
                let mut gp = kernels::maxpool2_backward(&g, &cache.pool_arg[l], src.c, src.h, src.w);
                let gs = skip_grads[l].take().unwrap();
                for (a, b) in gp.data.iter_mut().zip(&gs.data) {
                    *a += *b;
                }
                g = gp;
            }
            kernels::relu_backward_inplace(&cache.enc_out[l], &mut g);
            g = self
                .layer_backward_3x3(2 * l + 1, &cache.enc_mid[l], &g, grads, true)
                .unwrap();
            kernels::relu_backward_inplace(&cache.enc_mid[l], &mut g);
            match self.layer_backward_3x3(2 * l, &cache.enc_in[l], &g, grads, l > 0) {
                Some(gin) => g = gin,
                None => break,
            }
        }
    }

    fn split_grads<'a>(&self, idx: usize, grads: &'a mut [T]) -> (&'a mut [T], &'a mut [T]) {
        let l = &self.layers[idx];
        let seg = &mut grads[l.offset..l.offset + l.param_len()];
        seg.split_at_mut(l.weight_len())
    }

    fn layer_backward_3x3(
        &self,
        idx: usize,
        input: &Tensor<T>,
        g: &Tensor<T>,
        grads: &mut [T],
        need_input: bool,
    ) -> Option<Tensor<T>> {
        let (w, _, _) = self.wb(idx);
        let (gw, gb) = self.split_grads(idx, grads);
        kernels::conv3x3_backward(input, w, g, gw, gb, need_input)
    }

    fn layer_backward_1x1(&self, idx: usize, input: &Tensor<T>, g: &Tensor<T>, grads: &mut [T]) -> Tensor<T> {
        let (w, _, _) = self.wb(idx);
        let (gw, gb) = self.split_grads(idx, grads);
        kernels::conv1x1_backward(input, w, g, gw, gb)
    }

    fn layer_backward_t2(&self, idx: usize, input: &Tensor<T>, g: &Tensor<T>, grads: &mut [T]) -> Tensor<T> {
        let (w, _, _) = self.wb(idx);
        let (gw, gb) = self.split_grads(idx, grads);
        kernels::conv_transpose2x2_backward(input, w, g, gw, gb)
    }

    /// Gradient of `<upstream, forward(input)>` with respect to `Θ`.
    pub fn gradient(&self, input: &InputTensor, upstream: &Field) -> Result<Vec<T>> {
        let g = upstream.grid();
        if g.n != self.config.n || g.m != self.config.m {
            return Err(Error::ShapeMismatch("upstream field does not match the network grid".into()));
        }
        let x = self.to_tensor(input)?;
        let (_, cache) = self.forward_tensor(x, true);
        let up: Vec<T> = upstream.values().iter().map(|v| T::of(*v)).collect();
        let mut grads = vec![T::zero(); self.params.len()];
        self.backward(cache.as_ref().unwrap(), &up, &mut grads);
        Ok(grads)
    }

    /// Range of the head bias inside `params`.
    pub fn head_bias_index(&self) -> usize {
        self.layers.last().unwrap().bias_range().start
    }

    pub fn grid_matches(&self, grid: &Grid) -> bool {
        grid.n == self.config.n && grid.m == self.config.m
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::RectDomain;
    use crate::source::{build_input, InputVariant, SourceConfig};

    fn cfg(c1: usize, d: usize, n: usize) -> UNetConfig {
        UNetConfig {
            in_channels: 1,
            first_channels: c1,
            depth: d,
            n,
            m: n,
        }
    }

    #[test]
    fn hand_counted_params() {
        // level 0: 1->4 (40) 4->4 (148); level 1: 4->8 (296) 8->8 (584)
        // up 8->4 (132) 8->4 (292) 4->4 (148); head 4->1 (5)
        assert_eq!(cfg(4, 2, 8).param_count(), 40 + 148 + 296 + 584 + 132 + 292 + 148 + 5);
    }

    #[test]
    fn validation_errors() {
        assert!(cfg(4, 3, 30).validate().is_err());
        assert!(cfg(4, 1, 32).validate().is_err());
        assert!(cfg(0, 2, 32).validate().is_err());
        assert!(UNetConfig { in_channels: 4, ..cfg(4, 2, 8) }.validate().is_err());
        assert!(UNet::<f32>::init(cfg(2, 4, 12), 0).is_err());
    }

    #[test]
    fn init_determinism() {
        let a = UNet::<f32>::init(cfg(4, 3, 16), 11).unwrap();
        let b = UNet::<f32>::init(cfg(4, 3, 16), 11).unwrap();
        let c = UNet::<f32>::init(cfg(4, 3, 16), 12).unwrap();
        assert_eq!(a.params, b.params);
        assert_ne!(a.params, c.params);
    }

    #[test]
    fn output_shape_and_mask() {
        let g = Grid::new(RectDomain::unit_square_sym(), 16, 8).unwrap();
        let net = UNet::<f64>::init(
            UNetConfig {
                in_channels: 2,
                first_channels: 3,
                depth: 3,
                n: 16,
                m: 8,
            },
            5,
        )
        .unwrap();
        let input = build_input(&g, (0.2, 0.1), InputVariant::DistanceSource, &SourceConfig::default()).unwrap();
        let out = net.forward(&input).unwrap();
        assert_eq!(out.values().len(), 128);
        assert_eq!(out.boundary_max_abs(), 0.0);
        assert!(out.is_finite());
        let again = net.forward(&input).unwrap();
        assert_eq!(out, again);
        let bad = build_input(&g, (0.2, 0.1), InputVariant::Source, &SourceConfig::default()).unwrap();
        assert!(net.forward(&bad).is_err());
    }

    #[test]
    fn zero_upstream_zero_gradient() {
        let g = Grid::new(RectDomain::unit_square_sym(), 8, 8).unwrap();
        let net = UNet::<f64>::init(cfg(2, 2, 8), 1).unwrap();
        let input = build_input(&g, (0.0, 0.1), InputVariant::Source, &SourceConfig::default()).unwrap();
        let grads = net.gradient(&input, &Field::zeros(g)).unwrap();
        assert!(grads.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn cast_roundtrip() {
        let net = UNet::<f32>::init(cfg(2, 2, 8), 3).unwrap();
        let back: UNet<f32> = net.cast::<f64>().cast();
        assert_eq!(back, net);
    }
}
