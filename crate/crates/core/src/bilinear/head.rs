use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{read_manifest, write_manifest};
use crate::error::{Error, Result};
use crate::nn::checkpoint::{load_net, save_net};
use crate::nn::{Activation, Mlp, MlpGrads, Parameters, Tape};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BilinearConfig {
    /// Width of each channel's inner product.
    pub k: usize,
    /// Number of channels.
    pub m: usize,
    pub embed_hidden: Vec<usize>,
    pub post_hidden: Vec<usize>,
}

impl Default for BilinearConfig {
    fn default() -> Self {
        BilinearConfig {
            k: 4,
            m: 64,
            embed_hidden: vec![64, 64],
            post_hidden: vec![100, 100],
        }
    }
}

impl BilinearConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.m == 0 || self.embed_hidden.iter().chain(&self.post_hidden).any(|&h| h == 0) {
            return Err(Error::InvalidConfig("bilinear: k, m and hidden widths must be positive".into()));
        }
        Ok(())
    }
}

/// Two embedding networks whose `m × k` outputs are multiplied channel by
/// channel, followed by a post-MLP over the `m` channel products:
///
/// `c_i = ⟨φ₁(u)_i, φ₂(v)_i⟩`, `out = post(c)`.
///
/// φ₁'s final layer carries no bias.
#[derive(Debug, Clone, PartialEq)]
pub struct BilinearHead {
    pub phi1: Mlp,
    pub phi2: Mlp,
    pub post: Mlp,
    k: usize,
    m: usize,
}

#[derive(Debug, Clone)]
pub struct BilinearTape {
    t1: Tape,
    t2: Tape,
    post: Tape,
}

impl BilinearTape {
    pub fn output(&self) -> &Array2<f64> {
        self.post.output()
    }

    pub fn channels(&self) -> &Array2<f64> {
        self.post.input()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BilinearGrads {
    pub phi1: MlpGrads,
    pub phi2: MlpGrads,
    pub post: MlpGrads,
}

impl BilinearHead {
    pub fn new<R: Rng + ?Sized>(
        u_dim: usize,
        v_dim: usize,
        out_dim: usize,
        config: &BilinearConfig,
        hidden: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let embed = |input: usize| {
            let mut dims = vec![input];
            dims.extend(&config.embed_hidden);
            dims.push(config.m * config.k);
            dims
        };
        let phi1 = Mlp::with_output_bias(&embed(u_dim), hidden, false, rng)?;
        let phi2 = Mlp::new(&embed(v_dim), hidden, rng)?;
        let mut post_dims = vec![config.m];
        post_dims.extend(&config.post_hidden);
        post_dims.push(out_dim);
        let post = Mlp::new(&post_dims, hidden, rng)?;
        Ok(BilinearHead {
            phi1,
            phi2,
            post,
            k: config.k,
            m: config.m,
        })
    }

    pub fn from_parts(phi1: Mlp, phi2: Mlp, post: Mlp, k: usize) -> Result<Self> {
        if k == 0 || phi1.out_dim() % k != 0 {
            return Err(Error::shape("bilinear embedding width", k, phi1.out_dim()));
        }
        if phi1.out_dim() != phi2.out_dim() {
            return Err(Error::shape("bilinear embedding widths", phi1.out_dim(), phi2.out_dim()));
        }
        let m = phi1.out_dim() / k;
        if post.in_dim() != m {
            return Err(Error::shape("bilinear post-MLP input", m, post.in_dim()));
        }
        Ok(BilinearHead { phi1, phi2, post, k, m })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn u_dim(&self) -> usize {
        self.phi1.in_dim()
    }

    pub fn v_dim(&self) -> usize {
        self.phi2.in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.post.out_dim()
    }

    pub fn param_count(&self) -> usize {
        self.phi1.param_count() + self.phi2.param_count() + self.post.param_count()
    }

    /// Channel products `c[b, i] = Σ_j e1[b, i·k + j] · e2[b, i·k + j]`.
    pub fn channel_products(&self, e1: &Array2<f64>, e2: &Array2<f64>) -> Array2<f64> {
        let mut c = Array2::zeros((e1.nrows(), self.m));
        for b in 0..e1.nrows() {
            let (r1, r2) = (e1.row(b), e2.row(b));
            for i in 0..self.m {
                let mut acc = 0.0;
                for j in i * self.k..(i + 1) * self.k {
                    acc += r1[j] * r2[j];
                }
                c[[b, i]] = acc;
            }
        }
        c
    }

    fn check_inputs(&self, u: ArrayView2<f64>, v: ArrayView2<f64>) -> Result<()> {
        if u.ncols() != self.u_dim() {
            return Err(Error::shape("bilinear u input", self.u_dim(), u.ncols()));
        }
        if v.ncols() != self.v_dim() {
            return Err(Error::shape("bilinear v input", self.v_dim(), v.ncols()));
        }
        if u.nrows() != v.nrows() {
            return Err(Error::shape("bilinear batch", u.nrows(), v.nrows()));
        }
        Ok(())
    }

    pub fn forward_tape(&self, u: ArrayView2<f64>, v: ArrayView2<f64>) -> Result<BilinearTape> {
        self.check_inputs(u, v)?;
        let t1 = self.phi1.forward_tape(u)?;
        let t2 = self.phi2.forward_tape(v)?;
        let c = self.channel_products(t1.output(), t2.output());
        let post = self.post.forward_tape(c.view())?;
        Ok(BilinearTape { t1, t2, post })
    }

    pub fn forward(&self, u: ArrayView2<f64>, v: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.forward_tape(u, v)?.post.into_output())
    }

    /// Returns parameter gradients and the gradients with respect to `u` and `v`.
    pub fn backward(
        &self,
        tape: &BilinearTape,
        upstream: ArrayView2<f64>,
    ) -> Result<(BilinearGrads, Array2<f64>, Array2<f64>)> {
        let (post, dc) = self.post.backward(&tape.post, upstream)?;
        let (e1, e2) = (tape.t1.output(), tape.t2.output());
        let mut de1 = Array2::zeros(e1.raw_dim());
        let mut de2 = Array2::zeros(e2.raw_dim());
        for b in 0..e1.nrows() {
            for i in 0..self.m {
                let g = dc[[b, i]];
                for j in i * self.k..(i + 1) * self.k {
                    de1[[b, j]] = g * e2[[b, j]];
                    de2[[b, j]] = g * e1[[b, j]];
                }
            }
        }
        let (phi1, du) = self.phi1.backward(&tape.t1, de1.view())?;
        let (phi2, dv) = self.phi2.backward(&tape.t2, de2.view())?;
        Ok((BilinearGrads { phi1, phi2, post }, du, dv))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        save_net(&self.phi1, &dir.join("phi1.net"))?;
        save_net(&self.phi2, &dir.join("phi2.net"))?;
        save_net(&self.post, &dir.join("post.net"))?;
        write_manifest(
            dir,
            &HeadManifest {
                k: self.k,
                m: self.m,
                u_dim: self.u_dim(),
                v_dim: self.v_dim(),
                post_dims: self.post.dims(),
            },
        )
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: HeadManifest = read_manifest(dir)?;
        let head = Self::from_parts(
            load_net(&dir.join("phi1.net"))?,
            load_net(&dir.join("phi2.net"))?,
            load_net(&dir.join("post.net"))?,
            manifest.k,
        )?;
        if head.m != manifest.m
            || head.u_dim() != manifest.u_dim
            || head.v_dim() != manifest.v_dim
            || head.post.dims() != manifest.post_dims
        {
            return Err(Error::Format("bilinear head files disagree with manifest".into()));
        }
        Ok(head)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct HeadManifest {
    k: usize,
    m: usize,
    u_dim: usize,
    v_dim: usize,
    post_dims: Vec<usize>,
}

impl Parameters for BilinearHead {
    fn param_slices(&self) -> Vec<&[f64]> {
        let mut v = self.phi1.param_slices();
        v.extend(self.phi2.param_slices());
        v.extend(self.post.param_slices());
        v
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.phi1.param_slices_mut();
        v.extend(self.phi2.param_slices_mut());
        v.extend(self.post.param_slices_mut());
        v
    }
}

impl Parameters for BilinearGrads {
    fn param_slices(&self) -> Vec<&[f64]> {
        let mut v = self.phi1.param_slices();
        v.extend(self.phi2.param_slices());
        v.extend(self.post.param_slices());
        v
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.phi1.param_slices_mut();
        v.extend(self.phi2.param_slices_mut());
        v.extend(self.post.param_slices_mut());
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{check_input, check_parameters, probe_weights};
    use crate::nn::{GradCheckOptions, Layer};
    use ndarray::{array, Array1};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small(seed: u64) -> BilinearHead {
        let cfg = BilinearConfig {
            k: 3,
            m: 5,
            embed_hidden: vec![7, 6],
            post_hidden: vec![8],
        };
        BilinearHead::new(3, 2, 2, &cfg, Activation::Tanh, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    fn constant_net(in_dim: usize, out: &[f64]) -> Mlp {
        Mlp::from_layers(vec![Layer {
            weights: Array2::zeros((out.len(), in_dim)),
            bias: Array1::from(out.to_vec()),
            activation: Activation::Linear,
        }])
        .unwrap()
    }

    #[test]
    fn matches_embed_reshape_dot_oracle() {
        let head = small(1);
        let u = array![[0.3, -0.2, 1.1], [0.0, 0.5, -0.7]];
        let v = array![[0.9, -1.3], [0.25, 0.1]];
        let out = head.forward(u.view(), v.view()).unwrap();
        for b in 0..2 {
            let e1 = head.phi1.forward_one(&u.row(b).to_vec()).unwrap();
            let e2 = head.phi2.forward_one(&v.row(b).to_vec()).unwrap();
            let c: Vec<f64> = (0..5)
                .map(|i| (0..3).map(|j| e1[3 * i + j] * e2[3 * i + j]).sum())
                .collect();
            let want = head.post.forward_one(&c).unwrap();
            for (x, y) in out.row(b).iter().zip(&want) {
                assert!((x - y).abs() < 1e-14, "{x} vs {y}");
            }
        }
    }

    #[test]
    fn zeroed_factor_annihilates_channels() {
        let mut head = small(2);
        for l in head.phi2.layers_mut() {
            l.weights.fill(0.0);
            l.bias.fill(0.0);
        }
        let u = array![[5.0, -3.0, 2.0]];
        let v = array![[1.0, 1.0]];
        let tape = head.forward_tape(u.view(), v.view()).unwrap();
        assert!(tape.channels().iter().all(|&c| c == 0.0));
        let want = head.post.forward_one(&[0.0; 5]).unwrap();
        assert_eq!(tape.output().row(0).to_vec(), want);
    }

    #[test]
    fn constant_embeddings_give_constant_channels() {
        let head = BilinearHead::from_parts(
            constant_net(2, &[1.0; 4]),
            constant_net(3, &[2.0; 4]),
            Mlp::new(&[4, 1], Activation::Linear, &mut ChaCha8Rng::seed_from_u64(0)).unwrap(),
            1,
        )
        .unwrap();
        let tape = head.forward_tape(array![[0.4, 0.1]].view(), array![[1.0, 2.0, 3.0]].view()).unwrap();
        assert_eq!(tape.channels().row(0).to_vec(), vec![2.0; 4]);
    }

    #[test]
    fn scaling_phi1_final_layer_scales_channels() {
        let head = small(3);
        let mut scaled = head.clone();
        let last = scaled.phi1.layers_mut().last_mut().unwrap();
        last.weights.mapv_inplace(|w| w * 2.5);
        last.bias.mapv_inplace(|b| b * 2.5);
        let u = array![[0.3, -0.2, 1.1]];
        let v = array![[0.9, -1.3]];
        let c = head.forward_tape(u.view(), v.view()).unwrap().channels().clone();
        let c2 = scaled.forward_tape(u.view(), v.view()).unwrap().channels().clone();
        for (a, b) in c.iter().zip(&c2) {
            assert!((2.5 * a - b).abs() <= 1e-14 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn phi1_final_layer_is_bias_free() {
        let head = small(0);
        assert!(!head.phi1.layers().last().unwrap().has_bias());
        assert!(head.phi2.layers().last().unwrap().has_bias());
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let head = small(0);
        assert!(head.forward(array![[0.0, 0.0]].view(), array![[0.0, 0.0]].view()).is_err());
        assert!(head.forward(array![[0.0; 3]].view(), array![[0.0; 3]].view()).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for seed in 0..20 {
            let head = small(seed);
            let u = Array2::from_shape_fn((1, 3), |_| rng.random_range(-1.5..1.5));
            let v = Array2::from_shape_fn((1, 2), |_| rng.random_range(-1.5..1.5));
            let w = Array2::from_shape_vec((1, 2), probe_weights(2)).unwrap();
            let objective = |h: &BilinearHead, u: &Array2<f64>, v: &Array2<f64>| -> f64 {
                (h.forward(u.view(), v.view()).unwrap() * &w).sum()
            };
            let tape = head.forward_tape(u.view(), v.view()).unwrap();
            let (grads, du, dv) = head.backward(&tape, w.view()).unwrap();
            let mut probe = head.clone();
            let err = check_parameters(&mut probe, &grads, |h| objective(h, &u, &v), &GradCheckOptions::default());
            assert!(err < 1e-4, "seed {seed}: params {err}");
            let eu = check_input(
                u.as_slice().unwrap(),
                du.as_slice().unwrap(),
                |x| objective(&head, &Array2::from_shape_vec((1, 3), x.to_vec()).unwrap(), &v),
                1e-5,
            );
            let ev = check_input(
                v.as_slice().unwrap(),
                dv.as_slice().unwrap(),
                |x| objective(&head, &u, &Array2::from_shape_vec((1, 2), x.to_vec()).unwrap()),
                1e-5,
            );
            assert!(eu < 1e-4 && ev < 1e-4, "seed {seed}: inputs {eu} {ev}");
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let head = small(4);
        let dir = tempfile::tempdir().unwrap();
        head.save(dir.path()).unwrap();
        assert_eq!(BilinearHead::load(dir.path()).unwrap(), head);
    }
}
