//! Central finite-difference checks of every differentiable op and of whole
//! U-Nets, in double precision.
//!
//! For each parameter tensor (and the input) a random sample of entries is
//! perturbed by `±EPS`. An entry whose two probes land in different relu /
//! argmax regions is resampled, since the loss is not differentiable there.
//! The reported error of a tensor is `|a - n| / max(|a|, |n|, FLOOR)` over
//! the sampled analytic (`a`) and numeric (`n`) vectors.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::graph::{ModelGraph, Op};
use super::layers::Conv2d;
use super::loss::{loss_mse, loss_softmax_ce};
use super::Tensor4;
use crate::error::Result;
use crate::unet::{build_unet, UNetConfig};

pub const EPS: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
const FLOOR: f64 = 1e-6;
const SAMPLES_PER_TENSOR: usize = 12;

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub name: String,
    pub seed: u64,
    pub input_shape: [usize; 4],
    pub max_rel_err: f64,
    pub worst_tensor: String,
    pub entries_checked: usize,
    pub kinks_skipped: usize,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < TOLERANCE
    }
}

type LossFn<'a> = dyn Fn(&Tensor4<f64>) -> Result<(f64, Tensor4<f64>)> + 'a;

fn rel_err(a: &[f64], n: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(n).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(n)).max(FLOOR)
}

struct Checker<'a> {
    graph: ModelGraph<f64>,
    loss: &'a LossFn<'a>,
    rng: ChaCha8Rng,
    kinks: usize,
    checked: usize,
}

impl Checker<'_> {
    fn loss_at(&self, x: &Tensor4<f64>) -> Result<(f64, u64)> {
        let (y, sig) = self.graph.infer_with_signature(x)?;
        Ok(((self.loss)(&y)?.0, sig))
    }

    /// Central difference of the loss along one coordinate set by `poke`, or
    /// `None` when the probes straddle a kink.
    fn probe(
        &mut self,
        x: &Tensor4<f64>,
        mut poke: impl FnMut(&mut ModelGraph<f64>, &mut Tensor4<f64>, f64),
    ) -> Result<Option<f64>> {
        let mut xp = x.clone();
        poke(&mut self.graph, &mut xp, EPS);
        let (lp, sig_p) = self.loss_at(&xp)?;
        poke(&mut self.graph, &mut xp, -2.0 * EPS);
        let (lm, sig_m) = self.loss_at(&xp)?;
        poke(&mut self.graph, &mut xp, EPS);
        if sig_p != sig_m {
            self.kinks += 1;
            return Ok(None);
        }
        self.checked += 1;
        Ok(Some((lp - lm) / (2.0 * EPS)))
    }

    fn sampled_indices(&mut self, len: usize) -> Vec<usize> {
        let k = len.min(SAMPLES_PER_TENSOR * 3);
        sample(&mut self.rng, len, k).into_vec()
    }

    fn run(mut self, name: &str, seed: u64, x: &Tensor4<f64>) -> Result<GradCheckReport> {
        self.graph.zero_grad();
        let y = self.graph.forward(x)?;
        let (_, dy) = (self.loss)(&y)?;
        let dx = self.graph.backward(&dy)?;

        let mut worst = (0.0, String::new());
        let n_params = self.graph.params().len();
        for pi in 0..n_params {
            let (pname, len, analytic_all) = {
                let p = self.graph.params()[pi];
                (p.name.clone(), p.len(), p.grad.clone())
            };
            let mut a = Vec::new();
            let mut n = Vec::new();
            for j in self.sampled_indices(len) {
                if a.len() == SAMPLES_PER_TENSOR {
                    break;
                }
                let fd = self.probe(x, |g, _, d| g.params_mut()[pi].value[j] += d)?;
                if let Some(fd) = fd {
                    a.push(analytic_all[j]);
                    n.push(fd);
                }
            }
            let e = rel_err(&a, &n);
            if e >= worst.0 {
                worst = (e, pname);
            }
        }
        let mut a = Vec::new();
        let mut n = Vec::new();
        for j in self.sampled_indices(x.len()) {
            if a.len() == SAMPLES_PER_TENSOR {
                break;
            }
            if let Some(fd) = self.probe(x, |_, xp, d| xp.data_mut()[j] += d)? {
                a.push(dx.data()[j]);
                n.push(fd);
            }
        }
        let e = rel_err(&a, &n);
        if e >= worst.0 {
            worst = (e, "input".to_string());
        }
        Ok(GradCheckReport {
            name: name.to_string(),
            seed,
            input_shape: x.shape(),
            max_rel_err: worst.0,
            worst_tensor: worst.1,
            entries_checked: self.checked,
            kinks_skipped: self.kinks,
        })
    }
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: [usize; 4], lo: f64, hi: f64) -> Tensor4<f64> {
    Tensor4::from_fn(shape, |_| rng.random_range(lo..hi))
}

fn random_conv(rng: &mut ChaCha8Rng, name: &str, cin: usize, cout: usize, k: usize) -> Conv2d<f64> {
    let mut c = Conv2d::new(name, cin, cout, k);
    c.weight.value.iter_mut().for_each(|w| *w = rng.random_range(-1.0..1.0));
    c.bias.value.iter_mut().for_each(|b| *b = rng.random_range(-0.5..0.5));
    c
}

/// `sum(r * y)` with a fixed random `r`: every output element gets a distinct weight.
fn projection(rng: &mut ChaCha8Rng, shape: [usize; 4]) -> impl Fn(&Tensor4<f64>) -> Result<(f64, Tensor4<f64>)> {
    let r = random_tensor(rng, shape, -1.0, 1.0);
    move |y: &Tensor4<f64>| {
        let v = y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum();
        Ok((v, r.clone()))
    }
}

fn check(
    name: &str,
    seed: u64,
    graph: ModelGraph<f64>,
    x: &Tensor4<f64>,
    loss: &LossFn<'_>,
    rng: &mut ChaCha8Rng,
) -> Result<GradCheckReport> {
    Checker {
        graph,
        loss,
        rng: ChaCha8Rng::seed_from_u64(rng.random()),
        kinks: 0,
        checked: 0,
    }
    .run(name, seed, x)
}

/// Every layer kind and loss for one seed, on random shapes up to 2x4x16x16.
pub fn check_ops(seed: u64) -> Result<Vec<GradCheckReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let n = rng.random_range(1..=2);
    let c = rng.random_range(1..=4);
    let h = 2 * rng.random_range(1..=8);
    let w = 2 * rng.random_range(1..=8);
    let shape = [n, c, h, w];
    let x = random_tensor(&mut rng, shape, -1.0, 1.0);

    for (name, k) in [("conv3x3", 3), ("conv1x1", 1)] {
        let cout = rng.random_range(1..=4);
        let mut g = ModelGraph::new();
        g.push(name, Op::Conv(random_conv(&mut rng, name, c, cout, k)));
        let loss = projection(&mut rng, [n, cout, h, w]);
        out.push(check(name, seed, g, &x, &loss, &mut rng)?);
    }

    let simple: [(&str, Op<f64>, [usize; 4]); 3] = [
        ("relu", Op::Relu, shape),
        ("maxpool2", Op::MaxPool2, [n, c, h / 2, w / 2]),
        ("upsample2_nearest", Op::Upsample2, [n, c, 2 * h, 2 * w]),
    ];
    for (name, op, out_shape) in simple {
        let mut g = ModelGraph::new();
        g.push(name, op);
        let loss = projection(&mut rng, out_shape);
        out.push(check(name, seed, g, &x, &loss, &mut rng)?);
    }

    // concat(input, conv(input)): also exercises fan-in accumulation
    let cout = rng.random_range(1..=3);
    let mut g = ModelGraph::new();
    g.push("conv", Op::Conv(random_conv(&mut rng, "conv", c, cout, 3)));
    g.push("concat_skip", Op::Concat { skip: 0 });
    let loss = projection(&mut rng, [n, c + cout, h, w]);
    out.push(check("concat_skip", seed, g, &x, &loss, &mut rng)?);

    let target = random_tensor(&mut rng, shape, 0.0, 1.0);
    let mse = move |y: &Tensor4<f64>| loss_mse(y, &target);
    out.push(check("loss_mse", seed, ModelGraph::new(), &x.clone(), &mse, &mut rng)?);

    let logits = random_tensor(&mut rng, [n, 2, h, w], -4.0, 4.0);
    let labels: Vec<u8> = (0..n * h * w).map(|_| rng.random_range(0..2)).collect();
    let pos_weight = rng.random_range(1.0..4.0);
    let ce = move |y: &Tensor4<f64>| loss_softmax_ce(y, &labels, pos_weight);
    out.push(check("loss_softmax_ce", seed, ModelGraph::new(), &logits, &ce, &mut rng)?);
    Ok(out)
}

/// Both pipeline U-Nets end to end with their training losses, batch 2 at 16x16.
pub fn check_unets(seed: u64) -> Result<Vec<GradCheckReport>> {
    check_unets_at(seed, DESK_BASE_WIDTH, DESK_DEPTH)
}

/// Width and depth of the default desk-scale network.
pub const DESK_BASE_WIDTH: usize = 16;
pub const DESK_DEPTH: usize = 3;

pub fn check_unets_at(seed: u64, base_width: usize, depth: usize) -> Result<Vec<GradCheckReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_0e7);
    let mut out = Vec::new();

    let pre = build_unet::<f64>(&UNetConfig::pretrain(base_width, depth, seed))?;
    let x = random_tensor(&mut rng, [2, 3, 16, 16], 0.0, 1.0);
    let target = random_tensor(&mut rng, [2, 1, 16, 16], 0.0, 1.0);
    let mse = move |y: &Tensor4<f64>| loss_mse(y, &target);
    out.push(check("unet_3to1_mse", seed, pre.graph().clone(), &x, &mse, &mut rng)?);

    let fin = build_unet::<f64>(&UNetConfig::finetune(base_width, depth, seed))?;
    let x = random_tensor(&mut rng, [2, 4, 16, 16], 0.0, 1.0);
    let labels: Vec<u8> = (0..2 * 16 * 16).map(|_| rng.random_range(0..2)).collect();
    let ce = move |y: &Tensor4<f64>| loss_softmax_ce(y, &labels, 2.0);
    out.push(check("unet_4to2_ce", seed, fin.graph().clone(), &x, &ce, &mut rng)?);
    Ok(out)
}

/// Op-level and U-Net checks over `seeds` consecutive seeds starting at `first_seed`.
pub fn run_suite(first_seed: u64, seeds: u64) -> Result<Vec<GradCheckReport>> {
    let mut all = Vec::new();
    for s in first_seed..first_seed + seeds {
        all.extend(check_ops(s)?);
        all.extend(check_unets(s)?);
    }
    Ok(all)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ops_pass_one_seed() {
        for r in check_ops(123).unwrap() {
            assert!(r.passed(), "{r:?}");
            assert!(r.entries_checked > 0);
        }
    }

    #[test]
    fn detects_a_wrong_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_tensor(&mut rng, [1, 1, 3, 3], -1.0, 1.0);
        // reported gradient is twice the true one
        let bad = |y: &Tensor4<f64>| {
            let v = y.data().iter().map(|a| a * a).sum::<f64>();
            let mut g = y.clone();
            g.data_mut().iter_mut().for_each(|a| *a *= 4.0);
            Ok((v, g))
        };
        let r = check("bad", 1, ModelGraph::new(), &x, &bad, &mut rng).unwrap();
        assert!(!r.passed());
    }
}
