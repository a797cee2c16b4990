use rand_distr::{Distribution, StandardNormal};

use super::config::GanArch;
use crate::error::{Error, Result};
use crate::nn::{Activation, DenseNet, Grads, Module, Trace};
use crate::normalization::NormStats;
use crate::rng::Rng;

/// Conditional generator.
///
/// The delay and the normalized resistance are embedded by separate
/// processors; the combined processor maps both embeddings plus a Gaussian
/// latent to a normalized difference, which is scaled back by `sigma_Dbar`
/// and added to the input resistance.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub delay_net: DenseNet,
    pub resistance_net: DenseNet,
    pub combined: DenseNet,
    pub z_dim: usize,
}

/// Everything the reverse pass of one generator call needs.
#[derive(Debug, Clone)]
pub struct GenTrace {
    delay: Trace,
    resistance: Trace,
    combined: Trace,
}

impl Module for Generator {
    fn nets(&self) -> Vec<&DenseNet> {
        vec![&self.delay_net, &self.resistance_net, &self.combined]
    }

    fn nets_mut(&mut self) -> Vec<&mut DenseNet> {
        vec![&mut self.delay_net, &mut self.resistance_net, &mut self.combined]
    }
}

pub(crate) fn widths(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut w = Vec::with_capacity(hidden.len() + 2);
    w.push(input);
    w.extend_from_slice(hidden);
    w.push(output);
    w
}

fn embedder(hidden: &[usize]) -> Result<DenseNet> {
    // the last hidden width is the embedding, so every layer is ReLU
    let (out, inner) = hidden
        .split_last()
        .ok_or_else(|| Error::invalid("embedding processor needs at least one layer"))?;
    DenseNet::mlp(&widths(1, inner, *out), Activation::Relu, Activation::Relu)
}

impl Generator {
    /// Zero-parameter generator with the given architecture.
    pub fn zeros(arch: &GanArch, z_dim: usize) -> Result<Self> {
        let embed = *arch
            .embed_hidden
            .last()
            .ok_or_else(|| Error::invalid("embed_hidden must not be empty"))?;
        Ok(Self {
            delay_net: embedder(&arch.embed_hidden)?,
            resistance_net: embedder(&arch.embed_hidden)?,
            combined: DenseNet::mlp(
                &widths(2 * embed + z_dim, &arch.gen_hidden, 1),
                Activation::Relu,
                Activation::Identity,
            )?,
            z_dim,
        })
    }

    pub fn new(arch: &GanArch, z_dim: usize, zero_head: bool, rng: &mut Rng) -> Result<Self> {
        let mut g = Self::zeros(arch, z_dim)?;
        g.delay_net.init(rng);
        g.resistance_net.init(rng);
        g.combined.init(rng);
        if zero_head {
            g.combined.zero_last_layer();
        }
        Ok(g)
    }

    /// Draw a standard-normal latent vector.
    pub fn draw_latent(&self, rng: &mut Rng) -> Vec<f64> {
        (0..self.z_dim).map(|_| StandardNormal.sample(rng)).collect()
    }

    fn check_latent(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.z_dim {
            return Err(Error::DimensionMismatch {
                expected: self.z_dim,
                actual: z.len(),
            });
        }
        Ok(())
    }

    fn combined_input(&self, e_d: &[f64], e_r: &[f64], z: &[f64]) -> Vec<f64> {
        let mut x = Vec::with_capacity(e_d.len() + e_r.len() + z.len());
        x.extend_from_slice(e_d);
        x.extend_from_slice(e_r);
        x.extend_from_slice(z);
        x
    }

    /// Normalized difference predicted for `(rbar_init, delay, z)`.
    pub fn head(&self, rbar_init: f64, delay: f64, z: &[f64]) -> Result<f64> {
        self.check_latent(z)?;
        let e_d = self.delay_net.forward(&[delay])?;
        let e_r = self.resistance_net.forward(&[rbar_init])?;
        Ok(self.combined.forward(&self.combined_input(&e_d, &e_r, z))?[0])
    }

    /// Normalized resistance after `delay` seconds.
    pub fn sample(&self, rbar_init: f64, delay: f64, z: &[f64], stats: &NormStats) -> Result<f64> {
        Ok(stats.denormalize_diff(self.head(rbar_init, delay, z)?, rbar_init))
    }

    pub fn sample_traced(
        &self,
        rbar_init: f64,
        delay: f64,
        z: &[f64],
        stats: &NormStats,
    ) -> Result<(f64, GenTrace)> {
        self.check_latent(z)?;
        let delay_t = self.delay_net.forward_traced(&[delay])?;
        let resistance_t = self.resistance_net.forward_traced(&[rbar_init])?;
        let x = self.combined_input(delay_t.output(), resistance_t.output(), z);
        let combined_t = self.combined.forward_traced(&x)?;
        let out = stats.denormalize_diff(combined_t.output()[0], rbar_init);
        Ok((
            out,
            GenTrace {
                delay: delay_t,
                resistance: resistance_t,
                combined: combined_t,
            },
        ))
    }

    /// Accumulate parameter gradients for `upstream = dL/d rbar_final` and
    /// return `dL/d rbar_init` (residual path plus the resistance processor).
    pub fn backward(&self, trace: &GenTrace, upstream: f64, stats: &NormStats, grads: &mut Grads) -> Result<f64> {
        let [g_delay, g_res, g_comb] = &mut grads.0[..] else {
            return Err(Error::invalid("generator gradients need three buffers"));
        };
        let d_head = upstream * stats.sigma_dbar;
        let d_x = self.combined.backward(&trace.combined, &[d_head], g_comb)?;
        let embed = self.delay_net.output_dim();
        self.delay_net.backward(&trace.delay, &d_x[..embed], g_delay)?;
        let d_r = self
            .resistance_net
            .backward(&trace.resistance, &d_x[embed..2 * embed], g_res)?;
        Ok(upstream + d_r[0])
    }

    /// Latent gradient is not needed anywhere, so only the rbar path is exposed.
    pub fn input_gradient(&self, trace: &GenTrace, upstream: f64, stats: &NormStats) -> Result<f64> {
        let d_head = upstream * stats.sigma_dbar;
        let d_x = self.combined.backward_input(&trace.combined, &[d_head])?;
        let embed = self.delay_net.output_dim();
        let d_r = self
            .resistance_net
            .backward_input(&trace.resistance, &d_x[embed..2 * embed])?;
        Ok(upstream + d_r[0])
    }
}

/// A closed-loop rollout kept for backpropagation through time.
#[derive(Debug, Clone)]
pub struct Rollout {
    /// Normalized resistances, starting with the conditioning value.
    pub rbar: Vec<f64>,
    pub delay: f64,
    traces: Vec<GenTrace>,
}

impl Rollout {
    /// Feed each output back as the next input, one latent per call.
    pub fn run(g: &Generator, rbar0: f64, delay: f64, latents: &[Vec<f64>], stats: &NormStats) -> Result<Self> {
        let mut rbar = Vec::with_capacity(latents.len() + 1);
        let mut traces = Vec::with_capacity(latents.len());
        rbar.push(rbar0);
        for z in latents {
            let prev = *rbar.last().expect("non-empty");
            let (next, trace) = g.sample_traced(prev, delay, z, stats)?;
            rbar.push(next);
            traces.push(trace);
        }
        Ok(Self { rbar, delay, traces })
    }

    pub fn last(&self) -> f64 {
        *self.rbar.last().expect("non-empty")
    }

    /// Backpropagate `dL/d rbar[k]` for every element through the chain.
    /// Returns the gradient reaching the conditioning value.
    pub fn backward(&self, g: &Generator, grad_rbar: &[f64], stats: &NormStats, grads: &mut Grads) -> Result<f64> {
        if grad_rbar.len() != self.rbar.len() {
            return Err(Error::DimensionMismatch {
                expected: self.rbar.len(),
                actual: grad_rbar.len(),
            });
        }
        let mut carry = 0.0;
        for k in (1..self.rbar.len()).rev() {
            carry = g.backward(&self.traces[k - 1], grad_rbar[k] + carry, stats, grads)?;
        }
        Ok(carry + grad_rbar[0])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn stats() -> NormStats {
        NormStats {
            mu_r: 12.5,
            sigma_r: 1.3,
            mu_dbar: 0.0,
            sigma_dbar: 0.05,
        }
    }

    fn small_arch() -> GanArch {
        GanArch {
            embed_hidden: vec![5, 4],
            gen_hidden: vec![6, 6],
            disc_proc_hidden: vec![4],
            disc_comb_hidden: vec![4],
        }
    }

    #[test]
    fn zero_head_is_residual_identity() {
        let mut r = rng::from_seed(1);
        let g = Generator::new(&GanArch::default(), 20, true, &mut r).unwrap();
        for (rbar, d) in [(-1.3, 1.0), (0.0, 37.5), (2.2, 500.0)] {
            let z = g.draw_latent(&mut r);
            assert_eq!(g.sample(rbar, d, &z, &stats()).unwrap(), rbar);
        }
    }

    #[test]
    fn deterministic_for_fixed_inputs() {
        let mut r = rng::from_seed(2);
        let g = Generator::new(&small_arch(), 3, false, &mut r).unwrap();
        let z = [0.1, -0.2, 0.3];
        let a = g.sample(0.4, 10.0, &z, &stats()).unwrap();
        let b = g.sample(0.4, 10.0, &z, &stats()).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        assert!(g.sample(0.4, 10.0, &[0.0], &stats()).is_err());
    }

    #[test]
    fn input_gradient_matches_finite_difference() {
        let mut r = rng::from_seed(3);
        let g = Generator::new(&small_arch(), 3, false, &mut r).unwrap();
        let s = stats();
        let z = [0.5, -1.0, 0.25];
        for rbar in [-0.8, 0.1, 1.7] {
            let (_, trace) = g.sample_traced(rbar, 7.0, &z, &s).unwrap();
            let analytic = g.input_gradient(&trace, 1.0, &s).unwrap();
            let mut grads = Grads::zeros_like(&g);
            let full = g.backward(&trace, 1.0, &s, &mut grads).unwrap();
            assert_eq!(analytic, full);
            let h = 1e-6;
            let fd = (g.sample(rbar + h, 7.0, &z, &s).unwrap() - g.sample(rbar - h, 7.0, &z, &s).unwrap())
                / (2.0 * h);
            assert!((fd - analytic).abs() <= 1e-6 * fd.abs().max(1.0), "{fd} vs {analytic}");
        }
    }

    #[test]
    fn rollout_feeds_outputs_back() {
        let mut r = rng::from_seed(4);
        let g = Generator::new(&small_arch(), 3, false, &mut r).unwrap();
        let s = stats();
        let zs: Vec<Vec<f64>> = (0..4).map(|_| g.draw_latent(&mut r)).collect();
        let roll = Rollout::run(&g, 0.2, 3.0, &zs, &s).unwrap();
        let mut x = 0.2;
        for (k, z) in zs.iter().enumerate() {
            x = g.sample(x, 3.0, z, &s).unwrap();
            assert_eq!(x, roll.rbar[k + 1]);
        }
    }
}
