use super::config::GanArch;
use super::generator::widths;
use crate::error::{Error, Result};
use crate::nn::{Activation, DenseNet, Grads, Module, Trace};
use crate::normalization::NormStats;
use crate::rng::Rng;

/// Packed sequence discriminator.
///
/// Each input holds `n_pack` sequences of `seq_len` normalized resistances.
/// The condition processor sees the first resistance and the delay of every
/// sequence; the sequence processor sees the remaining resistances followed
/// by the normalized differences between consecutive elements.
#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    pub condition: DenseNet,
    pub sequence: DenseNet,
    pub combined: DenseNet,
    pub n_pack: usize,
    pub seq_len: usize,
}

#[derive(Debug, Clone)]
pub struct DiscTrace {
    condition: Trace,
    sequence: Trace,
    combined: Trace,
    logit: f64,
}

impl DiscTrace {
    /// Pre-sigmoid output of the traced call.
    pub fn logit(&self) -> f64 {
        self.logit
    }
}

/// Flattened discriminator input for one pack.
#[derive(Debug, Clone, PartialEq)]
pub struct PackInput {
    pub condition: Vec<f64>,
    pub sequence: Vec<f64>,
}

impl Module for Discriminator {
    fn nets(&self) -> Vec<&DenseNet> {
        vec![&self.condition, &self.sequence, &self.combined]
    }

    fn nets_mut(&mut self) -> Vec<&mut DenseNet> {
        vec![&mut self.condition, &mut self.sequence, &mut self.combined]
    }
}

fn processor(input: usize, hidden: &[usize]) -> Result<DenseNet> {
    let (out, inner) = hidden
        .split_last()
        .ok_or_else(|| Error::invalid("processor needs at least one layer"))?;
    DenseNet::mlp(&widths(input, inner, *out), Activation::Relu, Activation::Relu)
}

impl Discriminator {
    pub fn zeros(arch: &GanArch, n_pack: usize, seq_len: usize) -> Result<Self> {
        if n_pack == 0 || seq_len < 2 {
            return Err(Error::invalid("discriminator needs n_pack >= 1 and seq_len >= 2"));
        }
        let condition = processor(2 * n_pack, &arch.disc_proc_hidden)?;
        let sequence = processor(2 * (seq_len - 1) * n_pack, &arch.disc_proc_hidden)?;
        let joint = condition.output_dim() + sequence.output_dim();
        let combined = DenseNet::mlp(
            &widths(joint, &arch.disc_comb_hidden, 1),
            Activation::Relu,
            Activation::Sigmoid,
        )?;
        Ok(Self {
            condition,
            sequence,
            combined,
            n_pack,
            seq_len,
        })
    }

    pub fn new(arch: &GanArch, n_pack: usize, seq_len: usize, rng: &mut Rng) -> Result<Self> {
        let mut d = Self::zeros(arch, n_pack, seq_len)?;
        d.condition.init(rng);
        d.sequence.init(rng);
        d.combined.init(rng);
        Ok(d)
    }

    /// Build the input for `n_pack` sequences of normalized resistances.
    pub fn pack(&self, seqs: &[&[f64]], delays: &[f64], stats: &NormStats) -> Result<PackInput> {
        if seqs.len() != self.n_pack || delays.len() != self.n_pack {
            return Err(Error::DimensionMismatch {
                expected: self.n_pack,
                actual: seqs.len().min(delays.len()),
            });
        }
        let tail = self.seq_len - 1;
        let mut condition = Vec::with_capacity(2 * self.n_pack);
        let mut sequence = Vec::with_capacity(2 * tail * self.n_pack);
        for (seq, &d) in seqs.iter().zip(delays) {
            if seq.len() != self.seq_len {
                return Err(Error::DimensionMismatch {
                    expected: self.seq_len,
                    actual: seq.len(),
                });
            }
            condition.push(seq[0]);
            condition.push(d);
            sequence.extend_from_slice(&seq[1..]);
            sequence.extend(seq.windows(2).map(|w| stats.normalize_diff(w[1], w[0])));
        }
        Ok(PackInput { condition, sequence })
    }

    fn joint(&self, c: &[f64], s: &[f64]) -> Vec<f64> {
        let mut x = Vec::with_capacity(c.len() + s.len());
        x.extend_from_slice(c);
        x.extend_from_slice(s);
        x
    }

    /// Probability that every sequence in the pack is real.
    pub fn score(&self, input: &PackInput) -> Result<f64> {
        let c = self.condition.forward(&input.condition)?;
        let s = self.sequence.forward(&input.sequence)?;
        Ok(self.combined.forward(&self.joint(&c, &s))?[0])
    }

    pub fn score_traced(&self, input: &PackInput) -> Result<(f64, DiscTrace)> {
        let condition = self.condition.forward_traced(&input.condition)?;
        let sequence = self.sequence.forward_traced(&input.sequence)?;
        let combined = self
            .combined
            .forward_traced(&self.joint(condition.output(), sequence.output()))?;
        let p = combined.output()[0];
        let logit = self.combined.last_preactivation(&combined)[0];
        Ok((
            p,
            DiscTrace {
                condition,
                sequence,
                combined,
                logit,
            },
        ))
    }

    /// Accumulate parameter gradients for `upstream = dL/dz`, where `z` is
    /// the logit of the score.
    pub fn backward(&self, trace: &DiscTrace, upstream: f64, grads: &mut Grads) -> Result<()> {
        let [g_cond, g_seq, g_comb] = &mut grads.0[..] else {
            return Err(Error::invalid("discriminator gradients need three buffers"));
        };
        let d_joint = self.combined.backward_from_logits(&trace.combined, &[upstream], g_comb)?;
        let split = self.condition.output_dim();
        self.condition.backward(&trace.condition, &d_joint[..split], g_cond)?;
        self.sequence.backward(&trace.sequence, &d_joint[split..], g_seq)?;
        Ok(())
    }

    /// Gradient with respect to the packed input for `upstream = dL/dz`.
    pub fn input_gradient(&self, trace: &DiscTrace, upstream: f64) -> Result<PackInput> {
        let d_joint = self.combined.backward_input_from_logits(&trace.combined, &[upstream])?;
        let split = self.condition.output_dim();
        Ok(PackInput {
            condition: self.condition.backward_input(&trace.condition, &d_joint[..split])?,
            sequence: self.sequence.backward_input(&trace.sequence, &d_joint[split..])?,
        })
    }

    /// Map a packed-input gradient back onto each sequence's resistances.
    pub fn unpack_gradient(&self, grad: &PackInput, stats: &NormStats) -> Vec<Vec<f64>> {
        let tail = self.seq_len - 1;
        (0..self.n_pack)
            .map(|j| {
                let mut g = vec![0.0; self.seq_len];
                g[0] = grad.condition[2 * j];
                let block = &grad.sequence[2 * tail * j..2 * tail * (j + 1)];
                let (res, diff) = block.split_at(tail);
                for k in 0..tail {
                    g[k + 1] += res[k];
                    let dd = diff[k] / stats.sigma_dbar;
                    g[k + 1] += dd;
                    g[k] -= dd;
                }
                g
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn stats() -> NormStats {
        NormStats {
            mu_r: 12.0,
            sigma_r: 1.5,
            mu_dbar: 0.0,
            sigma_dbar: 0.02,
        }
    }

    fn small() -> Discriminator {
        let arch = GanArch {
            embed_hidden: vec![4],
            gen_hidden: vec![4],
            disc_proc_hidden: vec![6, 5],
            disc_comb_hidden: vec![7],
        };
        Discriminator::new(&arch, 2, 4, &mut rng::from_seed(11)).unwrap()
    }

    #[test]
    fn output_is_a_probability() {
        let d = small();
        let s = stats();
        let a = [0.1, 0.2, 0.25, 0.3];
        let b = [-1.0, -0.9, -0.95, -0.7];
        let p = d.score(&d.pack(&[&a, &b], &[3.0, 3.0], &s).unwrap()).unwrap();
        assert!(p > 0.0 && p < 1.0);
        let (_, trace) = d.score_traced(&d.pack(&[&a, &b], &[3.0, 3.0], &s).unwrap()).unwrap();
        assert!((crate::nn::sigmoid(trace.logit()) - p).abs() < 1e-15);
    }

    #[test]
    fn packing_order_matters() {
        let d = small();
        let s = stats();
        let a = [0.1, 0.2, 0.25, 0.3];
        let b = [-1.0, -0.9, -0.95, -0.7];
        let ab = d.pack(&[&a, &b], &[3.0, 3.0], &s).unwrap();
        let ba = d.pack(&[&b, &a], &[3.0, 3.0], &s).unwrap();
        assert_ne!(ab, ba);
        assert_eq!(ab.sequence.len(), 12);
        assert!((ab.sequence[3] - (0.1 / 0.02)).abs() < 1e-9);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let d = small();
        let a = [0.1, 0.2, 0.25];
        assert!(d.pack(&[&a, &a], &[1.0, 1.0], &stats()).is_err());
        assert!(d.pack(&[&a], &[1.0], &stats()).is_err());
    }

    #[test]
    fn resistance_gradient_matches_finite_difference() {
        let d = small();
        let s = stats();
        let a = vec![0.1, 0.2, 0.25, 0.3];
        let b = vec![-1.0, -0.9, -0.95, -0.7];
        let score = |a: &[f64], b: &[f64]| {
            let p = d.score(&d.pack(&[a, b], &[3.0, 7.0], &s).unwrap()).unwrap();
            (p / (1.0 - p)).ln()
        };
        let (_, trace) = d.score_traced(&d.pack(&[&a, &b], &[3.0, 7.0], &s).unwrap()).unwrap();
        let g = d.unpack_gradient(&d.input_gradient(&trace, 1.0).unwrap(), &s);
        let h = 1e-7;
        for k in 0..4 {
            let (mut ap, mut am) = (a.clone(), a.clone());
            ap[k] += h;
            am[k] -= h;
            let fd = (score(&ap, &b) - score(&am, &b)) / (2.0 * h);
            assert!((fd - g[0][k]).abs() <= 1e-5 * fd.abs().max(1e-3), "k={k} {fd} vs {}", g[0][k]);
        }
    }
}
