use super::{Adam, DenseNet};

/// A model made of several dense networks trained together.
pub trait Module {
    fn nets(&self) -> Vec<&DenseNet>;
    fn nets_mut(&mut self) -> Vec<&mut DenseNet>;

    fn num_params(&self) -> usize {
        self.nets().iter().map(|n| n.num_params()).sum()
    }
}

/// Gradient buffers shaped like a [`Module`], one vector per network.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads(pub Vec<Vec<f64>>);

impl Grads {
    pub fn zeros_like(m: &impl Module) -> Self {
        Grads(m.nets().iter().map(|n| vec![0.0; n.num_params()]).collect())
    }

    pub fn add_assign(&mut self, other: &Grads) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.0.iter_mut().flatten().for_each(|x| *x *= factor);
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().flatten().all(|x| x.is_finite())
    }

    /// Sum in index order so the result does not depend on how the parts were computed.
    pub fn sum_ordered(parts: Vec<Grads>, template: &impl Module) -> Grads {
        let mut total = Grads::zeros_like(template);
        for p in &parts {
            total.add_assign(p);
        }
        total
    }
}

/// One Adam state per network of a module.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ModuleOptimizer {
    pub states: Vec<Adam>,
}

impl ModuleOptimizer {
    pub fn new(m: &impl Module, lr: f64) -> Self {
        Self {
            states: m.nets().iter().map(|n| Adam::new(n.num_params(), lr)).collect(),
        }
    }

    pub fn step(&mut self, m: &mut impl Module, grads: &Grads) {
        for ((net, adam), g) in m.nets_mut().into_iter().zip(&mut self.states).zip(&grads.0) {
            adam.step(net.params_mut(), g);
        }
    }

    pub fn steps(&self) -> u64 {
        self.states.first().map_or(0, |a| a.t)
    }

    pub fn set_lr(&mut self, lr: f64) {
        for a in &mut self.states {
            a.lr = lr;
        }
    }
}
