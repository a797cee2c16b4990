//! Small dense-network engine: forward and exact reverse passes, Adam and BCE.

mod adam;
pub mod checkpoint;
mod dense;
mod loss;
mod module;

pub use adam::Adam;
pub use checkpoint::{Checkpoint, NetRecord, CHECKPOINT_VERSION};
pub use dense::{sigmoid, Activation, DenseNet, LayerSpec, Trace};
pub use loss::{bce, bce_grad, bce_logit, bce_logit_grad, BCE_CLAMP};
pub use module::{Grads, Module, ModuleOptimizer};
