use std::collections::HashMap;

use rand::Rng;

use super::graph::Gradients;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Index of a parameter inside its [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A named, possibly frozen, trainable tensor with its gradient accumulator.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Vec<f64>,
    pub frozen: bool,
}

/// Ordered collection of uniquely named parameters.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor, frozen: bool) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::DuplicateParameter(name));
        }
        let id = self.params.len();
        self.index.insert(name.clone(), id);
        self.params.push(Parameter {
            grad: vec![0.0; value.len()],
            name,
            value,
            frozen,
        });
        Ok(ParamId(id))
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.index
            .get(name)
            .map(|&i| ParamId(i))
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    /// Looks up `name` and checks it has the expected shape.
    pub fn id_with_shape(&self, name: &str, shape: &[usize]) -> Result<ParamId> {
        let id = self.id(name)?;
        let actual = self.params[id.0].value.shape();
        if actual != shape {
            return Err(Error::Dimension(format!(
                "parameter `{name}` has shape {actual:?}, expected {shape:?}"
            )));
        }
        Ok(id)
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    /// Sets the frozen flag on every parameter whose name starts with `prefix`.
    pub fn set_frozen_prefix(&mut self, prefix: &str, frozen: bool) {
        for p in self.params.iter_mut().filter(|p| p.name.starts_with(prefix)) {
            p.frozen = frozen;
        }
    }

    /// Number of scalar values that the optimizer may update.
    pub fn trainable_count(&self) -> usize {
        self.params
            .iter()
            .filter(|p| !p.frozen)
            .map(|p| p.value.len())
            .sum()
    }

    pub fn total_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    /// Adds `scale · grad` for every trainable parameter reached by `grads`.
    pub fn accumulate(&mut self, grads: &Gradients, scale: f64) {
        for (id, g) in grads.params() {
            let p = &mut self.params[id.0];
            if p.frozen {
                continue;
            }
            for (acc, v) in p.grad.iter_mut().zip(g) {
                *acc += scale * v;
            }
        }
    }

    /// Copies every parameter whose name starts with `prefix` from `other`,
    /// optionally dropping those that start with any of `skip`.
    pub fn extend_from(&mut self, other: &ParamStore, skip: &[&str]) -> Result<()> {
        for p in &other.params {
            if skip.iter().any(|s| p.name.starts_with(s)) {
                continue;
            }
            self.add(p.name.clone(), p.value.clone(), p.frozen)?;
        }
        Ok(())
    }

    /// Overwrites values with those from a snapshot of identical layout.
    pub fn load_values(&mut self, snapshot: &[Tensor]) {
        for (p, v) in self.params.iter_mut().zip(snapshot) {
            p.value = v.clone();
        }
    }

    pub fn snapshot(&self) -> Vec<Tensor> {
        self.params.iter().map(|p| p.value.clone()).collect()
    }
}

/// Glorot/Xavier uniform sample in `[-limit, limit]`, `limit = sqrt(6/(fan_in+fan_out))`.
pub fn glorot_uniform<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-limit..=limit)).collect();
    Tensor::new(shape.to_vec(), data).expect("glorot shape")
}

/// Uniform in `±√(6 / fan_in)`, which keeps activation scale through ReLU stacks.
pub fn he_uniform<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor {
    let limit = (6.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-limit..=limit)).collect();
    Tensor::new(shape.to_vec(), data).expect("he shape")
}

/// Parameter pair of a fully connected layer `out = W·x + b`.
#[derive(Debug, Clone, Copy)]
pub struct DenseIds {
    pub weights: ParamId,
    pub bias: ParamId,
    pub inputs: usize,
    pub outputs: usize,
}

impl DenseIds {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        inputs: usize,
        outputs: usize,
        frozen: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let weights = store.add(
            format!("{name}.weights"),
            glorot_uniform(&[outputs, inputs], inputs, outputs, rng),
            frozen,
        )?;
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[outputs]), frozen)?;
        Ok(DenseIds {
            weights,
            bias,
            inputs,
            outputs,
        })
    }

    pub fn bind(store: &ParamStore, name: &str, inputs: usize, outputs: usize) -> Result<Self> {
        Ok(DenseIds {
            weights: store.id_with_shape(&format!("{name}.weights"), &[outputs, inputs])?,
            bias: store.id_with_shape(&format!("{name}.bias"), &[outputs])?,
            inputs,
            outputs,
        })
    }
}

/// Parameter pair of a convolution: kernels `[c_out, c_in, k...]` and bias `[c_out]`.
#[derive(Debug, Clone, Copy)]
pub struct ConvIds {
    pub kernels: ParamId,
    pub bias: ParamId,
}

impl ConvIds {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        kernel_shape: &[usize],
        frozen: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let receptive: usize = kernel_shape[2..].iter().product();
        let fan_in = kernel_shape[1] * receptive;
        let fan_out = kernel_shape[0] * receptive;
        let kernels = store.add(
            format!("{name}.kernels"),
            glorot_uniform(kernel_shape, fan_in, fan_out, rng),
            frozen,
        )?;
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[kernel_shape[0]]), frozen)?;
        Ok(ConvIds { kernels, bias })
    }

    pub fn bind(store: &ParamStore, name: &str, kernel_shape: &[usize]) -> Result<Self> {
        Ok(ConvIds {
            kernels: store.id_with_shape(&format!("{name}.kernels"), kernel_shape)?,
            bias: store.id_with_shape(&format!("{name}.bias"), &[kernel_shape[0]])?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn names_are_unique() {
        let mut s = ParamStore::new();
        s.add("a", Tensor::scalar(1.0), false).unwrap();
        assert!(matches!(
            s.add("a", Tensor::scalar(2.0), false),
            Err(Error::DuplicateParameter(_))
        ));
    }

    #[test]
    fn glorot_respects_limit() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = glorot_uniform(&[40, 60], 60, 40, &mut rng);
        let limit = (6.0f64 / 100.0).sqrt();
        assert!(t.data().iter().all(|v| v.abs() <= limit));
        let mean = t.data().iter().sum::<f64>() / t.len() as f64;
        assert!(mean.abs() < 0.02);
    }

    #[test]
    fn bind_checks_shape() {
        let mut s = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        DenseIds::init(&mut s, "fc", 3, 2, false, &mut rng).unwrap();
        assert!(DenseIds::bind(&s, "fc", 3, 2).is_ok());
        assert!(matches!(DenseIds::bind(&s, "fc", 4, 2), Err(Error::Dimension(_))));
        assert!(matches!(DenseIds::bind(&s, "nope", 3, 2), Err(Error::UnknownParameter(_))));
    }
}
