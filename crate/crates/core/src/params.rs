//! Named parameter storage, partitioned by model stage.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use repnet_autograd::{Tape, Tensor, Var};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Partition {
    FeatureEmbedding,
    TimeEmbedding,
    /// Learned calendar lookup tables.
    TemporalTable,
    Memory,
    Projection,
}

impl Partition {
    pub const ALL: [Partition; 5] = [
        Partition::FeatureEmbedding,
        Partition::TimeEmbedding,
        Partition::TemporalTable,
        Partition::Memory,
        Partition::Projection,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub partition: Partition,
    pub value: Tensor,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter. Names must be unique.
    pub fn add(&mut self, name: impl Into<String>, partition: Partition, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(self.find(&name).is_none(), "duplicate parameter name `{name}`");
        self.params.push(Param { name, partition, value });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn param(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    /// Total element count.
    pub fn count(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn count_partition(&self, partition: Partition) -> usize {
        self.params.iter().filter(|p| p.partition == partition).map(|p| p.value.numel()).sum()
    }

    pub fn nbytes(&self) -> usize {
        self.params.iter().map(|p| p.value.nbytes()).sum()
    }

    /// Puts every parameter on the tape, as trainable leaves or constants.
    pub fn bind<'t>(&self, tape: &'t Tape, trainable: bool) -> Vec<Var<'t>> {
        self.params
            .iter()
            .map(|p| if trainable { tape.leaf(p.value.clone()) } else { tape.constant(p.value.clone()) })
            .collect()
    }

    pub fn snapshot(&self) -> Vec<Tensor> {
        self.params.iter().map(|p| p.value.clone()).collect()
    }

    pub fn restore(&mut self, values: &[Tensor]) {
        assert_eq!(values.len(), self.params.len(), "restore: parameter count");
        for (p, v) in self.params.iter_mut().zip(values) {
            assert_eq!(p.value.shape(), v.shape(), "restore: shape of `{}`", p.name);
            p.value = v.clone();
        }
    }

    /// Sets every parameter to zero.
    pub fn zero_all(&mut self) {
        for p in &mut self.params {
            p.value.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

/// Seeded initializers.
pub struct Init<'a> {
    rng: &'a mut ChaCha8Rng,
}

impl<'a> Init<'a> {
    pub fn new(rng: &'a mut ChaCha8Rng) -> Self {
        Init { rng }
    }

    pub fn uniform(&mut self, shape: &[usize], bound: f64) -> Tensor {
        Tensor::from_fn(shape.to_vec(), |_| self.rng.random_range(-bound..=bound))
    }

    pub fn normal(&mut self, shape: &[usize], std: f64) -> Tensor {
        let n = Normal::new(0.0, std).unwrap();
        Tensor::from_fn(shape.to_vec(), |_| n.sample(self.rng))
    }

    /// `n × n` orthogonal matrix from Gram-Schmidt on Gaussian columns.
    pub fn orthogonal(&mut self, n: usize) -> Vec<f64> {
        loop {
            let a = self.normal(&[n, n], 1.0);
            if let Some(q) = gram_schmidt(a.data(), n) {
                return q;
            }
        }
    }
}

/// Orthonormalizes the columns of a row-major `n × n` matrix.
fn gram_schmidt(a: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut q = vec![0.0; n * n];
    for j in 0..n {
        let mut v: Vec<f64> = (0..n).map(|i| a[i * n + j]).collect();
        for k in 0..j {
            let dot: f64 = (0..n).map(|i| q[i * n + k] * v[i]).sum();
            for i in 0..n {
                v[i] -= dot * q[i * n + k];
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-8 {
            return None;
        }
        for i in 0..n {
            q[i * n + j] = v[i] / norm;
        }
    }
    Some(q)
}
