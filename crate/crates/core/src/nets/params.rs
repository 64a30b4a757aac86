use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use sha2::{Digest, Sha256};

use crate::autodiff::{Gradients, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Parameter groups. The first four form the 3D pathway, the last two the RL
/// heads; the encoder is shared by both.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Group {
    Encoder,
    Lift,
    Decoder,
    PoseNet,
    Actor,
    Critic,
}

impl Group {
    pub const ALL: [Group; 6] = [
        Group::Encoder,
        Group::Lift,
        Group::Decoder,
        Group::PoseNet,
        Group::Actor,
        Group::Critic,
    ];

    pub fn prefix(self) -> &'static str {
        match self {
            Group::Encoder => "encoder",
            Group::Lift => "lift",
            Group::Decoder => "decoder",
            Group::PoseNet => "posenet",
            Group::Actor => "actor",
            Group::Critic => "critic",
        }
    }

    /// Group of a dotted parameter path such as `decoder.out.w`.
    pub fn of(name: &str) -> Option<Group> {
        let head = name.split('.').next()?;
        Group::ALL.into_iter().find(|g| g.prefix() == head)
    }

    pub fn is_3d(self) -> bool {
        matches!(self, Group::Encoder | Group::Lift | Group::Decoder | Group::PoseNet)
    }

    pub fn is_rl_head(self) -> bool {
        matches!(self, Group::Actor | Group::Critic)
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.prefix())
    }
}

/// Named parameter arrays, ordered by name.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    tensors: BTreeMap<String, Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if Group::of(&name).is_none() {
            return Err(Error::Precondition(format!("parameter {name:?} has no known group prefix")));
        }
        self.tensors.insert(name, value);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.values().all(Tensor::is_finite)
    }

    /// Parameters whose group satisfies `keep`.
    pub fn subset(&self, keep: impl Fn(Group) -> bool) -> ParamSet {
        let tensors = self
            .tensors
            .iter()
            .filter(|(k, _)| Group::of(k).is_some_and(&keep))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        ParamSet { tensors }
    }

    /// Overwrites every parameter that also exists in `other`.
    pub fn overwrite_from(&mut self, other: &ParamSet) -> Result<()> {
        for (name, value) in &other.tensors {
            match self.tensors.get_mut(name) {
                Some(dst) if dst.shape() == value.shape() => *dst = value.clone(),
                Some(dst) => return Err(Error::shape(dst.shape().to_vec(), value.shape().to_vec())),
                None => return Err(Error::Precondition(format!("unknown parameter {name:?}"))),
            }
        }
        Ok(())
    }

    /// SHA-256 over names, shapes and raw values.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for (name, t) in &self.tensors {
            h.update(name.as_bytes());
            for d in t.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            for v in t.data() {
                h.update(v.to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Names and shapes, used to check checkpoint compatibility.
    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        self.tensors.iter().map(|(k, v)| (k.clone(), v.shape().to_vec())).collect()
    }

    /// Registers a weight initialized uniformly in `±1/sqrt(fan_in)`.
    pub(crate) fn init_uniform(&mut self, rng: &mut impl Rng, name: &str, shape: &[usize], fan_in: usize) {
        let bound = 1.0 / (fan_in as f32).sqrt();
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
        self.tensors.insert(name.to_string(), Tensor::from_vec(shape, data).expect("consistent shape"));
    }

    pub(crate) fn init_const(&mut self, name: &str, shape: &[usize], value: f32) {
        self.tensors.insert(name.to_string(), Tensor::full(shape, value));
    }
}

/// Parameters mapped onto tape leaves for one forward pass.
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    /// Parameters in groups where `trainable` holds become gradient-requiring
    /// leaves; all others enter as constants.
    pub fn new(tape: &mut Tape, params: &ParamSet, trainable: impl Fn(Group) -> bool) -> Self {
        let vars = params
            .iter()
            .map(|(name, t)| {
                let train = Group::of(name).is_some_and(&trainable);
                (name.to_string(), tape.leaf(t.clone(), train))
            })
            .collect();
        Self { vars }
    }

    /// Binds only the named groups; useful when a pass touches a few heads.
    pub fn groups(tape: &mut Tape, params: &ParamSet, include: &[Group], trainable: impl Fn(Group) -> bool) -> Self {
        let vars = params
            .iter()
            .filter(|(name, _)| Group::of(name).is_some_and(|g| include.contains(&g)))
            .map(|(name, t)| {
                let train = Group::of(name).is_some_and(&trainable);
                (name.to_string(), tape.leaf(t.clone(), train))
            })
            .collect();
        Self { vars }
    }

    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Precondition(format!("parameter {name:?} not bound")))
    }

    /// Collects the gradients of every bound parameter that received one.
    pub fn gradients(&self, grads: &mut Gradients) -> BTreeMap<String, Tensor> {
        self.vars
            .iter()
            .filter_map(|(name, v)| grads.take(*v).map(|g| (name.clone(), g)))
            .collect()
    }
}
