use std::collections::HashMap;

use crate::matrix::Matrix;

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Which training stage owns a parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Stage {
    /// Only used while pre-training (decoders, mask tokens); dropped afterwards.
    PretrainOnly,
    /// Learned during pre-training and carried into fine-tuning.
    Shared,
    /// Created fresh for fine-tuning.
    FinetuneOnly,
}

impl Stage {
    pub fn tag(self) -> u8 {
        match self {
            Stage::PretrainOnly => 0,
            Stage::Shared => 1,
            Stage::FinetuneOnly => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Stage::PretrainOnly),
            1 => Some(Stage::Shared),
            2 => Some(Stage::FinetuneOnly),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Stage::PretrainOnly => "pretrain_only",
            Stage::Shared => "shared",
            Stage::FinetuneOnly => "finetune_only",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub value: Matrix,
    pub stage: Stage,
}

/// Named parameters in insertion order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    index: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Panics on a duplicate name; parameter names are fixed by model code.
    pub fn add(&mut self, name: impl Into<String>, value: Matrix, stage: Stage) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter name {name}");
        let id = ParamId(self.entries.len());
        self.index.insert(name.clone(), id);
        self.entries.push(ParamEntry { name, value, stage });
        id
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn value(&self, id: ParamId) -> &Matrix {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.entries[id.0].value
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    /// Total number of scalars.
    pub fn numel(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }
}
