//! Named parameter storage shared by all modules.

use crate::autodiff::{Tape, Tensor, Var};

/// Training group of a parameter. Linear parameters (depth 0) train from
/// the first iteration; ladder parameters at depth `k >= 1` are subject to
/// the dyadic schedule.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamGroup {
    Linear,
    LadderDepth(usize),
}

impl ParamGroup {
    pub fn depth(self) -> usize {
        match self {
            ParamGroup::Linear => 0,
            ParamGroup::LadderDepth(k) => k,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }

    #[cfg(test)]
    pub(crate) fn from_index(i: usize) -> Self {
        Self(i)
    }
}

#[derive(Clone, Debug)]
pub struct ParamInfo {
    pub name: String,
    pub group: ParamGroup,
    /// Entries that actually exist. Masked storage (e.g. an upper
    /// triangular matrix) has fewer live entries than its tensor length.
    pub live: usize,
    pub decay: bool,
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    info: Vec<ParamInfo>,
    values: Vec<Tensor>,
    masks: Vec<Option<Vec<bool>>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter. Names must be unique.
    pub fn add(&mut self, name: impl Into<String>, group: ParamGroup, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(self.find(&name).is_none(), "duplicate parameter {name}");
        let decay = value.ndim() >= 2;
        self.info.push(ParamInfo {
            name,
            group,
            live: value.len(),
            decay,
        });
        self.values.push(value);
        self.masks.push(None);
        ParamId(self.values.len() - 1)
    }

    /// Registers a parameter whose entries outside `mask` are structurally
    /// zero. Masked-out entries are zeroed now and never updated.
    pub fn add_masked(&mut self, name: impl Into<String>, group: ParamGroup, mut value: Tensor, mask: Vec<bool>) -> ParamId {
        assert_eq!(mask.len(), value.len());
        for (v, &m) in value.data_mut().iter_mut().zip(&mask) {
            if !m {
                *v = 0.0;
            }
        }
        let id = self.add(name, group, value);
        self.info[id.0].live = mask.iter().filter(|&&m| m).count();
        self.masks[id.0] = Some(mask);
        id
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.info.iter().position(|i| i.name == name).map(ParamId)
    }

    pub fn info(&self, id: ParamId) -> &ParamInfo {
        &self.info[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    /// Mutable access. Callers must keep masked entries at zero; use
    /// [`ParamStore::set`] when in doubt.
    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn set(&mut self, id: ParamId, mut value: Tensor) {
        assert_eq!(value.shape(), self.values[id.0].shape(), "{}", self.info[id.0].name);
        if let Some(mask) = &self.masks[id.0] {
            for (v, &m) in value.data_mut().iter_mut().zip(mask) {
                if !m {
                    *v = 0.0;
                }
            }
        }
        self.values[id.0] = value;
    }

    pub fn mask(&self, id: ParamId) -> Option<&[bool]> {
        self.masks[id.0].as_deref()
    }

    /// Number of live scalar parameters.
    pub fn count(&self) -> usize {
        self.info.iter().map(|i| i.live).sum()
    }

    /// Puts every parameter on `tape`. Parameters for which `trainable`
    /// returns false become constants.
    pub fn bind<'t>(&self, tape: &'t Tape, trainable: impl Fn(ParamId) -> bool) -> Bound<'t> {
        let vars = self
            .ids()
            .map(|id| {
                let v = self.values[id.0].clone();
                if trainable(id) {
                    tape.leaf(v)
                } else {
                    tape.constant(v)
                }
            })
            .collect();
        Bound { vars }
    }

    pub fn bind_all<'t>(&self, tape: &'t Tape) -> Bound<'t> {
        self.bind(tape, |_| true)
    }
}

/// Parameters placed on a tape, in store order.
pub struct Bound<'t> {
    vars: Vec<Var<'t>>,
}

impl<'t> Bound<'t> {
    pub fn var(&self, id: ParamId) -> Var<'t> {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var<'t>] {
        &self.vars
    }
}
