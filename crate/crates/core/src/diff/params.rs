use std::collections::BTreeMap;

use super::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// One named tensor with its gradient buffer and Adam moments.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    pub m: Tensor,
    pub v: Tensor,
    /// Optimizer updates applied to this tensor.
    pub steps: u64,
}

/// Named parameter tensors. Cloning yields an independent snapshot.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
    index: BTreeMap<String, ParamId>,
    /// Total optimizer steps taken on the store.
    pub step: u64,
}

/// Per-parameter gradients produced by one backward pass.
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    pub(crate) grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.grads
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.as_ref().map(|g| (ParamId(i), g)))
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a tensor, or replaces the value of an existing tensor with the
    /// same name (keeping its id, resetting its moments).
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        let (r, c) = value.shape();
        if let Some(&id) = self.index.get(&name) {
            let p = &mut self.params[id.0];
            p.grad = Tensor::zeros(r, c);
            p.m = Tensor::zeros(r, c);
            p.v = Tensor::zeros(r, c);
            p.steps = 0;
            p.value = value;
            return id;
        }
        let id = ParamId(self.params.len());
        self.params.push(Param {
            name: name.clone(),
            grad: Tensor::zeros(r, c),
            m: Tensor::zeros(r, c),
            v: Tensor::zeros(r, c),
            steps: 0,
            value,
        });
        self.index.insert(name, id);
        id
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn by_name(&self, name: &str) -> Option<&Param> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn accumulate(&mut self, grads: &Gradients) {
        for (id, g) in grads.iter() {
            self.params[id.0].grad.add_assign(g);
        }
    }

    /// Reassembles a store from checkpointed parts.
    pub(crate) fn from_parts(params: Vec<Param>, step: u64) -> Self {
        let index = params
            .iter()
            .enumerate()
            .map(|(i, p)| (p.name.clone(), ParamId(i)))
            .collect();
        Self {
            params,
            index,
            step,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_grad_clears_everything() {
        let mut s = ParamStore::new();
        let a = s.insert("a", Tensor::from_vec(2, 2, vec![1.0; 4]));
        s.get_mut(a).grad = Tensor::filled(2, 2, 3.0);
        s.zero_grad();
        assert!(s.get(a).grad.data.iter().all(|&g| g == 0.0));
        assert_eq!(s.get(a).grad.shape(), s.get(a).value.shape());
    }

    #[test]
    fn reinsert_keeps_id() {
        let mut s = ParamStore::new();
        let a = s.insert("a", Tensor::scalar(1.0));
        let b = s.insert("a", Tensor::scalar(2.0));
        assert_eq!(a, b);
        assert_eq!(s.len(), 1);
        assert_eq!(s.value(a).item(), 2.0);
    }
}
