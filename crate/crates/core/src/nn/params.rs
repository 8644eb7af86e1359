use std::cell::RefCell;
use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::graph::Var;

/// A named dense parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// All trainable tensors of a model, keyed by module-qualified names.
///
/// Names are kept in a `BTreeMap` so iteration (initialization, checkpoint
/// layout, optimizer order) is deterministic.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, shape: &[usize], data: Vec<f64>) {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "param {name}: shape/data mismatch");
        let prev = self.params.insert(
            name.to_string(),
            Param {
                shape: shape.to_vec(),
                data,
            },
        );
        assert!(prev.is_none(), "duplicate parameter name {name}");
    }

    /// Uniform in `±1/sqrt(fan_in)`.
    pub fn init_uniform<R: Rng>(&mut self, name: &str, shape: &[usize], fan_in: usize, rng: &mut R) {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
        self.insert(name, shape, data);
    }

    pub fn init_normal<R: Rng>(&mut self, name: &str, shape: &[usize], std: f64, rng: &mut R) {
        let dist = Normal::new(0.0, std).expect("valid std");
        let n = shape.iter().product();
        let data = (0..n).map(|_| dist.sample(rng)).collect();
        self.insert(name, shape, data);
    }

    pub fn init_const(&mut self, name: &str, shape: &[usize], value: f64) {
        let n = shape.iter().product();
        self.insert(name, shape, vec![value; n]);
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.params.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param)> {
        self.params.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total scalar count of parameters whose name starts with `prefix`.
    pub fn count_with_prefix(&self, prefix: &str) -> usize {
        self.params
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(_, p)| p.data.len())
            .sum()
    }

    pub fn total_count(&self) -> usize {
        self.params.values().map(|p| p.data.len()).sum()
    }
}

/// Binds a [`ParamStore`] to one forward pass.
///
/// Each parameter becomes a single graph leaf (when trainable) so gradients
/// from every use accumulate in one place.
pub struct Ctx<'a> {
    store: &'a ParamStore,
    trainable: Option<Box<dyn Fn(&str) -> bool + 'a>>,
    cache: RefCell<HashMap<String, Var>>,
}

impl<'a> Ctx<'a> {
    /// Inference context: parameters are constants.
    pub fn eval(store: &'a ParamStore) -> Self {
        Ctx {
            store,
            trainable: None,
            cache: RefCell::new(HashMap::new()),
        }
    }

    /// Training context: every parameter is a gradient leaf.
    pub fn train(store: &'a ParamStore) -> Self {
        Self::train_filtered(store, |_| true)
    }

    /// Training context where only parameters accepted by `filter` are leaves.
    pub fn train_filtered(store: &'a ParamStore, filter: impl Fn(&str) -> bool + 'a) -> Self {
        Ctx {
            store,
            trainable: Some(Box::new(filter)),
            cache: RefCell::new(HashMap::new()),
        }
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    pub fn param(&self, name: &str) -> Var {
        if let Some(v) = self.cache.borrow().get(name) {
            return v.clone();
        }
        let p = self
            .store
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"));
        let trainable = self.trainable.as_ref().is_some_and(|f| f(name));
        let v = if trainable {
            Var::leaf(&p.shape, p.data.clone())
        } else {
            Var::constant(&p.shape, p.data.clone())
        };
        self.cache.borrow_mut().insert(name.to_string(), v.clone());
        v
    }

    /// Binds `name` to an existing variable instead of reading the store.
    pub fn seed(&self, name: &str, var: &Var) {
        self.cache.borrow_mut().insert(name.to_string(), var.clone());
    }

    /// Gradients of every parameter touched in this pass (zeros if untouched by backward).
    pub fn grads(&self) -> BTreeMap<String, Vec<f64>> {
        self.cache
            .borrow()
            .iter()
            .filter(|(_, v)| v.requires_grad())
            .map(|(k, v)| (k.clone(), v.grad().unwrap_or_else(|| vec![0.0; v.len()])))
            .collect()
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: BTreeMap<String, Vec<f64>>,
    pub v: BTreeMap<String, Vec<f64>>,
}

impl Default for Adam {
    fn default() -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }
}

impl Adam {
    pub fn update(&mut self, store: &mut ParamStore, grads: &BTreeMap<String, Vec<f64>>, lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (name, g) in grads {
            let p = store.get_mut(name).expect("gradient for unknown parameter");
            let m = self.m.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            let v = self.v.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            for i in 0..g.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                p.data[i] -= lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}
