//! Execution engines.
//!
//! Model code is written once against [`Exec`]. [`Eager`] evaluates
//! operations immediately and keeps nothing; [`Graph`] records a tape that
//! [`Graph::backward`] walks in reverse to produce [`Gradients`].

use alloc::collections::BTreeMap;
use alloc::rc::Rc;
use alloc::vec;
use alloc::vec::Vec;

use crate::ops::{self, Op};
use crate::params::{ParamId, ParamStore};
use crate::real::Real;
use crate::tensor::Tensor;

/// Something that can evaluate [`Op`]s over values of type `Self::V`.
pub trait Exec<T: Real> {
    type V: Clone;

    fn value<'a>(&'a self, v: &'a Self::V) -> &'a Tensor<T>;
    /// A value that never receives a gradient.
    fn constant(&mut self, t: Tensor<T>) -> Self::V;
    fn param(&mut self, id: ParamId) -> Self::V;
    fn apply(&mut self, op: Op, args: &[&Self::V]) -> Self::V;

    fn shape(&self, v: &Self::V) -> Vec<usize> {
        self.value(v).shape().to_vec()
    }

    fn unary(&mut self, op: Op, x: &Self::V) -> Self::V {
        self.apply(op, &[x])
    }

    fn add(&mut self, a: &Self::V, b: &Self::V) -> Self::V {
        self.apply(Op::Add, &[a, b])
    }

    fn sub(&mut self, a: &Self::V, b: &Self::V) -> Self::V {
        self.apply(Op::Sub, &[a, b])
    }

    fn mul(&mut self, a: &Self::V, b: &Self::V) -> Self::V {
        self.apply(Op::Mul, &[a, b])
    }

    fn div(&mut self, a: &Self::V, b: &Self::V) -> Self::V {
        self.apply(Op::Div, &[a, b])
    }

    fn scale(&mut self, x: &Self::V, s: f64) -> Self::V {
        self.apply(Op::Scale(s), &[x])
    }

    fn add_scalar(&mut self, x: &Self::V, s: f64) -> Self::V {
        self.apply(Op::AddScalar(s), &[x])
    }

    fn mean(&mut self, x: &Self::V) -> Self::V {
        self.apply(Op::Mean, &[x])
    }

    /// Sum of several values of equal shape.
    fn sum_all(&mut self, xs: &[Self::V]) -> Self::V {
        let mut acc = xs[0].clone();
        for x in &xs[1..] {
            acc = self.add(&acc, x);
        }
        acc
    }
}

/// Immediate evaluation without gradient bookkeeping.
pub struct Eager<'p, T> {
    params: &'p ParamStore<T>,
}

#[derive(Clone, Debug)]
pub enum EagerValue<T> {
    Param(ParamId),
    Owned(Rc<Tensor<T>>),
}

impl<'p, T: Real> Eager<'p, T> {
    pub fn new(params: &'p ParamStore<T>) -> Self {
        Self { params }
    }

    /// Extracts an owned tensor, cloning only when it is shared.
    pub fn take(&self, v: EagerValue<T>) -> Tensor<T> {
        match v {
            EagerValue::Param(id) => self.params.get(id).clone(),
            EagerValue::Owned(rc) => Rc::try_unwrap(rc).unwrap_or_else(|rc| (*rc).clone()),
        }
    }
}

impl<T: Real> Exec<T> for Eager<'_, T> {
    type V = EagerValue<T>;

    fn value<'a>(&'a self, v: &'a Self::V) -> &'a Tensor<T> {
        match v {
            EagerValue::Param(id) => self.params.get(*id),
            EagerValue::Owned(t) => t,
        }
    }

    fn constant(&mut self, t: Tensor<T>) -> Self::V {
        EagerValue::Owned(Rc::new(t))
    }

    fn param(&mut self, id: ParamId) -> Self::V {
        EagerValue::Param(id)
    }

    fn apply(&mut self, op: Op, args: &[&Self::V]) -> Self::V {
        let vals: Vec<&Tensor<T>> = args.iter().map(|a| self.value(a)).collect();
        EagerValue::Owned(Rc::new(ops::forward(&op, &vals)))
    }
}

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Var(usize);

enum Source {
    Param(ParamId),
    Input,
    Constant,
    Op(Op, Vec<usize>),
}

struct Node<T> {
    source: Source,
    value: Option<Tensor<T>>,
    requires_grad: bool,
}

/// Reverse-mode tape.
pub struct Graph<'p, T> {
    params: &'p ParamStore<T>,
    nodes: Vec<Node<T>>,
    param_nodes: Vec<Option<usize>>,
}

/// Gradients of a scalar with respect to parameters and graph inputs.
#[derive(Debug)]
pub struct Gradients<T> {
    params: Vec<Option<Tensor<T>>>,
    inputs: BTreeMap<usize, Tensor<T>>,
}

impl<T: Real> Gradients<T> {
    /// `None` when the parameter did not influence the output.
    pub fn param(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.params[id.0].as_ref()
    }

    pub fn input(&self, v: Var) -> Option<&Tensor<T>> {
        self.inputs.get(&v.0)
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut Tensor<T>)> {
        self.params.iter_mut().enumerate().filter_map(|(i, g)| g.as_mut().map(|g| (ParamId(i), g)))
    }

    pub fn into_params(self) -> Vec<Option<Tensor<T>>> {
        self.params
    }
}

impl<'p, T: Real> Graph<'p, T> {
    pub fn new(params: &'p ParamStore<T>) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            param_nodes: vec![None; params.len()],
        }
    }

    fn push(&mut self, source: Source, value: Option<Tensor<T>>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            source,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf whose gradient is reported by [`Gradients::input`].
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(Source::Input, Some(t), true)
    }

    fn node_value(&self, i: usize) -> &Tensor<T> {
        match (&self.nodes[i].source, &self.nodes[i].value) {
            (Source::Param(id), _) => self.params.get(*id),
            (_, Some(v)) => v,
            _ => panic!("value of node {i} was released"),
        }
    }

    /// Back-propagates from the scalar `root`, consuming the tape.
    pub fn backward(mut self, root: Var) -> Gradients<T> {
        let root_shape = self.node_value(root.0).shape().to_vec();
        assert_eq!(root_shape.iter().product::<usize>(), 1, "backward needs a scalar root");
        let mut grads: Vec<Option<Tensor<T>>> = Vec::new();
        grads.resize_with(root.0 + 1, || None);
        grads[root.0] = Some(Tensor::full(&root_shape, T::one()));
        let mut out = Gradients {
            params: vec![None; self.params.len()],
            inputs: BTreeMap::new(),
        };
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else {
                self.nodes[i].value = None;
                continue;
            };
            match &self.nodes[i].source {
                Source::Param(id) => out.params[id.0] = Some(g),
                Source::Input => {
                    out.inputs.insert(i, g);
                }
                Source::Constant => {}
                Source::Op(op, args) => {
                    let needs: Vec<bool> = args.iter().map(|&a| self.nodes[a].requires_grad).collect();
                    let vals: Vec<&Tensor<T>> = args.iter().map(|&a| self.node_value(a)).collect();
                    let res = ops::backward(op, &vals, self.node_value(i), &g, &needs);
                    for ((&a, ga), need) in args.iter().zip(res).zip(needs) {
                        if let (true, Some(ga)) = (need, ga) {
                            match &mut grads[a] {
                                Some(acc) => acc.add_assign(&ga),
                                slot => *slot = Some(ga),
                            }
                        }
                    }
                }
            }
            // every consumer of node `i` has a larger index and is already done
            self.nodes[i].value = None;
        }
        out
    }
}

impl<T: Real> Exec<T> for Graph<'_, T> {
    type V = Var;

    fn value<'a>(&'a self, v: &'a Var) -> &'a Tensor<T> {
        self.node_value(v.0)
    }

    fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(Source::Constant, Some(t), false)
    }

    fn param(&mut self, id: ParamId) -> Var {
        if let Some(i) = self.param_nodes[id.0] {
            return Var(i);
        }
        let v = self.push(Source::Param(id), None, true);
        self.param_nodes[id.0] = Some(v.0);
        v
    }

    fn apply(&mut self, op: Op, args: &[&Var]) -> Var {
        let vals: Vec<&Tensor<T>> = args.iter().map(|a| self.node_value(a.0)).collect();
        let value = ops::forward(&op, &vals);
        let requires_grad = args.iter().any(|a| self.nodes[a.0].requires_grad);
        if !requires_grad {
            return self.push(Source::Constant, Some(value), false);
        }
        self.push(Source::Op(op, args.iter().map(|a| a.0).collect()), Some(value), true)
    }
}
