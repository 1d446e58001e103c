use std::cell::{Ref, RefCell};
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::rc::Rc;

use crate::element::Element;
use crate::error::{Result, TensorError};

/// What a backward closure sees: the upstream gradient, the forward output
/// and the op's inputs, in the order they were recorded.
pub(crate) struct GradCtx<'a, T: Element> {
    pub grad: &'a [T],
    pub out: &'a [T],
    pub parents: &'a [Tensor<T>],
}

/// Returns one gradient buffer per parent; `None` for parents that do not
/// require a gradient.
pub(crate) type BackwardFn<T> = Box<dyn Fn(&GradCtx<'_, T>) -> Vec<Option<Vec<T>>>>;

struct Node<T: Element> {
    shape: Vec<usize>,
    data: RefCell<Vec<T>>,
    grad: RefCell<Option<Vec<T>>>,
    requires_grad: bool,
    parents: Vec<Tensor<T>>,
    backward: Option<BackwardFn<T>>,
}

/// Dense row-major tensor with an optional gradient slot.
///
/// Cloning is cheap and shares storage; ops build a graph that is walked by
/// [`Tensor::backward`]. Tensors are single-threaded (`!Send`).
pub struct Tensor<T: Element = f32>(Rc<Node<T>>);

impl<T: Element> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor(Rc::clone(&self.0))
    }
}

impl<T: Element> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let data = self.0.data.borrow();
        let preview: Vec<T> = data.iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .field("data", &preview)
            .finish()
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Element> Tensor<T> {
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        Self::checked(shape, data, false)
    }

    /// A leaf that accumulates gradients.
    pub fn param(shape: &[usize], data: Vec<T>) -> Result<Self> {
        Self::checked(shape, data, true)
    }

    fn checked(shape: &[usize], data: Vec<T>, requires_grad: bool) -> Result<Self> {
        if shape.iter().any(|&e| e == 0) {
            return Err(TensorError::InvalidShape {
                op: "from_vec",
                shape: shape.to_vec(),
                reason: "extents must be positive",
            });
        }
        let expected = numel(shape);
        if expected != data.len() {
            return Err(TensorError::DataLength {
                shape: shape.to_vec(),
                expected,
                actual: data.len(),
            });
        }
        Ok(Self::leaf(shape.to_vec(), data, requires_grad))
    }

    fn leaf(shape: Vec<usize>, data: Vec<T>, requires_grad: bool) -> Self {
        Tensor(Rc::new(Node {
            shape,
            data: RefCell::new(data),
            grad: RefCell::new(None),
            requires_grad,
            parents: Vec::new(),
            backward: None,
        }))
    }

    pub fn scalar(value: T) -> Self {
        Self::leaf(Vec::new(), vec![value], false)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        assert!(shape.iter().all(|&e| e > 0), "extents must be positive: {shape:?}");
        Self::leaf(shape.to_vec(), vec![value; numel(shape)], false)
    }

    pub fn from_f64(shape: &[usize], data: &[f64]) -> Result<Self> {
        Self::from_vec(shape, data.iter().map(|&x| T::of(x)).collect())
    }

    /// Records the result of an op. The graph edge is dropped when no input
    /// requires a gradient.
    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<T>,
        parents: Vec<Tensor<T>>,
        backward: BackwardFn<T>,
    ) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        if parents.iter().any(Tensor::requires_grad) {
            Tensor(Rc::new(Node {
                shape,
                data: RefCell::new(data),
                grad: RefCell::new(None),
                requires_grad: true,
                parents,
                backward: Some(backward),
            }))
        } else {
            Self::leaf(shape, data, false)
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn rank(&self) -> usize {
        self.0.shape.len()
    }

    pub fn numel(&self) -> usize {
        numel(&self.0.shape)
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn data(&self) -> Ref<'_, Vec<T>> {
        self.0.data.borrow()
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.0.data.borrow().clone()
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.0.data.borrow().iter().map(|x| x.widen()).collect()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> T {
        let data = self.0.data.borrow();
        assert_eq!(data.len(), 1, "item() on tensor of shape {:?}", self.0.shape);
        data[0]
    }

    /// Overwrites the values in place (optimizer updates, gradient checks).
    pub fn set_data(&self, data: Vec<T>) -> Result<()> {
        if data.len() != self.numel() {
            return Err(TensorError::DataLength {
                shape: self.0.shape.clone(),
                expected: self.numel(),
                actual: data.len(),
            });
        }
        *self.0.data.borrow_mut() = data;
        Ok(())
    }

    pub(crate) fn update_data(&self, f: impl FnOnce(&mut [T])) {
        f(&mut self.0.data.borrow_mut());
    }

    pub fn grad(&self) -> Option<Vec<T>> {
        self.0.grad.borrow().clone()
    }

    /// Gradient, reading an untouched slot as zeros.
    pub fn grad_or_zeros(&self) -> Vec<T> {
        self.grad().unwrap_or_else(|| vec![T::zero(); self.numel()])
    }

    pub fn set_grad(&self, grad: Option<Vec<T>>) -> Result<()> {
        if let Some(g) = &grad {
            if g.len() != self.numel() {
                return Err(TensorError::DataLength {
                    shape: self.0.shape.clone(),
                    expected: self.numel(),
                    actual: g.len(),
                });
            }
        }
        *self.0.grad.borrow_mut() = grad;
        Ok(())
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    /// A copy cut off from the graph.
    pub fn detach(&self) -> Self {
        Self::leaf(self.0.shape.clone(), self.to_vec(), false)
    }

    /// Deep copy as a fresh leaf with the same `requires_grad` flag.
    pub fn deep_clone(&self) -> Self {
        Self::leaf(self.0.shape.clone(), self.to_vec(), self.0.requires_grad && self.0.backward.is_none())
    }

    /// Same storage identity (not value equality).
    pub fn ptr_eq(&self, other: &Self) -> bool {
        Rc::ptr_eq(&self.0, &other.0)
    }

    fn key(&self) -> *const Node<T> {
        Rc::as_ptr(&self.0)
    }

    /// Reverse-mode sweep from a scalar. Leaf gradients accumulate across
    /// calls until cleared.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(TensorError::NotScalar(self.0.shape.clone()));
        }
        if !self.requires_grad() {
            return Ok(());
        }
        let order = self.topo_order();
        let mut pending: HashMap<*const Node<T>, Vec<T>> = HashMap::new();
        pending.insert(self.key(), vec![T::one()]);

        for node in order.iter().rev() {
            let Some(grad) = pending.remove(&node.key()) else {
                continue;
            };
            match &node.0.backward {
                None => {
                    let mut slot = node.0.grad.borrow_mut();
                    match slot.as_mut() {
                        Some(acc) => acc.iter_mut().zip(&grad).for_each(|(a, &g)| *a = *a + g),
                        None => *slot = Some(grad),
                    }
                }
                Some(backward) => {
                    let out = node.0.data.borrow();
                    let ctx = GradCtx {
                        grad: &grad,
                        out: &out,
                        parents: &node.0.parents,
                    };
                    let contributions = backward(&ctx);
                    debug_assert_eq!(contributions.len(), node.0.parents.len());
                    for (parent, contribution) in node.0.parents.iter().zip(contributions) {
                        let Some(c) = contribution else { continue };
                        if !parent.requires_grad() {
                            continue;
                        }
                        debug_assert_eq!(c.len(), parent.numel());
                        pending
                            .entry(parent.key())
                            .and_modify(|acc| acc.iter_mut().zip(&c).for_each(|(a, &g)| *a = *a + g))
                            .or_insert(c);
                    }
                }
            }
        }
        Ok(())
    }

    /// Post-order over nodes that require a gradient: every node precedes
    /// its consumers.
    fn topo_order(&self) -> Vec<Tensor<T>> {
        let mut order = Vec::new();
        let mut visited: HashSet<*const Node<T>> = HashSet::new();
        let mut stack: Vec<(Tensor<T>, bool)> = vec![(self.clone(), false)];
        while let Some((node, expanded)) = stack.pop() {
            if expanded {
                order.push(node);
                continue;
            }
            if !visited.insert(node.key()) {
                continue;
            }
            stack.push((node.clone(), true));
            for parent in node.0.parents.iter().rev() {
                if parent.requires_grad() && !visited.contains(&parent.key()) {
                    stack.push((parent.clone(), false));
                }
            }
        }
        order
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_length_mismatch() {
        let err = Tensor::<f32>::from_vec(&[2, 3], vec![0.0; 5]).unwrap_err();
        assert!(matches!(err, TensorError::DataLength { expected: 6, actual: 5, .. }));
    }

    #[test]
    fn rejects_zero_extent() {
        assert!(Tensor::<f32>::from_vec(&[2, 0], vec![]).is_err());
    }

    #[test]
    fn backward_on_non_scalar_errors() {
        let x = Tensor::<f64>::param(&[2], vec![1.0, 2.0]).unwrap();
        let y = x.mul(&x).unwrap();
        assert!(matches!(y.backward(), Err(TensorError::NotScalar(_))));
    }

    #[test]
    fn sum_of_squares_gradient_is_twice_x() {
        let x = Tensor::<f64>::param(&[3], vec![1.0, -2.0, 0.5]).unwrap();
        let loss = x.mul(&x).unwrap().sum_all();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0, -4.0, 1.0]);
    }

    #[test]
    fn unused_parameter_reads_zero_grad() {
        let x = Tensor::<f64>::param(&[2], vec![1.0, 2.0]).unwrap();
        let unused = Tensor::<f64>::param(&[2], vec![3.0, 4.0]).unwrap();
        x.sum_all().backward().unwrap();
        assert_eq!(unused.grad(), None);
        assert_eq!(unused.grad_or_zeros(), vec![0.0, 0.0]);
    }

    #[test]
    fn gradients_accumulate_over_shared_uses() {
        // y = x * x + x uses x three times.
        let x = Tensor::<f64>::param(&[1], vec![3.0]).unwrap();
        let y = x.mul(&x).unwrap().add(&x).unwrap().sum_all();
        y.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![7.0]);
    }

    #[test]
    fn repeated_backward_accumulates_until_cleared() {
        let x = Tensor::<f64>::param(&[1], vec![2.0]).unwrap();
        x.scale(3.0).sum_all().backward().unwrap();
        x.scale(3.0).sum_all().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![6.0]);
        x.zero_grad();
        assert_eq!(x.grad(), None);
    }

    #[test]
    fn constant_inputs_build_no_graph() {
        let a = Tensor::<f32>::ones(&[2, 2]);
        let b = a.add(&a).unwrap();
        assert!(!b.requires_grad());
    }
}
