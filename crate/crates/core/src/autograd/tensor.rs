use std::cell::RefCell;
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;

use super::{Result, Scalar, TensorError};

/// Backward rule of one recorded operation.
///
/// `grad_out` has the shape of `output`; the returned vector holds one entry
/// per input, `None` where the input does not need a gradient.
pub(crate) trait BackwardFn {
    fn name(&self) -> &'static str;
    fn backward(
        &self,
        inputs: &[Tensor],
        output: &Node,
        grad_out: &[Scalar],
    ) -> Vec<Option<Vec<Scalar>>>;
}

pub(crate) struct TapeNode {
    inputs: Vec<Tensor>,
    op: Box<dyn BackwardFn>,
}

pub(crate) struct Node {
    pub(crate) shape: Vec<usize>,
    pub(crate) data: Vec<Scalar>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<Scalar>>>,
    tape: Option<TapeNode>,
}

/// Dense row-major tensor with an optional link into the gradient tape.
///
/// Cloning is cheap (shared handle). Data is never mutated after
/// construction; only the gradient buffer of leaf tensors accumulates.
#[derive(Clone)]
pub struct Tensor(Rc<Node>);

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .field("op", &self.0.tape.as_ref().map(|t| t.op.name()))
            .finish()
    }
}

fn check_len(shape: &[usize], len: usize) -> Result<()> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(TensorError::Invalid(format!(
            "shape must be non-empty with positive dims, got {shape:?}"
        )));
    }
    let n: usize = shape.iter().product();
    if n != len {
        return Err(TensorError::ShapeMismatch {
            op: "tensor",
            detail: format!("shape {shape:?} holds {n} elements, data has {len}"),
        });
    }
    Ok(())
}

impl Tensor {
    /// Constant tensor (no gradient).
    pub fn new(data: Vec<Scalar>, shape: &[usize]) -> Result<Self> {
        check_len(shape, data.len())?;
        Ok(Self::leaf(data, shape.to_vec(), false))
    }

    /// Leaf tensor that accumulates a gradient during `backward`.
    pub fn param(data: Vec<Scalar>, shape: &[usize]) -> Result<Self> {
        check_len(shape, data.len())?;
        Ok(Self::leaf(data, shape.to_vec(), true))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: Scalar) -> Self {
        let n = shape.iter().product();
        Self::leaf(vec![value; n], shape.to_vec(), false)
    }

    pub fn scalar(value: Scalar) -> Self {
        Self::leaf(vec![value], vec![1], false)
    }

    fn leaf(data: Vec<Scalar>, shape: Vec<usize>, requires_grad: bool) -> Self {
        Tensor(Rc::new(Node {
            shape,
            data,
            requires_grad,
            grad: RefCell::new(None),
            tape: None,
        }))
    }

    /// Result of an operation. The tape link is only kept when some input
    /// needs a gradient.
    pub(crate) fn from_op(
        data: Vec<Scalar>,
        shape: Vec<usize>,
        inputs: Vec<Tensor>,
        op: impl BackwardFn + 'static,
    ) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        let requires_grad = inputs.iter().any(Tensor::requires_grad);
        let tape = requires_grad.then(|| TapeNode {
            inputs,
            op: Box::new(op),
        });
        Tensor(Rc::new(Node {
            shape,
            data,
            requires_grad,
            grad: RefCell::new(None),
            tape,
        }))
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn data(&self) -> &[Scalar] {
        &self.0.data
    }

    pub fn to_vec(&self) -> Vec<Scalar> {
        self.0.data.clone()
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.tape.is_none()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<Scalar> {
        match self.0.data.as_slice() {
            [v] => Ok(*v),
            _ => Err(TensorError::NonScalar(self.0.shape.clone())),
        }
    }

    /// Accumulated gradient of a leaf tensor, if any was propagated.
    pub fn grad(&self) -> Option<Vec<Scalar>> {
        self.0.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    /// Same values, detached from the tape.
    pub fn detach(&self) -> Tensor {
        Self::leaf(self.0.data.clone(), self.0.shape.clone(), false)
    }

    fn key(&self) -> *const Node {
        Rc::as_ptr(&self.0)
    }

    /// Reverse-mode sweep from a scalar loss. Leaf tensors with
    /// `requires_grad` accumulate d(loss)/d(leaf); repeated calls add up.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(TensorError::NonScalar(self.0.shape.clone()));
        }
        if !self.requires_grad() {
            return Ok(());
        }
        let order = self.topo_order();
        let mut pending: HashMap<*const Node, Vec<Scalar>> = HashMap::new();
        pending.insert(self.key(), vec![1.0]);
        for t in order.iter().rev() {
            let Some(g) = pending.remove(&t.key()) else {
                continue;
            };
            match &t.0.tape {
                Some(tape) => {
                    let grads = tape.op.backward(&tape.inputs, &t.0, &g);
                    debug_assert_eq!(grads.len(), tape.inputs.len());
                    for (inp, gi) in tape.inputs.iter().zip(grads) {
                        let Some(gi) = gi else { continue };
                        if !inp.requires_grad() {
                            continue;
                        }
                        debug_assert_eq!(gi.len(), inp.numel(), "grad of {}", tape.op.name());
                        match pending.get_mut(&inp.key()) {
                            Some(acc) => acc.iter_mut().zip(&gi).for_each(|(a, b)| *a += b),
                            None => {
                                pending.insert(inp.key(), gi);
                            }
                        }
                    }
                }
                None => {
                    let mut slot = t.0.grad.borrow_mut();
                    match slot.as_mut() {
                        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                        None => *slot = Some(g),
                    }
                }
            }
        }
        Ok(())
    }

    /// Nodes reachable through grad-requiring edges, inputs before outputs.
    fn topo_order(&self) -> Vec<Tensor> {
        let mut order = Vec::new();
        let mut seen = std::collections::HashSet::new();
        // (tensor, children_pushed)
        let mut stack = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !seen.insert(t.key()) {
                continue;
            }
            stack.push((t.clone(), true));
            if let Some(tape) = &t.0.tape {
                for inp in &tape.inputs {
                    if inp.requires_grad() && !seen.contains(&inp.key()) {
                        stack.push((inp.clone(), false));
                    }
                }
            }
        }
        order
    }
}
