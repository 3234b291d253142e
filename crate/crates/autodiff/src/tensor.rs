use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{shape_err, AutodiffError, Result};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(0);

pub(crate) type BackwardFn = Box<dyn Fn(&[f64], &mut GradSink<'_>)>;

struct Record {
    len: usize,
    /// `None` marks a leaf; its gradient is kept after the backward pass.
    backward: Option<BackwardFn>,
}

struct TapeInner {
    id: u64,
    records: Vec<Record>,
    consumed: bool,
}

/// Append-only operation log. Records are stored in creation order, which is
/// a topological order because an operation can only consume existing nodes.
#[derive(Clone)]
pub struct Tape {
    inner: Rc<RefCell<TapeInner>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            inner: Rc::new(RefCell::new(TapeInner {
                id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
                records: Vec::new(),
                consumed: false,
            })),
        }
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_consumed(&self) -> bool {
        self.inner.borrow().consumed
    }

    fn id(&self) -> u64 {
        self.inner.borrow().id
    }

    fn push(&self, len: usize, backward: Option<BackwardFn>) -> Result<usize> {
        let mut inner = self.inner.borrow_mut();
        if inner.consumed {
            return Err(AutodiffError::TapeConsumed);
        }
        inner.records.push(Record { len, backward });
        Ok(inner.records.len() - 1)
    }

    fn same(&self, other: &Tape) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }
}

#[derive(Clone)]
struct Node {
    tape: Tape,
    id: usize,
}

/// Dense row-major `f64` array, optionally linked to a tape.
#[derive(Clone)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Rc<Vec<f64>>,
    node: Option<Node>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("requires_grad", &self.requires_grad())
            .finish()
    }
}

impl Tensor {
    pub fn constant(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        check_len("constant", &shape, data.len())?;
        Ok(Self {
            shape,
            data: Rc::new(data),
            node: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: Rc::new(vec![0.0; n]),
            node: None,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: Rc::new(vec![value]),
            node: None,
        }
    }

    /// A differentiable input registered on `tape`.
    pub fn leaf(tape: &Tape, shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        check_len("leaf", &shape, data.len())?;
        let id = tape.push(data.len(), None)?;
        Ok(Self {
            shape,
            data: Rc::new(data),
            node: Some(Node {
                tape: tape.clone(),
                id,
            }),
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.data.as_ref().clone()
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.node.is_some()
    }

    /// Same values, no tape linkage. Shares the underlying buffer.
    pub fn detach(&self) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: Rc::clone(&self.data),
            node: None,
        }
    }

    pub(crate) fn id(&self) -> Option<usize> {
        self.node.as_ref().map(|n| n.id)
    }

    pub(crate) fn data_rc(&self) -> Rc<Vec<f64>> {
        Rc::clone(&self.data)
    }

    /// Builds the result of an operation. When no input is tracked the
    /// result is a constant and `backward` is dropped unused.
    pub(crate) fn from_op<F>(
        op: &'static str,
        shape: Vec<usize>,
        data: Vec<f64>,
        inputs: &[&Tensor],
        backward: F,
    ) -> Result<Tensor>
    where
        F: Fn(&[f64], &mut GradSink<'_>) + 'static,
    {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        let mut tape: Option<&Tape> = None;
        for t in inputs {
            if let Some(node) = &t.node {
                match tape {
                    None => tape = Some(&node.tape),
                    Some(existing) if !existing.same(&node.tape) => {
                        return Err(AutodiffError::MixedTapes(op))
                    }
                    Some(_) => {}
                }
            }
        }
        let node = match tape {
            None => None,
            Some(tape) => {
                let id = tape.push(data.len(), Some(Box::new(backward)))?;
                Some(Node {
                    tape: tape.clone(),
                    id,
                })
            }
        };
        Ok(Tensor {
            shape,
            data: Rc::new(data),
            node,
        })
    }

    /// Reverse-mode sweep from this scalar. Consumes the tape: intermediate
    /// gradients are freed as the sweep passes them and the tape accepts no
    /// further operations.
    pub fn backward(&self) -> Result<Gradients> {
        if self.numel() != 1 {
            return Err(AutodiffError::NonScalarLoss(self.shape.clone()));
        }
        let node = self.node.as_ref().ok_or(AutodiffError::Untracked)?;
        let tape = &node.tape;
        let mut inner = tape.inner.borrow_mut();
        if inner.consumed {
            return Err(AutodiffError::TapeConsumed);
        }
        inner.consumed = true;
        let records = std::mem::take(&mut inner.records);
        let tape_id = inner.id;
        drop(inner);

        let lens: Vec<usize> = records.iter().map(|r| r.len).collect();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; records.len()];
        grads[node.id] = Some(vec![1.0]);
        for id in (0..=node.id).rev() {
            let Some(backward) = &records[id].backward else {
                continue;
            };
            if let Some(g) = grads[id].take() {
                let mut sink = GradSink {
                    grads: &mut grads,
                    lens: &lens,
                };
                backward(&g, &mut sink);
            }
        }
        Ok(Gradients { tape_id, grads })
    }

    pub(crate) fn with_shape(&self, op: &'static str, shape: Vec<usize>) -> Result<Tensor> {
        check_len(op, &shape, self.numel())?;
        let id = self.id();
        Tensor::from_op(op, shape, self.to_vec(), &[self], move |g, sink| {
            if let Some(slot) = sink.slot(id) {
                for (s, gi) in slot.iter_mut().zip(g) {
                    *s += gi;
                }
            }
        })
    }
}

fn check_len(op: &'static str, shape: &[usize], len: usize) -> Result<()> {
    let expected: usize = shape.iter().product();
    if expected != len {
        return Err(shape_err(
            op,
            format!("shape {shape:?} needs {expected} values, got {len}"),
        ));
    }
    Ok(())
}

/// Gradient accumulator handed to backward rules.
pub(crate) struct GradSink<'a> {
    grads: &'a mut [Option<Vec<f64>>],
    lens: &'a [usize],
}

impl GradSink<'_> {
    /// Mutable gradient buffer for node `id`, zero-initialised on first use.
    /// Returns `None` for untracked inputs.
    pub(crate) fn slot(&mut self, id: Option<usize>) -> Option<&mut [f64]> {
        let id = id?;
        let len = self.lens[id];
        Some(self.grads[id].get_or_insert_with(|| vec![0.0; len]))
    }
}

/// Leaf gradients produced by [`Tensor::backward`].
pub struct Gradients {
    tape_id: u64,
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient for `t`, or `None` if `t` is untracked, from another tape, or
    /// the loss does not depend on it.
    pub fn get(&self, t: &Tensor) -> Option<&[f64]> {
        let node = t.node.as_ref()?;
        if node.tape.id() != self.tape_id {
            return None;
        }
        self.grads.get(node.id)?.as_deref()
    }

    /// Like [`Gradients::get`] but materialises zeros when no gradient reached `t`.
    pub fn get_or_zeros(&self, t: &Tensor) -> Vec<f64> {
        self.get(t)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; t.numel()])
    }
}
