//! Backward pass over the recorded operation tape.

use std::collections::HashSet;

use super::{Node, Result, Tensor, TensorError};

/// The ordered record of differentiable operations reachable from one loss.
///
/// Entries are sorted by recording sequence number, so walking the tape from
/// the back visits operations in exact reverse execution order. Built and
/// consumed by [`backward`]; a fresh tape is implicitly started by the next
/// forward pass.
pub struct Tape {
    entries: Vec<(Tensor, Node)>,
}

impl Tape {
    /// Detaches every node reachable from `loss`, ordered by execution.
    fn capture(loss: &Tensor) -> Tape {
        let mut entries = Vec::new();
        let mut seen: HashSet<usize> = HashSet::new();
        let mut stack = vec![loss.clone()];
        while let Some(t) = stack.pop() {
            if !seen.insert(t.id()) {
                continue;
            }
            if let Some(node) = t.take_node() {
                stack.extend(node.parents.iter().cloned());
                t.mark_consumed();
                entries.push((t, node));
            }
        }
        entries.sort_by_key(|(_, node)| node.seq);
        Tape { entries }
    }

    /// Number of recorded operations.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Runs reverse-mode differentiation from a scalar loss.
///
/// Populates `grad` on every grad-enabled tensor reachable from `loss`
/// (seeding d(loss)/d(loss) = 1) and consumes the tape: the operation record
/// is dropped, so a second `backward` on the same loss is an error.
pub fn backward(loss: &Tensor) -> Result<()> {
    if !loss.is_scalar() {
        return Err(TensorError::NonScalarLoss(loss.shape().to_vec()));
    }
    if loss.is_consumed() && !loss.has_node() {
        return Err(TensorError::ConsumedTape);
    }
    loss.accumulate_grad(&[1.0]);
    let tape = Tape::capture(loss);
    for (out, node) in tape.entries.iter().rev() {
        // A node whose output never received gradient cannot influence the
        // loss; skip it (can only happen for zero-contribution branches).
        let grad = match out.grad() {
            Some(g) => g,
            None => continue,
        };
        (node.backward)(&grad);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{mul, reduce_sum};

    #[test]
    fn backward_of_sum_is_ones() {
        let x = Tensor::from_vec(&[3], vec![1.0, 2.0, 3.0])
            .unwrap()
            .requires_grad();
        let loss = reduce_sum(&x);
        backward(&loss).unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0, 1.0, 1.0]);
        // The seed: d(loss)/d(loss) = 1.
        assert_eq!(loss.grad().unwrap(), vec![1.0]);
    }

    #[test]
    fn backward_of_sum_of_squares_is_2x() {
        let x = Tensor::from_vec(&[3], vec![1.0, -2.0, 3.0])
            .unwrap()
            .requires_grad();
        let loss = reduce_sum(&mul(&x, &x).unwrap());
        backward(&loss).unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0, -4.0, 6.0]);
    }

    #[test]
    fn backward_requires_scalar_loss() {
        let x = Tensor::ones(&[2]).requires_grad();
        let y = mul(&x, &x).unwrap();
        assert!(matches!(
            backward(&y),
            Err(TensorError::NonScalarLoss(_))
        ));
    }

    #[test]
    fn backward_twice_errors_on_consumed_tape() {
        let x = Tensor::ones(&[2]).requires_grad();
        let loss = reduce_sum(&x);
        backward(&loss).unwrap();
        assert!(matches!(backward(&loss), Err(TensorError::ConsumedTape)));
    }

    #[test]
    fn backward_of_sum_of_losses_equals_sum_of_backwards() {
        // Linearity: d(l1 + l2)/dx == d(l1)/dx + d(l2)/dx.
        let make = || {
            Tensor::from_vec(&[4], vec![0.5, -1.0, 2.0, 0.25])
                .unwrap()
                .requires_grad()
        };

        let x = make();
        let l1 = reduce_sum(&mul(&x, &x).unwrap());
        let l2 = reduce_sum(&x);
        let total = crate::tensor::add(&l1, &l2).unwrap();
        backward(&total).unwrap();
        let combined = x.grad().unwrap();

        let xa = make();
        backward(&reduce_sum(&mul(&xa, &xa).unwrap())).unwrap();
        let xb = make();
        backward(&reduce_sum(&xb)).unwrap();
        let separate: Vec<f32> = xa
            .grad()
            .unwrap()
            .iter()
            .zip(xb.grad().unwrap())
            .map(|(a, b)| a + b)
            .collect();

        assert_eq!(combined, separate);
    }

    #[test]
    fn grads_accumulate_across_backward_calls() {
        let x = Tensor::ones(&[2]).requires_grad();
        backward(&reduce_sum(&x)).unwrap();
        let y = mul(&x, &x).unwrap();
        backward(&reduce_sum(&y)).unwrap();
        // 1 (from sum) + 2 (from sum of squares at x=1).
        assert_eq!(x.grad().unwrap(), vec![3.0, 3.0]);
    }
}
