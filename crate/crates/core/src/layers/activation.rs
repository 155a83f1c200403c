use crate::tensor::Real;

pub fn relu<T: Real>(x: &[T]) -> Vec<T> {
    x.iter().map(|&v| v.max(T::zero())).collect()
}

pub fn relu_in_place<T: Real>(x: &mut [T]) {
    x.iter_mut().for_each(|v| *v = v.max(T::zero()));
}

/// Gradient through ReLU given its *output*.
pub fn relu_backward<T: Real>(output: &[T], grad: &mut [T]) {
    for (g, &y) in grad.iter_mut().zip(output) {
        if y <= T::zero() {
            *g = T::zero();
        }
    }
}

pub fn sigmoid_scalar<T: Real>(x: T) -> T {
    // Split on sign so exp never overflows.
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid<T: Real>(x: &[T]) -> Vec<T> {
    x.iter().map(|&v| sigmoid_scalar(v)).collect()
}

/// Gradient through sigmoid given its output `p`.
pub fn sigmoid_backward<T: Real>(output: &[T], grad: &[T]) -> Vec<T> {
    output
        .iter()
        .zip(grad)
        .map(|(&p, &g)| g * p * (T::one() - p))
        .collect()
}

/// Max-subtracted softmax over a vector.
pub fn softmax<T: Real>(x: &[T]) -> Vec<T> {
    let max = x.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = x.iter().map(|&v| (v - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Jacobian-vector product of softmax given its output `p`:
/// `dx = p * (g - <g, p>)`.
pub fn softmax_backward<T: Real>(output: &[T], grad: &[T]) -> Vec<T> {
    let dot: T = output.iter().zip(grad).map(|(&p, &g)| p * g).sum();
    output
        .iter()
        .zip(grad)
        .map(|(&p, &g)| p * (g - dot))
        .collect()
}
