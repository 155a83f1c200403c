use crate::tensor::Real;

/// Joins vectors in the declared order.
pub fn concat<T: Real>(parts: &[&[T]]) -> Vec<T> {
    let mut out = Vec::with_capacity(parts.iter().map(|p| p.len()).sum());
    for p in parts {
        out.extend_from_slice(p);
    }
    out
}

/// Splits a gradient back at the offsets `concat` used.
pub fn split<'a, T: Real>(grad: &'a [T], sizes: &[usize]) -> Vec<&'a [T]> {
    assert_eq!(grad.len(), sizes.iter().sum::<usize>(), "split sizes do not cover gradient");
    let mut rest = grad;
    sizes
        .iter()
        .map(|&n| {
            let (head, tail) = rest.split_at(n);
            rest = tail;
            head
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn widths_add_up() {
        let a = vec![0.0f64; 100];
        let b = vec![1.0f64; 19];
        assert_eq!(concat(&[&a, &b]).len(), 119);
    }

    #[test]
    fn single_part_is_identity() {
        let a = vec![1.0, 2.0, 3.0];
        assert_eq!(concat::<f64>(&[&a]), a);
    }

    #[test]
    fn segment_order_and_split_offsets() {
        let (a, b, c) = (vec![1.0, 2.0], vec![3.0, 4.0, 5.0], vec![6.0, 7.0, 8.0, 9.0]);
        let joined = concat::<f64>(&[&a, &b, &c]);
        assert_eq!(joined, (1..=9).map(|v| v as f64).collect::<Vec<_>>());
        let parts = split(&joined, &[2, 3, 4]);
        assert_eq!(parts[0], &a[..]);
        assert_eq!(parts[1], &b[..]);
        assert_eq!(parts[2], &c[..]);
    }
}
