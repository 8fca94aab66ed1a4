use crate::autograd::Tensor;

/// Sinusoidal position table `[max_len x d]`, indexed per scalar dimension:
/// entry `(pos, k)` is `sin(pos / 10000^(k/d))` for even `k` and
/// `cos(pos / 10000^(k/d))` for odd `k`.
///
/// Each odd column uses its own frequency rather than sharing the
/// frequency of the preceding even column.
pub fn positional_encoding(max_len: usize, d: usize) -> Tensor {
    assert!(max_len >= 1 && d >= 1, "positional table needs positive dims");
    let mut values = Vec::with_capacity(max_len * d);
    for pos in 0..max_len {
        for k in 0..d {
            let angle = pos as f64 / 10000f64.powf(k as f64 / d as f64);
            values.push(if k % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    Tensor::new(vec![max_len, d], values).expect("positive dims")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn origin_row_alternates_zero_and_one() {
        let pe = positional_encoding(4, 10);
        for k in 0..10 {
            let expect = if k % 2 == 0 { 0.0 } else { 1.0 };
            assert_eq!(pe.at(0, k), expect);
        }
    }

    #[test]
    fn first_column_is_sin_of_position() {
        for d in [1, 8, 64, 300] {
            let pe = positional_encoding(5, d);
            assert!((pe.at(3, 0) - 0.141_12).abs() < 1e-5);
            assert_eq!(pe.at(3, 0), 3f64.sin());
        }
    }

    #[test]
    fn odd_columns_use_their_own_frequency() {
        let d = 8;
        let pe = positional_encoding(6, d);
        let expect = (5.0 / 10000f64.powf(3.0 / d as f64)).cos();
        assert!((pe.at(5, 3) - expect).abs() < 1e-15);
        let paired = (5.0 / 10000f64.powf(2.0 / d as f64)).cos();
        assert!((pe.at(5, 3) - paired).abs() > 1e-3);
    }
}
