use numgrad::Matrix;

use super::ModelError;

/// Sinusoidal encoding: `PE[p, 2i] = sin(p / 10000^(2i/d))`,
/// `PE[p, 2i+1] = cos(p / 10000^(2i/d))`, one row per entry of `positions`.
///
/// Rows depend only on the position value, so a sequence with missing steps
/// can pass its true (non-contiguous) positions.
pub fn positional_encoding(positions: &[usize], d: usize) -> Result<Matrix, ModelError> {
    if d == 0 || d % 2 != 0 {
        return Err(ModelError::OddWidth(d));
    }
    if positions.is_empty() {
        return Err(ModelError::ShapeMismatch("no positions to encode".into()));
    }
    let mut pe = Matrix::zeros(positions.len(), d);
    for (row, &p) in positions.iter().enumerate() {
        for i in 0..d / 2 {
            let angle = p as f64 / 10000f64.powf((2 * i) as f64 / d as f64);
            pe.set(row, 2 * i, angle.sin());
            pe.set(row, 2 * i + 1, angle.cos());
        }
    }
    Ok(pe)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn position_zero_alternates() {
        let pe = positional_encoding(&[0], 8).unwrap();
        assert_eq!(pe.row(0), &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn position_one_first_column() {
        let pe = positional_encoding(&[1], 4).unwrap();
        assert!((pe.get(0, 0) - 0.841_471).abs() < 1e-6);
    }

    #[test]
    fn gaps_match_contiguous_rows() {
        let gap = positional_encoding(&[0, 1, 3], 16).unwrap();
        let full = positional_encoding(&[0, 1, 2, 3], 16).unwrap();
        assert_eq!(gap.row(2), full.row(3));
    }

    #[test]
    fn odd_width_rejected() {
        assert!(matches!(positional_encoding(&[0], 5), Err(ModelError::OddWidth(5))));
    }

    #[test]
    fn values_bounded() {
        let pe = positional_encoding(&(0..200).collect::<Vec<_>>(), 64).unwrap();
        assert!(pe.data().iter().all(|v| (-1.0..=1.0).contains(v)));
    }
}
