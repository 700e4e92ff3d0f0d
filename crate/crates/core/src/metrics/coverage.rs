use crate::error::{Error, Result};
use crate::numerics::Tensor;

fn check(samples: &Tensor, points: &Tensor, radius: f64) -> Result<()> {
    if !(radius > 0.0) {
        return Err(Error::invalid(format!("radius={radius} must be positive")));
    }
    if samples.rows() > 0 && points.rows() > 0 && samples.row_len() != points.row_len() {
        return Err(Error::ShapeMismatch {
            op: "coverage",
            left: samples.shape().to_vec(),
            right: points.shape().to_vec(),
        });
    }
    Ok(())
}

fn within(a: &[f64], b: &[f64], r2: f64) -> bool {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() <= r2
}

fn fraction_near(queries: &Tensor, targets: &Tensor, radius: f64) -> f64 {
    if queries.rows() == 0 {
        return 0.0;
    }
    let r2 = radius * radius;
    let hits = (0..queries.rows())
        .filter(|&i| (0..targets.rows()).any(|j| within(queries.row(i), targets.row(j), r2)))
        .count();
    hits as f64 / queries.rows() as f64
}

/// Fraction of samples within L2 `radius` of any forget point.
pub fn forget_hit_rate(samples: &Tensor, forget_points: &Tensor, radius: f64) -> Result<f64> {
    check(samples, forget_points, radius)?;
    Ok(fraction_near(samples, forget_points, radius))
}

/// Fraction of reference points with at least one sample within `radius`.
pub fn retain_coverage(samples: &Tensor, retain_manifold: &Tensor, radius: f64) -> Result<f64> {
    check(samples, retain_manifold, radius)?;
    Ok(fraction_near(retain_manifold, samples, radius))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(v: &[[f64; 2]]) -> Tensor {
        Tensor::from_rows(&v.iter().map(|p| p.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn counting() {
        let forget = pts(&[[0.0, 0.0]]);
        let mut s: Vec<[f64; 2]> = (0..7).map(|i| [5.0 + i as f64, 5.0]).collect();
        s.extend([[0.01, 0.0], [0.0, -0.05], [0.03, 0.03]]);
        assert!((forget_hit_rate(&pts(&s), &forget, 0.1).unwrap() - 0.3).abs() < 1e-15);
        assert_eq!(forget_hit_rate(&forget, &forget, 0.1).unwrap(), 1.0);
        assert_eq!(
            forget_hit_rate(&pts(&[[1.0, 1.0]]), &forget, 0.1).unwrap(),
            0.0
        );
    }

    #[test]
    fn half_covered() {
        let manifold = pts(&[[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [3.0, 0.0]]);
        let samples = pts(&[[0.0, 0.05], [1.0, -0.05]]);
        assert_eq!(retain_coverage(&samples, &manifold, 0.1).unwrap(), 0.5);
        assert_eq!(retain_coverage(&manifold, &manifold, 0.1).unwrap(), 1.0);
        assert_eq!(
            retain_coverage(&pts(&[[9.0, 9.0]]), &manifold, 0.1).unwrap(),
            0.0
        );
    }

    #[test]
    fn radius_must_be_positive() {
        let p = pts(&[[0.0, 0.0]]);
        assert!(forget_hit_rate(&p, &p, 0.0).is_err());
        assert!(retain_coverage(&p, &p, -1.0).is_err());
    }
}
