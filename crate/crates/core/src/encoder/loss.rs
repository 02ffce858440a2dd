use super::EncoderError;

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn check_dims(za: &[f64], zp: &[f64], zn: &[f64]) -> Result<(), EncoderError> {
    for other in [zp, zn] {
        if other.len() != za.len() {
            return Err(EncoderError::DimensionMismatch {
                expected: za.len(),
                got: other.len(),
            });
        }
    }
    Ok(())
}

/// `max(0, ‖za − zp‖ − ‖za − zn‖ + margin)`.
pub fn triplet_loss(za: &[f64], zp: &[f64], zn: &[f64], margin: f64) -> Result<f64, EncoderError> {
    check_dims(za, zp, zn)?;
    Ok((euclidean(za, zp) - euclidean(za, zn) + margin).max(0.0))
}

/// Loss and its (sub)gradients with respect to the three embeddings.
///
/// At the hinge kink and for zero-length pair differences the subgradient 0 is used.
pub fn triplet_loss_grad(
    za: &[f64],
    zp: &[f64],
    zn: &[f64],
    margin: f64,
) -> Result<(f64, [Vec<f64>; 3]), EncoderError> {
    check_dims(za, zp, zn)?;
    let d_ap = euclidean(za, zp);
    let d_an = euclidean(za, zn);
    let raw = d_ap - d_an + margin;
    let dim = za.len();
    let mut ga = vec![0.0; dim];
    let mut gp = vec![0.0; dim];
    let mut gn = vec![0.0; dim];
    if raw > 0.0 {
        if d_ap > 0.0 {
            for i in 0..dim {
                let u = (za[i] - zp[i]) / d_ap;
                ga[i] += u;
                gp[i] -= u;
            }
        }
        if d_an > 0.0 {
            for i in 0..dim {
                let u = (za[i] - zn[i]) / d_an;
                ga[i] -= u;
                gn[i] += u;
            }
        }
    }
    Ok((raw.max(0.0), [ga, gp, gn]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn satisfied_margin_is_zero() {
        let za = [0.0, 0.0];
        let zn = [6.0, 8.0];
        assert_eq!(triplet_loss(&za, &za, &zn, 5.0).unwrap(), 0.0);
    }

    #[test]
    fn collapse_costs_margin() {
        let z = [1.0, -2.0, 3.0];
        assert_eq!(triplet_loss(&z, &z, &z, 5.0).unwrap(), 5.0);
        let (l, grads) = triplet_loss_grad(&z, &z, &z, 5.0).unwrap();
        assert_eq!(l, 5.0);
        assert!(grads.iter().flatten().all(|&g| g == 0.0));
    }

    #[test]
    fn direct_arithmetic() {
        let za = [0.0, 0.0];
        let zp = [3.0, 0.0];
        let zn = [0.0, 4.0];
        assert_eq!(triplet_loss(&za, &zp, &zn, 5.0).unwrap(), 4.0);
    }

    #[test]
    fn mismatched_dims() {
        assert!(matches!(
            triplet_loss(&[0.0], &[0.0, 1.0], &[0.0], 1.0),
            Err(EncoderError::DimensionMismatch { expected: 1, got: 2 })
        ));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let za = [0.3, -1.2, 0.8];
        let zp = [1.0, 0.4, -0.5];
        let zn = [0.1, -0.9, 1.1];
        let (_, grads) = triplet_loss_grad(&za, &zp, &zn, 5.0).unwrap();
        let h = 1e-6;
        let mut vecs = [za.to_vec(), zp.to_vec(), zn.to_vec()];
        for which in 0..3 {
            for i in 0..3 {
                let orig = vecs[which][i];
                vecs[which][i] = orig + h;
                let up = triplet_loss(&vecs[0], &vecs[1], &vecs[2], 5.0).unwrap();
                vecs[which][i] = orig - h;
                let down = triplet_loss(&vecs[0], &vecs[1], &vecs[2], 5.0).unwrap();
                vecs[which][i] = orig;
                let fd = (up - down) / (2.0 * h);
                assert!((fd - grads[which][i]).abs() < 1e-7, "{which}/{i}: {fd} vs {}", grads[which][i]);
            }
        }
    }

    fn vec3() -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-10.0..10.0f64, 3)
    }

    proptest! {
        #[test]
        fn non_negative(za in vec3(), zp in vec3(), zn in vec3(), m in 0.01..10.0f64) {
            prop_assert!(triplet_loss(&za, &zp, &zn, m).unwrap() >= 0.0);
        }

        #[test]
        fn translation_invariant(za in vec3(), zp in vec3(), zn in vec3(), shift in vec3()) {
            let add = |v: &[f64]| v.iter().zip(&shift).map(|(a, b)| a + b).collect::<Vec<_>>();
            let base = triplet_loss(&za, &zp, &zn, 5.0).unwrap();
            let moved = triplet_loss(&add(&za), &add(&zp), &add(&zn), 5.0).unwrap();
            prop_assert!((base - moved).abs() < 1e-9);
        }

        #[test]
        fn scale_covariant(za in vec3(), zp in vec3(), zn in vec3(), c in 0.1..10.0f64) {
            let base = triplet_loss(&za, &zp, &zn, 5.0).unwrap();
            prop_assume!(base > 0.0);
            let s = |v: &[f64]| v.iter().map(|x| x * c).collect::<Vec<_>>();
            let scaled = triplet_loss(&s(&za), &s(&zp), &s(&zn), 5.0 * c).unwrap();
            prop_assert!((scaled / c - base).abs() < 1e-9 * (1.0 + base));
        }
    }
}
