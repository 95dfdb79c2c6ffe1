//! Independent reference computations: a naive DFT, hand-worked metric
//! fixtures and a QR-derived orthogonal transform for CKA.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tspm_core::metrics::{
    cka, detection_metrics, mase, naive2_forecast, owa, point_metrics, smape,
};
use tspm_core::spectral::{dft_amplitudes, top_k_periods};
use tspm_core::Tensor;

fn naive_dft(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..=n / 2)
        .map(|f| {
            let (mut re, mut im) = (0.0, 0.0);
            for (t, &v) in x.iter().enumerate() {
                let angle = -std::f64::consts::TAU * (f * t % n) as f64 / n as f64;
                re += v * angle.cos();
                im += v * angle.sin();
            }
            re.hypot(im)
        })
        .collect()
}

#[test]
fn dft_matches_naive_transform() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..50 {
        let n = rng.gen_range(8..=256);
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let fast = dft_amplitudes(&x).unwrap();
        let slow = naive_dft(&x);
        assert_eq!(fast.len(), slow.len());
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-9, "n={n}: {a} vs {b}");
        }
        // Parseval over the full spectrum, rebuilt from the one-sided half
        let energy: f64 = x.iter().map(|v| v * v).sum();
        let spectral: f64 = (0..n).map(|f| fast[f.min(n - f)].powi(2)).sum::<f64>() / n as f64;
        assert!((energy - spectral).abs() <= 1e-6 * energy);
    }
}

#[test]
fn top_k_recovers_planted_periods() {
    let t = 96;
    let x: Vec<f64> = (0..t)
        .map(|i| {
            let i = i as f64;
            (std::f64::consts::TAU * i / 24.0).sin() + 0.5 * (std::f64::consts::TAU * i / 8.0).sin()
        })
        .collect();
    let spec = top_k_periods(&Tensor::constant(&[t, 1], x).unwrap(), 2).unwrap();
    assert_eq!(spec.periods(), vec![24, 8]);
    assert!((spec.amplitudes()[0] - 48.0).abs() < 1e-9);
    assert!((spec.amplitudes()[1] - 24.0).abs() < 1e-9);
}

#[test]
fn metric_fixtures() {
    let p = point_metrics(&[110.0], &[100.0]).unwrap();
    assert!((p.mae - 10.0).abs() < 1e-9);
    assert!((p.mape.unwrap() - 10.0).abs() < 1e-9);
    assert_eq!(point_metrics(&[0.0], &[2.0]).unwrap().mse, 4.0);
    assert!((smape(&[110.0], &[100.0]).unwrap().0 - 200.0 * 10.0 / 210.0).abs() < 1e-9);
    assert!((smape(&[-3.0, 2.0], &[3.0, -2.0]).unwrap().0 - 200.0).abs() < 1e-9);
    assert!((mase(&[2.0, 3.0], &[1.0, 2.0], &[1.0, 2.0, 3.0], 1).unwrap() - 1.0).abs() < 1e-9);
    assert!(mase(&[1.0], &[1.0], &[4.0, 4.0, 4.0], 1).is_err());
    assert_eq!(naive2_forecast(&[5.0, 7.0], 1, 3).unwrap(), vec![7.0; 3]);
    assert_eq!(
        naive2_forecast(&[9.0, 1.0, 2.0, 3.0, 4.0], 4, 8).unwrap(),
        vec![1.0, 2.0, 3.0, 4.0, 1.0, 2.0, 3.0, 4.0]
    );
    assert!(naive2_forecast(&[1.0], 1, 0).unwrap().is_empty());

    let insample = [1.0, 3.0, 2.0, 5.0, 4.0];
    let actual = [6.0, 5.0, 7.0];
    let naive = naive2_forecast(&insample, 1, 3).unwrap();
    assert!((owa(&naive, &actual, &insample, 1).unwrap() - 1.0).abs() < 1e-9);
    assert!(owa(&actual, &actual, &insample, 1).unwrap().abs() < 1e-9);

    let d = detection_metrics(&[true, true, false], &[true, false, true]).unwrap();
    assert!(
        (d.precision - 0.5).abs() < 1e-12
            && (d.recall - 0.5).abs() < 1e-12
            && (d.f1 - 0.5).abs() < 1e-12
    );
    let none = detection_metrics(&[false, false], &[true, false]).unwrap();
    assert!(none.zero_division && none.precision == 0.0 && none.f1 == 0.0);
}

fn random_matrix(n: usize, d: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

#[test]
fn cka_invariances() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for &(n, d) in &[(10, 3), (6, 12), (40, 8)] {
        let x = random_matrix(n, d, &mut rng);
        assert!((cka(&x, d, &x, d).unwrap() - 1.0).abs() < 1e-10);
        let scaled: Vec<f64> = x.iter().map(|v| -3.7 * v).collect();
        assert!((cka(&x, d, &scaled, d).unwrap() - 1.0).abs() < 1e-10);

        let q = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0))
            .qr()
            .q();
        let xm = DMatrix::from_row_slice(n, d, &x);
        let rotated = &xm * q;
        let rotated: Vec<f64> = (0..n)
            .flat_map(|i| (0..d).map(move |j| (i, j)))
            .map(|(i, j)| rotated[(i, j)])
            .collect();
        assert!((cka(&x, d, &rotated, d).unwrap() - 1.0).abs() < 1e-10);

        let y = random_matrix(n, 5, &mut rng);
        let v = cka(&x, d, &y, 5).unwrap();
        assert!((0.0..=1.0).contains(&v));
        assert_eq!(v, cka(&y, 5, &x, d).unwrap());
    }
}
