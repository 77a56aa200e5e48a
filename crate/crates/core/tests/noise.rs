use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rclqr::linalg::{Mat, Vector};
use rclqr::model::{uav, NoiseDistribution, NoiseOptions};
use rclqr::NoiseModel;

/// Running sums of `f` and `f²` for a standard error.
#[derive(Default, Clone, Copy)]
struct Moment {
    sum: f64,
    sq: f64,
}

impl Moment {
    fn add(&mut self, v: f64) {
        self.sum += v;
        self.sq += v * v;
    }
    fn mean(&self, n: f64) -> f64 {
        self.sum / n
    }
    fn se(&self, n: f64) -> f64 {
        let m = self.mean(n);
        ((self.sq / n - m * m).max(0.0) / n).sqrt()
    }
}

/// Monte Carlo reference for every statistic, centered at the exact mean.
fn check_against_samples(noise: &NoiseModel, q: &Mat, samples: usize, seed: u64) {
    let st = noise.stats();
    let n = st.dim();
    let trace_wq = (&st.cov * q).trace();
    let mut mean = vec![Moment::default(); n];
    let mut cov = vec![Moment::default(); n * n];
    let mut m3 = vec![Moment::default(); n];
    let mut m4 = Moment::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = vec![0.0; n];
    for _ in 0..samples {
        noise.sampler().sample_into(&mut rng, &mut w);
        let e = Vector::from_fn(n, |i, _| w[i] - st.mean[i]);
        let quad = e.dot(&(q * &e));
        for i in 0..n {
            mean[i].add(w[i]);
            m3[i].add(e[i] * quad);
            for j in 0..n {
                cov[i * n + j].add(e[i] * e[j]);
            }
        }
        m4.add((quad - trace_wq).powi(2));
    }
    let s = samples as f64;
    let within = |m: &Moment, exact: f64, what: &str| {
        let dev = (m.mean(s) - exact).abs();
        assert!(
            dev <= 3.0 * m.se(s) + 1e-12 * exact.abs().max(1.0),
            "{what}: sample {} exact {exact} se {}",
            m.mean(s),
            m.se(s)
        );
    };
    for i in 0..n {
        within(&mean[i], st.mean[i], "mean");
        within(&m3[i], st.m3[i], "m3");
        for j in 0..n {
            within(&cov[i * n + j], st.cov[(i, j)], "cov");
        }
    }
    within(&m4, st.m4, "m4");
}

#[test]
fn scalar_gaussian_moments_by_formula_and_samples() {
    let (sigma2, qv) = (1.7, 0.6);
    let q = Mat::from_element(1, 1, qv);
    let noise = NoiseModel::new(
        NoiseDistribution::Gaussian {
            mean: Vector::zeros(1),
            cov: Mat::from_element(1, 1, sigma2),
        },
        None,
        &q,
        NoiseOptions::default(),
    )
    .unwrap();
    let st = noise.stats();
    assert!((st.m4 - 2.0 * qv * qv * sigma2 * sigma2).abs() < 1e-12);
    assert_eq!(st.m3[0], 0.0);
    check_against_samples(&noise, &q, 1_000_000, 4);
}

#[test]
fn uav_gust_statistics_match_a_large_sample() {
    let noise = uav::noise();
    check_against_samples(&noise, &uav::q(), 10_000_000, 17);
}
