use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ssm_lfi::gp::{gp_fit, GpConfig};
use ssm_lfi::oracle::{grid_posterior_mean, lg_log_likelihood, rejection_abc};
use ssm_lfi::posterior::{extract_posterior, select_threshold};
use ssm_lfi::ssm::{discrepancy, summarize, ModelKind, Noise, ObservationSet, ParameterVector, SsmModel};

fn lg_observation(theta: f64, seed: u64) -> ObservationSet {
    let lg = SsmModel::new(ModelKind::Lg);
    lg.simulate_observation(&ParameterVector(vec![theta]), Noise::Sampled, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn grid_mean(obs: &ObservationSet) -> f64 {
    grid_posterior_mean(|t| lg_log_likelihood(t, obs), 0.0, 15.0, 10_000)
}

#[test]
fn gp_posterior_matches_grid_quadrature() {
    let lg = SsmModel::new(ModelKind::Lg);
    let obs = lg_observation(7.0, 1);
    let observed = summarize(&obs).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let inputs: Vec<Vec<f64>> = (0..500).map(|i| vec![15.0 * (i as f64 + 0.5) / 500.0]).collect();
    let y: Vec<f64> = inputs
        .iter()
        .map(|x| {
            let sim = lg.simulate_observation(&ParameterVector(x.clone()), Noise::Sampled, &mut rng);
            discrepancy(&observed, &summarize(&sim).unwrap()).unwrap()
        })
        .collect();
    let gp = gp_fit(&inputs, &y, lg.bounds(), &GpConfig::default()).unwrap();
    let best = y.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
    let th = select_threshold(&gp, 0, lg.bounds(), &inputs[best], 3).unwrap();
    let post = extract_posterior(&gp, 0, &th, lg.bounds(), 1000, 1, &mut rng).unwrap();
    let (got, want) = (post.mean()[0], grid_mean(&obs));
    assert!((got - want).abs() < 0.5, "{got} vs {want}");
}

#[test]
fn abc_error_shrinks_with_more_proposals() {
    let lg = SsmModel::new(ModelKind::Lg);
    // averaged over observed datasets: at N = 10³ only one draw is kept
    let errors: Vec<f64> = [1_000, 10_000, 100_000]
        .iter()
        .map(|&n| {
            (0..5u64)
                .map(|s| {
                    let obs = lg_observation(7.0, 10 + s);
                    let abc = rejection_abc(&lg, &summarize(&obs).unwrap(), n, 1e-3, 20 + s).unwrap();
                    assert_eq!(abc.accepted.len(), (n as f64 * 1e-3).ceil() as usize);
                    (abc.mean()[0] - grid_mean(&obs)).abs()
                })
                .sum::<f64>()
                / 5.0
        })
        .collect();
    assert!(errors[0] > errors[1] && errors[1] > errors[2], "{errors:?}");
    assert!(errors[2] < 1.5, "{errors:?}");
}

#[test]
fn tighter_retention_never_raises_the_threshold() {
    let lg = SsmModel::new(ModelKind::Lg);
    let observed = summarize(&lg_observation(4.0, 3)).unwrap();
    let thresholds: Vec<f64> = [0.5, 0.1, 0.01, 0.001]
        .iter()
        .map(|r| rejection_abc(&lg, &observed, 5000, *r, 4).unwrap().threshold)
        .collect();
    assert!(thresholds.windows(2).all(|w| w[1] <= w[0]), "{thresholds:?}");
}

#[test]
fn abc_is_independent_of_thread_count() {
    let lg = SsmModel::new(ModelKind::Lg);
    let observed = summarize(&lg_observation(4.0, 5)).unwrap();
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| rejection_abc(&lg, &observed, 5000, 0.01, 6).unwrap())
    };
    assert_eq!(run(1), run(4));
}
