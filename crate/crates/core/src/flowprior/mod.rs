//! Conditional Real NVP action priors.
//!
//! A prior is a stack of affine coupling layers, each followed (on the way
//! from action to latent) by a per-dimension normalization. Couplings may see
//! a conditioning vector: the previous actions, the state, or both.

mod conditioning;
mod flow;
mod train;

pub use conditioning::{Conditioning, ConditioningSpec};
pub use flow::{CouplingLayer, FlowConfig, FlowPrior, NormLayer, PARAM_KIND};
pub use train::{train_on_pairs, train_prior, PriorTrainConfig, TrainReport};

#[cfg(test)]
mod tests {
    use std::f64::consts::{E, PI};

    use super::*;
    use crate::diffmath::Matrix;
    use crate::error::Error;
    use crate::mazeworld::{OfflineDataset, Trajectory};
    use crate::netlib::AdamConfig;
    use crate::rng::{standard_normal, uniform};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_config(cond: ConditioningSpec) -> FlowConfig {
        FlowConfig {
            hidden: 16,
            embed_dim: 8,
            ..FlowConfig::new(cond)
        }
    }

    /// Perturbs every parameter and normalization statistic so that no layer
    /// is the identity.
    fn randomize(prior: &mut FlowPrior, rng: &mut ChaCha8Rng, scale: f64) {
        for p in prior.trainable_params_mut() {
            for x in p.data_mut() {
                *x += scale * rng.gen_range(-1.0..1.0);
            }
        }
        for i in 0..prior.norms().len() {
            let n = prior.norm_mut(i);
            for x in n.running_mean.data_mut() {
                *x = rng.gen_range(-0.5..0.5);
            }
            for x in n.running_var.data_mut() {
                *x = rng.gen_range(0.5..2.0);
            }
        }
    }

    fn std_normal_logpdf(row: &[f64]) -> f64 {
        row.iter()
            .map(|x| -0.5 * x * x - 0.5 * (2.0 * PI).ln())
            .sum()
    }

    #[test]
    fn fresh_flow_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cond = ConditioningSpec::last_actions(2, 2).unwrap();
        let prior = FlowPrior::new(small_config(cond), &mut rng).unwrap();
        let z = standard_normal(&mut rng, 8, 2);
        let c = standard_normal(&mut rng, 8, 4);
        let (a, ld) = prior.forward(&z, &c).unwrap();
        assert!(a.max_abs_diff(&z) < 1e-12);
        assert!(ld.max_abs() < 1e-9);
        let (z2, ld2) = prior.inverse(&z, &c).unwrap();
        assert!(z2.max_abs_diff(&z) < 1e-12);
        assert!(ld2.max_abs() < 1e-9);
        let lp = prior.log_density(&z, &c).unwrap();
        for r in 0..8 {
            assert!((lp.get(r, 0) - std_normal_logpdf(z.row(r))).abs() < 1e-9);
        }
    }

    #[test]
    fn round_trips_in_frozen_mode() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for cond in [
            ConditioningSpec::unconditional(2),
            ConditioningSpec::last_actions(1, 2).unwrap(),
            ConditioningSpec::new(Conditioning::StateAndLastAction, 2, 2).unwrap(),
        ] {
            let mut prior = FlowPrior::new(small_config(cond), &mut rng).unwrap();
            randomize(&mut prior, &mut rng, 0.3);
            let n = 1000;
            let z = standard_normal(&mut rng, n, 2);
            let c = uniform(&mut rng, n, cond.cond_dim(), -1.0, 1.0);
            let (a, ld_f) = prior.forward(&z, &c).unwrap();
            let (z2, ld_i) = prior.inverse(&a, &c).unwrap();
            assert!(z2.max_abs_diff(&z) <= 1e-6, "{}", z2.max_abs_diff(&z));
            let mut worst: f64 = 0.0;
            for r in 0..n {
                worst = worst.max((ld_f.get(r, 0) + ld_i.get(r, 0)).abs());
            }
            assert!(worst <= 1e-8, "{worst}");
            let (a2, _) = prior.forward(&z2, &c).unwrap();
            assert!(a2.max_abs_diff(&a) <= 1e-6);

            // Density through the inverse equals base density at z minus the
            // forward log-determinant.
            let lp = prior.log_density(&a, &c).unwrap();
            for r in 0..n {
                let via_forward = std_normal_logpdf(z.row(r)) - ld_f.get(r, 0);
                assert!((lp.get(r, 0) - via_forward).abs() <= 1e-8);
            }
        }
    }

    #[test]
    fn single_coupling_log_det_is_sum_of_masked_scales() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cfg = FlowConfig {
            n_layers: 1,
            ..small_config(ConditioningSpec::unconditional(3))
        };
        let mut prior = FlowPrior::new(cfg, &mut rng).unwrap();
        // Output layer zeroed except the scale biases: constant raw scales.
        let raw = [0.7, -0.4, 1.3];
        let last = prior.coupling_mut(0).st_net_mut().final_layer_mut();
        for (j, r) in raw.iter().enumerate() {
            last.bias.set(0, j, *r);
        }
        let keep = prior.couplings()[0].keep_mask().clone();
        let gain = prior.couplings()[0].gain();
        let want: f64 = (0..3)
            .filter(|&j| keep.get(0, j) == 0.0)
            .map(|j| gain * f64::tanh(raw[j]))
            .sum();
        let z = standard_normal(&mut rng, 5, 3);
        let (a, ld) = prior.forward(&z, &FlowPrior::no_cond(5)).unwrap();
        for r in 0..5 {
            // Normalization is the identity up to rounding.
            assert!((ld.get(r, 0) - want).abs() < 1e-9);
            for (j, rj) in raw.iter().enumerate() {
                let s = if keep.get(0, j) == 0.0 {
                    gain * rj.tanh()
                } else {
                    0.0
                };
                assert!((a.get(r, j) - z.get(r, j) * s.exp()).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn one_dimensional_density_integrates_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut prior =
            FlowPrior::new(small_config(ConditioningSpec::unconditional(1)), &mut rng).unwrap();
        randomize(&mut prior, &mut rng, 0.3);
        let n = 60_000;
        let (lo, hi) = (-40.0, 40.0);
        let h = (hi - lo) / n as f64;
        let grid = Matrix::column_vector(
            &(0..n)
                .map(|i| lo + (i as f64 + 0.5) * h)
                .collect::<Vec<_>>(),
        );
        let lp = prior.log_density(&grid, &FlowPrior::no_cond(n)).unwrap();
        let total: f64 = lp.data().iter().map(|l| l.exp() * h).sum();
        assert!((total - 1.0).abs() < 1e-2, "{total}");
    }

    #[test]
    fn random_inputs_never_produce_nan() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cond = ConditioningSpec::last_actions(2, 2).unwrap();
        let mut prior = FlowPrior::new(small_config(cond), &mut rng).unwrap();
        randomize(&mut prior, &mut rng, 0.5);
        let n = 10_000;
        let a = uniform(&mut rng, n, 2, -1.0, 1.0);
        let c = uniform(&mut rng, n, 4, -1.0, 1.0);
        let (z, ld) = prior.inverse(&a, &c).unwrap();
        assert!(z.is_finite() && ld.is_finite());
    }

    #[test]
    fn shape_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cond = ConditioningSpec::last_actions(1, 2).unwrap();
        let prior = FlowPrior::new(small_config(cond), &mut rng).unwrap();
        assert!(prior
            .forward(&Matrix::zeros(3, 3), &Matrix::zeros(3, 2))
            .is_err());
        assert!(prior
            .inverse(&Matrix::zeros(3, 2), &Matrix::zeros(3, 5))
            .is_err());
        assert!(prior
            .log_density(&Matrix::zeros(3, 2), &Matrix::zeros(2, 2))
            .is_err());
    }

    #[test]
    fn identity_samples_are_clamped_normals() {
        let cond = ConditioningSpec::unconditional(2);
        let cfg = FlowConfig {
            low: vec![-1.0, -0.5],
            high: vec![1.0, 0.5],
            ..small_config(cond)
        };
        let prior = FlowPrior::new(cfg, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
        let n = 10_000;
        let s = prior
            .sample(&FlowPrior::no_cond(n), &mut ChaCha8Rng::seed_from_u64(7))
            .unwrap();
        let raw = standard_normal(&mut ChaCha8Rng::seed_from_u64(7), n, 2);
        for r in 0..n {
            assert!((s.get(r, 0) - raw.get(r, 0).clamp(-1.0, 1.0)).abs() < 1e-12);
            assert!((s.get(r, 1) - raw.get(r, 1).clamp(-0.5, 0.5)).abs() < 1e-12);
            assert!(s.get(r, 0).abs() <= 1.0 && s.get(r, 1).abs() <= 0.5);
        }
        // Clamping is symmetric, so the mean stays at zero.
        for j in 0..2 {
            let col: Vec<f64> = (0..n).map(|r| s.get(r, j)).collect();
            let m = col.iter().sum::<f64>() / n as f64;
            let sd = (col.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
            assert!(m.abs() < 3.0 * sd / (n as f64).sqrt(), "dim {j}: {m}");
        }
    }

    #[test]
    fn param_file_round_trip_is_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let cond = ConditioningSpec::new(Conditioning::State, 2, 2).unwrap();
        let mut prior = FlowPrior::new(small_config(cond), &mut rng).unwrap();
        randomize(&mut prior, &mut rng, 0.2);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("prior.params");
        prior.save(&path).unwrap();
        let back = FlowPrior::load(&path).unwrap();
        assert_eq!(back, prior);

        let other = small_config(ConditioningSpec::unconditional(2));
        let file = prior.to_param_file();
        assert!(matches!(
            FlowPrior::from_param_file(&file, Some(&other)),
            Err(Error::SpecMismatch(_))
        ));
    }

    fn dataset_1col(series: Vec<Vec<[f64; 2]>>) -> OfflineDataset {
        let trajs = series
            .into_iter()
            .map(|s| {
                let n = s.len();
                let flat: Vec<f64> = s.into_iter().flatten().collect();
                Trajectory::new(Matrix::zeros(n, 2), Matrix::from_vec(n, 2, flat).unwrap()).unwrap()
            })
            .collect();
        OfflineDataset::new(2, 2, trajs).unwrap()
    }

    fn ar1_dataset(
        rng: &mut ChaCha8Rng,
        n_traj: usize,
        len: usize,
        phi: f64,
        noise: f64,
    ) -> OfflineDataset {
        let stationary = noise / (1.0 - phi * phi).sqrt();
        let series = (0..n_traj)
            .map(|_| {
                let mut a = [0.0; 2];
                let mut out = Vec::with_capacity(len);
                for t in 0..len {
                    for x in &mut a {
                        let xi: f64 = rng.sample(rand_distr::StandardNormal);
                        *x = if t == 0 {
                            stationary * xi
                        } else {
                            phi * *x + noise * xi
                        };
                    }
                    out.push(a);
                }
                out
            })
            .collect();
        dataset_1col(series)
    }

    fn fast_hyper(epochs: usize) -> PriorTrainConfig {
        PriorTrainConfig {
            epochs,
            batch_size: 200,
            adam: AdamConfig::new(2e-3).with_weight_decay(1e-6),
        }
    }

    fn frozen_nll(prior: &FlowPrior, data: &OfflineDataset) -> f64 {
        let (a, c) = prior.cond_spec().pairs(data).unwrap();
        let lp = prior.log_density(&a, &c).unwrap();
        -lp.mean()
    }

    #[test]
    fn zero_epochs_returns_initial_prior() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let data = ar1_dataset(&mut rng, 2, 50, 0.9, 0.1);
        let cond = ConditioningSpec::unconditional(2);
        let cfg = small_config(cond);
        let init = FlowPrior::new(cfg.clone(), &mut ChaCha8Rng::seed_from_u64(10)).unwrap();
        let (trained, report) = train_prior(
            &data,
            cond,
            cfg,
            &fast_hyper(0),
            &mut ChaCha8Rng::seed_from_u64(10),
            |_, _| {},
        )
        .unwrap();
        assert_eq!(trained, init);
        assert!(report.epoch_nll.is_empty());
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let cond = ConditioningSpec::unconditional(2);
        let data = OfflineDataset::new(2, 2, vec![]).unwrap();
        let r = train_prior(
            &data,
            cond,
            small_config(cond),
            &fast_hyper(1),
            &mut ChaCha8Rng::seed_from_u64(0),
            |_, _| {},
        );
        assert!(r.is_err());
    }

    #[test]
    fn nan_data_reports_divergence_with_last_good_prior() {
        let cond = ConditioningSpec::unconditional(2);
        let data = dataset_1col(vec![vec![[0.1, f64::NAN]; 10]]);
        let r = train_prior(
            &data,
            cond,
            small_config(cond),
            &fast_hyper(3),
            &mut ChaCha8Rng::seed_from_u64(0),
            |_, _| {},
        );
        match r {
            Err(Error::PriorDiverged { epoch, last_good }) => {
                assert_eq!(epoch, 0);
                assert_eq!(
                    *last_good,
                    FlowPrior::new(small_config(cond), &mut ChaCha8Rng::seed_from_u64(0)).unwrap()
                );
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn fits_standard_normal_entropy() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let series = vec![(0..8000)
            .map(|_| {
                [
                    rng.sample(rand_distr::StandardNormal),
                    rng.sample(rand_distr::StandardNormal),
                ]
            })
            .collect()];
        let data = dataset_1col(series);
        let cond = ConditioningSpec::unconditional(2);
        let (prior, report) = train_prior(
            &data,
            cond,
            small_config(cond),
            &fast_hyper(8),
            &mut rng,
            |_, _| {},
        )
        .unwrap();
        let entropy = (2.0 * PI * E).ln();
        let last = *report.epoch_nll.last().unwrap();
        assert!(
            (last - entropy).abs() / entropy < 0.05,
            "{last} vs {entropy}"
        );
        assert!((frozen_nll(&prior, &data) - entropy).abs() / entropy < 0.05);
    }

    #[test]
    fn conditioning_on_last_action_captures_ar1_structure() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let data = ar1_dataset(&mut rng, 40, 200, 0.9, 0.1);
        let uncond = ConditioningSpec::unconditional(2);
        let k1 = ConditioningSpec::last_actions(1, 2).unwrap();
        let (pu, _) = train_prior(
            &data,
            uncond,
            small_config(uncond),
            &fast_hyper(15),
            &mut rng,
            |_, _| {},
        )
        .unwrap();
        let (pc, _) = train_prior(
            &data,
            k1,
            small_config(k1),
            &fast_hyper(15),
            &mut rng,
            |_, _| {},
        )
        .unwrap();
        let (nu, nc) = (frozen_nll(&pu, &data), frozen_nll(&pc, &data));
        // Marginal vs conditional Gaussian entropies differ by ~0.83 nats/dim.
        assert!((nu - nc) / 2.0 >= 0.5, "uncond {nu}, cond {nc}");
    }

    #[test]
    fn smoothed_nll_is_non_increasing_with_default_optimizer() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let data = ar1_dataset(&mut rng, 40, 200, 0.9, 0.1);
        let k1 = ConditioningSpec::last_actions(1, 2).unwrap();
        let hyper = PriorTrainConfig {
            epochs: 20,
            ..PriorTrainConfig::default()
        };
        let (_, report) =
            train_prior(&data, k1, small_config(k1), &hyper, &mut rng, |_, _| {}).unwrap();
        let nll = &report.epoch_nll;
        let ma: Vec<f64> = nll
            .windows(5)
            .map(|w| w.iter().sum::<f64>() / 5.0)
            .collect();
        for w in ma.windows(2) {
            assert!(w[1] <= w[0], "{ma:?}");
        }
    }

    #[test]
    fn batch_nll_gradient_matches_finite_differences() {
        use crate::diffmath::check::{max_grad_error, numeric_grad};
        use crate::netlib::Params;
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for cond in [
            ConditioningSpec::unconditional(2),
            ConditioningSpec::last_actions(2, 2).unwrap(),
            ConditioningSpec::new(Conditioning::StateAndLastAction, 2, 2).unwrap(),
        ] {
            let cfg = FlowConfig {
                n_layers: 2,
                hidden: 6,
                embed_dim: 3,
                ..FlowConfig::new(cond)
            };
            let mut prior = FlowPrior::new(cfg, &mut rng).unwrap();
            randomize(&mut prior, &mut rng, 0.3);
            let a = Matrix::from_vec(6, 2, (0..12).map(|_| rng.gen_range(-0.9..0.9)).collect())
                .unwrap();
            let d = cond.cond_dim();
            let c = if d == 0 {
                FlowPrior::no_cond(6)
            } else {
                Matrix::from_vec(6, d, (0..6 * d).map(|_| rng.gen_range(-1.0..1.0)).collect())
                    .unwrap()
            };
            let (_, grads) = prior.batch_nll(&a, &c).unwrap();
            let base: Vec<Matrix> = prior.params().into_iter().cloned().collect();
            let numeric = numeric_grad(
                |ps| {
                    let mut p = prior.clone();
                    for (dst, src) in p.params_mut().into_iter().zip(ps) {
                        *dst = src.clone();
                    }
                    p.batch_nll(&a, &c).unwrap().0
                },
                &base,
                1e-6,
            );
            let err = max_grad_error(&grads, &numeric);
            assert!(err <= 1e-5, "{cond:?}: {err}");
        }
    }

    #[test]
    fn conditioning_on_iid_data_gains_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let data = ar1_dataset(&mut rng, 40, 200, 0.0, 0.3);
        let uncond = ConditioningSpec::unconditional(2);
        let k1 = ConditioningSpec::last_actions(1, 2).unwrap();
        let (pu, _) = train_prior(
            &data,
            uncond,
            small_config(uncond),
            &fast_hyper(10),
            &mut rng,
            |_, _| {},
        )
        .unwrap();
        let (pc, _) = train_prior(
            &data,
            k1,
            small_config(k1),
            &fast_hyper(10),
            &mut rng,
            |_, _| {},
        )
        .unwrap();
        let (nu, nc) = (frozen_nll(&pu, &data), frozen_nll(&pc, &data));
        assert!(((nu - nc) / 2.0).abs() <= 0.05, "uncond {nu}, cond {nc}");
    }
}
