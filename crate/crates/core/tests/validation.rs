use approx::assert_relative_eq;
use arco::engine::{build_arco_data, predict, EngineSettings};
use arco::panel::{EpiPanel, StateId, StateSeries};
use arco::stats::median;
use arco::validation::{
    coverage_experiment, generate_synthetic, run_placebo, PlaceboSettings, PlaceboWindow, SyntheticSpec, TreatedUnit,
    TreatmentEffect,
};
use arco::wlasso::{select_by_bic, FitSettings, PenaltyWeights, WlassoProblem};
use arco::ArcoError;
use proptest::prelude::*;

fn settings() -> EngineSettings {
    let mut s = EngineSettings::default();
    s.bootstrap.replicates = 200;
    s
}

#[test]
fn generation_is_a_pure_function_of_the_spec() {
    let spec = SyntheticSpec {
        seed: 42,
        ..SyntheticSpec::default()
    };
    assert_eq!(generate_synthetic(&spec).unwrap(), generate_synthetic(&spec).unwrap());
    let other = generate_synthetic(&SyntheticSpec {
        seed: 43,
        ..spec.clone()
    })
    .unwrap();
    assert_ne!(generate_synthetic(&spec).unwrap().treated_log, other.treated_log);
}

#[test]
fn generated_panel_shape() {
    let syn = generate_synthetic(&SyntheticSpec::default()).unwrap();
    assert_eq!(syn.controls.len(), 6);
    assert_eq!(syn.panel.states().count(), 7);
    let t = syn.panel.require(&syn.treated).unwrap();
    assert_eq!(t.last_epi_day(), Some(58));
    assert_eq!(syn.true_counterfactual_log.len(), 58);
    let design = syn.study_design();
    assert_eq!(design.controls(), syn.controls);
    assert_eq!(design.treated(), vec![syn.treated.clone()]);
}

#[test]
fn invalid_specs_are_rejected() {
    let bad = [
        SyntheticSpec {
            n_controls: 0,
            ..SyntheticSpec::default()
        },
        SyntheticSpec {
            last_in_sample: 58,
            ..SyntheticSpec::default()
        },
        SyntheticSpec {
            sigma: -1.0,
            ..SyntheticSpec::default()
        },
        SyntheticSpec {
            treated: TreatedUnit::Combination {
                constant: 0.0,
                weights: vec![1.0],
                trend: 0.0,
            },
            ..SyntheticSpec::default()
        },
    ];
    for spec in bad {
        assert!(matches!(generate_synthetic(&spec), Err(ArcoError::Config(_))));
    }
}

#[test]
fn no_effect_means_unit_true_ratio() {
    let syn = generate_synthetic(&SyntheticSpec::default()).unwrap();
    for t in 1..=58 {
        assert_eq!(syn.true_ratio_at(t), 1.0);
    }
}

#[test]
fn linear_effect_has_closed_form_ratio() {
    let syn = generate_synthetic(&SyntheticSpec {
        effect: TreatmentEffect::Linear { slope: -0.05 },
        ..SyntheticSpec::default()
    })
    .unwrap();
    assert_relative_eq!(syn.true_ratio_at(58), (0.05f64 * 22.0).exp(), max_relative = 1e-12);
    assert_eq!(syn.true_ratio_at(36), 1.0);
    assert_relative_eq!(syn.true_ratio_at(37), 0.05f64.exp(), max_relative = 1e-12);
}

#[test]
fn noiseless_planted_combination_is_recovered() {
    let syn = generate_synthetic(&SyntheticSpec {
        intercept_range: (20.0, 22.0),
        sigma: 0.0,
        treated: TreatedUnit::Combination {
            constant: -0.4,
            weights: vec![0.0, 0.5, 0.0, 0.25, 0.0, 0.0],
            trend: 0.3,
        },
        seed: 9,
        ..SyntheticSpec::default()
    })
    .unwrap();
    let data = build_arco_data(&syn.panel, &syn.treated, &syn.controls, 10, 36, 58, 20).unwrap();
    let kappa = PenaltyWeights::from_design(&data.x_in).unwrap();
    let problem = WlassoProblem::new(&data.x_in, &data.y_in, &kappa, &FitSettings::default()).unwrap();
    let fit = problem.fit(problem.lambda_max() * 1e-12, None).unwrap();
    let path = predict(fit.intercept, &fit.omega, &data.x_out);
    for (i, p) in path.iter().enumerate() {
        let truth = syn.true_counterfactual_at(37 + i as u32);
        assert!((p - truth).abs() < 1e-6, "t = {}: {p} vs {truth}", 37 + i);
    }
}

#[test]
fn placebo_never_reads_its_own_series() {
    let syn = generate_synthetic(&SyntheticSpec {
        seed: 5,
        ..SyntheticSpec::default()
    })
    .unwrap();
    let design = syn.study_design();
    let state = StateId::new("C3");
    let base = run_placebo(&syn.panel, &design, &state, &PlaceboSettings::default(), &settings()).unwrap();
    assert!(!base.estimate.donors.contains(&state));
    assert!(!base.estimate.fit.column_names.iter().any(|n| n == "C3"));
    assert_eq!(base.last_in_sample, 36);
    assert_eq!(base.ratio_series.len(), 49);
    assert_eq!(base.ratio_series[0].0, 10);

    // tripling the placebo unit shifts its log series by ln 3 and nothing else
    let poisoned = EpiPanel::from_series(syn.panel.states().map(|s| {
        let series = syn.panel.require(s).unwrap();
        if *s == state {
            StateSeries {
                cum_cases: series.cum_cases.iter().map(|c| 3 * c).collect(),
                ..series.clone()
            }
        } else {
            series.clone()
        }
    }));
    let shifted = run_placebo(&poisoned, &design, &state, &PlaceboSettings::default(), &settings()).unwrap();
    assert_relative_eq!(
        shifted.estimate.fit.intercept - base.estimate.fit.intercept,
        3f64.ln(),
        epsilon = 1e-8
    );
    for (a, b) in base.estimate.fit.omega.iter().zip(&shifted.estimate.fit.omega) {
        assert!((a - b).abs() < 1e-8);
    }
}

#[test]
fn placebo_window_variants() {
    let syn = generate_synthetic(&SyntheticSpec::default()).unwrap();
    let design = syn.study_design();
    let lagged = PlaceboSettings {
        window: PlaceboWindow::PlusLag,
        ..PlaceboSettings::default()
    };
    let run = run_placebo(&syn.panel, &design, &StateId::new("C1"), &lagged, &settings()).unwrap();
    assert_eq!(run.last_in_sample, 46);
    assert_eq!(run.estimate.path.t_start, 47);
}

#[test]
fn placebo_errors() {
    let syn = generate_synthetic(&SyntheticSpec {
        n_controls: 2,
        ..SyntheticSpec::default()
    })
    .unwrap();
    let design = syn.study_design();
    let p = PlaceboSettings::default();
    assert!(matches!(
        run_placebo(&syn.panel, &design, &syn.treated, &p, &settings()),
        Err(ArcoError::Config(_))
    ));
    assert!(matches!(
        run_placebo(&syn.panel, &design, &StateId::new("C1"), &p, &settings()),
        Err(ArcoError::Config(_))
    ));
}

#[test]
fn placebo_ratio_is_centred_on_one_without_an_effect() {
    let ratios: Vec<f64> = (0..500u64)
        .map(|seed| {
            let syn = generate_synthetic(&SyntheticSpec {
                seed,
                ..SyntheticSpec::default()
            })
            .unwrap();
            let data = build_arco_data(&syn.panel, &syn.treated, &syn.controls, 10, 36, 58, 20).unwrap();
            let kappa = PenaltyWeights::from_design(&data.x_in).unwrap();
            let fit = select_by_bic(&data.x_in, &data.y_in, &kappa, 100, &FitSettings::default())
                .unwrap()
                .fit;
            let point = predict(fit.intercept, &fit.omega, &data.x_out);
            (point[21] - data.actual_out[21].ln()).exp()
        })
        .collect();
    let m = median(&ratios);
    assert!((0.95..=1.05).contains(&m), "median placebo ratio {m}");
}

#[test]
fn coverage_experiment_needs_enough_reps() {
    assert!(matches!(
        coverage_experiment(&SyntheticSpec::default(), 199, &settings(), 1),
        Err(ArcoError::Config(_))
    ));
}

#[test]
fn synthetic_panel_round_trips_through_csv() {
    let syn = generate_synthetic(&SyntheticSpec::default()).unwrap();
    let mut buf = Vec::new();
    syn.panel.write_normalized_csv(&mut buf).unwrap();
    let back = EpiPanel::read_normalized_csv(buf.as_slice()).unwrap();
    assert_eq!(back, syn.panel);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn observed_counts_are_rounded_exponentials(seed in 0u64..10_000) {
        let syn = generate_synthetic(&SyntheticSpec { seed, ..SyntheticSpec::default() }).unwrap();
        let series = syn.panel.require(&syn.treated).unwrap();
        for (i, c) in series.cum_cases.iter().enumerate() {
            prop_assert_eq!(*c, syn.treated_log[i].exp().round().max(1.0) as u64);
        }
    }

    #[test]
    fn constant_effect_gives_constant_true_ratio(seed in 0u64..10_000, value in -1.0f64..1.0) {
        let syn = generate_synthetic(&SyntheticSpec {
            seed,
            effect: TreatmentEffect::Constant { value },
            ..SyntheticSpec::default()
        }).unwrap();
        for t in 37..=58 {
            prop_assert!((syn.true_ratio_at(t) - (-value).exp()).abs() < 1e-12);
        }
    }
}
