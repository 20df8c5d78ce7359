use eit_shapes::measurements::phantom;
use eit_shapes::recon::{parse_guess_spec, reconstruct, run_variants, ReconConfig, StopReason, Variant, VariantBase};
use eit_shapes::{synthesize, MeshOptions};

fn heart_lung_guess() -> &'static str {
    "ngon:0.27,0.5,0.1,16,0.5;ngon:0.73,0.5,0.1,16,0.5;ngon:0.5,0.42,0.1,16,2"
}

#[test]
fn variants_over_measurement_levels_all_descend() {
    let base = VariantBase {
        truth: phantom("heart_lung").unwrap(),
        guess: parse_guess_spec(heart_lung_guess()).unwrap(),
        config: ReconConfig { max_iter: 6, refine_levels: 2, ..ReconConfig::default() },
        data_refine_levels: 3,
        seed: 40,
    };
    let variants: Vec<Variant> = [4, 8, 16]
        .iter()
        .map(|&level| Variant { noise: 0.0, level, values_known: true, tol: None })
        .collect();
    let out = run_variants(&base, &variants);
    assert_eq!(out.len(), 3);
    for (o, v) in out.iter().zip(&variants) {
        let r = o.result.as_ref().unwrap();
        let j = r.trace.misfits();
        assert_eq!(j.len(), 6);
        assert!(j[5] < j[0], "level {}: {j:?}", v.level);
        assert_eq!(o.achieved_noise, 0.0);
    }
    assert_eq!(out.iter().map(|o| o.seed).collect::<Vec<_>>(), [40, 41, 42]);
}

#[test]
fn noisy_variant_records_level_and_failures_stay_isolated() {
    let base = VariantBase {
        truth: phantom("square").unwrap(),
        guess: parse_guess_spec("ngon:0.6,0.6,0.1,8,10").unwrap(),
        config: ReconConfig { max_iter: 2, refine_levels: 1, ..ReconConfig::default() },
        data_refine_levels: 2,
        seed: 0,
    };
    let variants = [
        Variant { noise: 0.03, level: 4, values_known: true, tol: None },
        Variant { noise: 0.0, level: 5, values_known: true, tol: None },
        Variant { noise: 0.0, level: 4, values_known: false, tol: Some(1e-9) },
    ];
    let out = run_variants(&base, &variants);
    assert!((out[0].achieved_noise - 0.03).abs() < 0.01);
    assert!(out[1].result.is_err());
    let r = out[2].result.as_ref().unwrap();
    assert!(r.trace.records.iter().all(|x| x.coeff_gradient.is_some()));
}

#[test]
fn unknown_values_move_toward_truth() {
    let truth = phantom("square").unwrap();
    let data = synthesize(&truth, 4, 3, &MeshOptions::default()).unwrap();
    let guess = parse_guess_spec("ngon:0.625,0.625,0.17,4,5").unwrap();
    let cfg = ReconConfig { max_iter: 15, refine_levels: 2, alpha: eit_shapes::recon::Steps::Uniform(20.0), ..ReconConfig::default() };
    let r = reconstruct(&data, &guess, &cfg).unwrap();
    assert_eq!(r.trace.stop, Some(StopReason::MaxIterations));
    let v = r.conductivity.values()[0];
    assert!(v > 5.0, "inclusion value {v}");
    assert_eq!(r.conductivity.background(), 1.0);
}
