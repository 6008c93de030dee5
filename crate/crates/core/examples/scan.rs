use gam_audit::dataset::{apply_scaling, split_by_group, standardize};
use gam_audit::gam::{optimize_lambdas, GamConfig};
use gam_audit::spline::make_knots;
use gam_audit::synth::{generate, liver_config};

fn main() {
    // (noise, sd_c2, sd_comp2, sd3, sd4, sd5, mean5)
    for (noise, s0b, s2, s3, s4, s5, m5) in [
        (0.02, 0.10, 0.06, 0.05, 0.015, 0.015, 2.60),
        (0.02, 0.10, 0.06, 0.05, 0.020, 0.020, 2.60),
        (0.02, 0.10, 0.06, 0.04, 0.015, 0.015, 2.85),
        (0.03, 0.10, 0.06, 0.05, 0.020, 0.020, 2.60),
        (0.02, 0.08, 0.05, 0.04, 0.012, 0.012, 2.60),
    ] {
        let mut cfg = liver_config(620, 1);
        cfg.features[0].noise_sd = noise;
        cfg.severity_mixture[1].sd = s0b;
        cfg.severity_mixture[2].sd = s2;
        cfg.severity_mixture[3].sd = s3;
        cfg.severity_mixture[4].sd = s4;
        cfg.severity_mixture[5].sd = s5;
        cfg.severity_mixture[5].mean = m5;
        let data = generate(&cfg).unwrap();
        let mean = {
            let v = &data.column("bilirubin").unwrap().values;
            v.iter().sum::<f64>() / v.len() as f64
        };
        let (train, eval) = split_by_group(&data, 0.2, 7).unwrap();
        let kv = make_knots(&train.column("bilirubin").unwrap().values, 10).unwrap();
        let (strain, sc) = standardize(&train).unwrap();
        let seval = apply_scaling(&eval, &sc);
        let g = optimize_lambdas(&strain, &["bilirubin".into()], &sc, &GamConfig::default()).unwrap();
        let d2 = g.deviance(&seval).unwrap().d2.unwrap();
        println!(
            "noise={noise} s0b={s0b} s2={s2} s3={s3} s4={s4} s5={s5} m5={m5}: d2={d2:.5} mean={mean:.3} knots={:?}",
            kv.interior.iter().map(|v| (v * 100.0).round() / 100.0).collect::<Vec<_>>()
        );
    }
}
