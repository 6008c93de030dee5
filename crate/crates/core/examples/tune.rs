use std::time::Instant;

use gam_audit::dataset::{pearson, split_by_group};
use gam_audit::detect::{detect, DetectionConfig};
use gam_audit::synth::{generate, kidney_config, liver_config, sepsis_config};

fn hist(labels: &[f64]) -> [usize; 5] {
    let mut h = [0usize; 5];
    for &l in labels {
        h[(l as usize).min(4)] += 1;
    }
    h
}

fn main() {
    let which = std::env::args().nth(1).unwrap_or_else(|| "all".into());
    let cfg = DetectionConfig::default();

    if which == "all" || which == "liver" {
        let t0 = Instant::now();
        let data = generate(&liver_config(620, 1)).unwrap();
        let n = data.n_rows();
        let h = hist(&data.labels);
        println!("liver: n={n} hist={h:?} p0={:.3}", h[0] as f64 / n as f64);
        let (train, eval) = split_by_group(&data, 0.2, 7).unwrap();
        println!("  split: train={} eval={}", train.n_rows(), eval.n_rows());
        let rep = detect(&train, &eval, 5, &cfg).unwrap();
        for r in rep.ranked.iter().take(8) {
            println!("  {:?} d2={:?} edf={:.1}", r.subset, r.d2, r.edf_total);
        }
        let best_free = rep
            .ranked
            .iter()
            .filter(|r| !r.subset.contains(&"bilirubin".to_string()))
            .map(|r| r.d2)
            .fold(f64::MIN, f64::max);
        println!("  c*={:?} best_bili_free={best_free:.3}", rep.defining_set);
        if let Some(ns) = &rep.nullification {
            for s in ns {
                println!("  null {} = {:.4}", s.feature, s.score);
            }
        }
        println!("  verdicts: {:?} {:?}  elapsed {:.1}s", rep.step1_verdict, rep.step2_verdict, t0.elapsed().as_secs_f64());
    }

    if which == "all" || which == "kidney" {
        let t0 = Instant::now();
        let data = generate(&kidney_config(620, 1)).unwrap();
        let n = data.n_rows();
        let crea = &data.column("creatinine").unwrap().values;
        let urine = &data.column("urine_24h").unwrap().values;
        println!(
            "kidney: n={n} hist={:?} r(crea,urine)={:.3}",
            hist(&data.labels),
            pearson(crea, urine)
        );
        let (train, eval) = split_by_group(&data, 0.2, 7).unwrap();
        let kcfg = DetectionConfig { d2_threshold: 0.90, ..Default::default() };
        let rep = detect(&train, &eval, 6, &kcfg).unwrap();
        for r in rep.ranked.iter().take(10) {
            println!("  {:?} d2={:?} edf={:.1}", r.subset, r.d2, r.edf_total);
        }
        let defining_free = rep
            .ranked
            .iter()
            .filter(|r| {
                !r.subset.contains(&"creatinine".to_string())
                    && !r.subset.contains(&"urine_24h".to_string())
            })
            .map(|r| r.d2)
            .fold(f64::MIN, f64::max);
        println!("  c*={:?} defining_free={defining_free:.3}", rep.defining_set);
        if let Some(ns) = &rep.nullification {
            for s in ns {
                println!("  null {} = {:.4}", s.feature, s.score);
            }
        }
        println!("  verdicts: {:?} {:?}  elapsed {:.1}s", rep.step1_verdict, rep.step2_verdict, t0.elapsed().as_secs_f64());
    }

    if which == "all" || which == "sepsis" {
        let t0 = Instant::now();
        let data = generate(&sepsis_config(620, 1)).unwrap();
        let n = data.n_rows();
        let inf = &data.column("suspected_infection").unwrap().values;
        let sofa = &data.column("sofa_24h").unwrap().values;
        let n_inf = inf.iter().filter(|&&v| v == 1.0).count();
        let n_pos_given_inf = inf
            .iter()
            .zip(&data.labels)
            .filter(|(&i, &l)| i == 1.0 && l == 1.0)
            .count();
        let n_inf_low_sofa = inf
            .iter()
            .zip(sofa.iter())
            .filter(|(&i, &s)| i == 1.0 && s < 2.0)
            .count();
        println!(
            "sepsis: n={n} p_inf={:.3} P(label|inf)={:.4} (target .9814) inf&sofa<2 {}/{} = {:.4} (target {:.4})",
            n_inf as f64 / n as f64,
            n_pos_given_inf as f64 / n_inf as f64,
            n_inf_low_sofa,
            n_inf,
            n_inf_low_sofa as f64 / n_inf as f64,
            522.0 / 28122.0
        );
        let (train, eval) = split_by_group(&data, 0.2, 7).unwrap();
        let rep = detect(&train, &eval, 6, &cfg).unwrap();
        for r in rep.ranked.iter().take(10) {
            println!("  {:?} d2={:?} edf={:.1}", r.subset, r.d2, r.edf_total);
        }
        let defining_free = rep
            .ranked
            .iter()
            .filter(|r| !r.subset.contains(&"suspected_infection".to_string()))
            .map(|r| r.d2)
            .fold(f64::MIN, f64::max);
        println!("  c*={:?} defining_free={defining_free:.3}", rep.defining_set);
        if let Some(ns) = &rep.nullification {
            for s in ns {
                println!("  null {} = {:.4}", s.feature, s.score);
            }
        }
        println!("  verdicts: {:?} {:?}  elapsed {:.1}s", rep.step1_verdict, rep.step2_verdict, t0.elapsed().as_secs_f64());
    }

    if which == "all" || which == "blackbox" {
        use gam_audit::blackbox::{ablate, audit, rounded_accuracy, train_stub, AuditDataset, TrainOptions};
        let t0 = Instant::now();
        let data = generate(&liver_config(620, 1)).unwrap();
        let (train, test) = split_by_group(&data, 0.2, 1).unwrap();
        let all: Vec<String> = data.columns.iter().map(|c| c.name.clone()).collect();
        let no_bili: Vec<String> = all.iter().filter(|n| *n != "bilirubin").cloned().collect();
        let opts = TrainOptions::default();

        let m_with = train_stub(&train, &all, &opts).unwrap();
        let m_without = train_stub(&train, &no_bili, &opts).unwrap();
        for (name, m) in [("with", &m_with), ("without", &m_without)] {
            let acc_tr = rounded_accuracy(&m.predict(&train).unwrap(), &train.labels);
            let acc_te = rounded_accuracy(&m.predict(&test).unwrap(), &test.labels);
            println!("stub {name}: acc_train={acc_tr:.4} acc_test={acc_te:.4} gap={:.4}", (acc_tr - acc_te).abs());
        }

        for (name, m) in [("with", &m_with), ("without", &m_without)] {
            let preds = m.predict(&test).unwrap();
            let a = AuditDataset::new(test.clone(), preds).unwrap();
            let rep = audit(&a, 5, &cfg, 11).unwrap();
            let best = rep.ranked.first().unwrap();
            let best_bili = rep.ranked.iter().filter(|r| r.subset.contains(&"bilirubin".to_string())).map(|r| r.d2).fold(f64::MIN, f64::max);
            let best_free = rep.ranked.iter().filter(|r| !r.subset.contains(&"bilirubin".to_string())).map(|r| r.d2).fold(f64::MIN, f64::max);
            println!(
                "audit {name}: c*={:?} top={:?} d2={:.4} bili_best={best_bili:.4} free_best={best_free:.4} gap={:.4} verdicts {:?}/{:?}",
                rep.defining_set, best.subset, best.d2, (best_bili - best_free).abs(), rep.step1_verdict, rep.step2_verdict
            );
        }

        let ab = ablate(&m_with, &test, "bilirubin").unwrap();
        println!(
            "ablate: before={:.4} after={:.4} majority={:.4} hist={:?} mode_share={:.4}  elapsed {:.1}s",
            ab.accuracy_before, ab.accuracy_after, ab.majority_class_freq, ab.histogram, ab.mode_share,
            t0.elapsed().as_secs_f64()
        );
    }
}
