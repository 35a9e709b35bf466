use super::*;
use crate::labels::FillPolicy;
use crate::synth::SynthFunnelConfig;

fn tiny_plan(settings: Vec<Setting>) -> ExperimentPlan {
    let mut plan = ExperimentPlan::new(
        DataSource::Synth(SynthFunnelConfig { n0: 300, ..SynthFunnelConfig::with_stages(2, 300, 3) }),
        SplitSpec::Kfold { k: 3, seed: 1 },
    );
    plan.settings = settings;
    plan.aemtd_sgd.max_epochs = 3;
    plan.mlssl_sgd.max_epochs = 3;
    plan.linear.epochs = 10;
    plan
}

#[test]
fn minimal_plan_gives_one_row_per_stage() {
    let plan = tiny_plan(vec![Setting::NMbt]);
    let report = run_plan(&plan, 1).unwrap();
    assert_eq!(report.rows.len(), 2);
    assert!(report.errors.is_empty());
    assert_eq!(report.runs.len(), 3 * 2);
}

#[test]
fn all_settings_run_and_audit_clean() {
    let plan = tiny_plan(Setting::ALL.to_vec());
    let report = run_plan(&plan, 2).unwrap();
    assert!(report.errors.is_empty(), "{:?}", report.errors);
    assert_eq!(report.audits.len(), 3);
    for a in &report.audits {
        assert!(a.is_clean());
    }
    for r in &report.rows {
        let m = r.mean_f1.unwrap();
        assert!((0.0..=1.0).contains(&m));
    }
}

#[test]
fn report_means_match_run_records() {
    let plan = tiny_plan(vec![Setting::NMbt, Setting::AemtdImc]);
    let report = run_plan(&plan, 1).unwrap();
    let means = stage_means(&report.runs);
    for r in &report.rows {
        assert!((means[&(r.setting, r.stage)] - r.mean_f1.unwrap()).abs() < 1e-12);
    }
}

#[test]
fn stage_counts_match_known_labels() {
    let mut plan = tiny_plan(vec![Setting::NMbt]);
    plan.fill_policy = FillPolicy::MaskAfterEvent;
    let report = run_plan(&plan, 1).unwrap();
    let DataSource::Synth(cfg) = &plan.source else { unreachable!() };
    let (ds, _) = crate::synth::synth_funnel(cfg).unwrap();
    let labels = ds.label_matrix(FillPolicy::MaskAfterEvent);
    for s in 1..=2 {
        assert_eq!(report.row(Setting::NMbt, s).unwrap().n, labels.known_count(s - 1));
    }
}

#[test]
fn same_seed_same_report() {
    let plan = tiny_plan(vec![Setting::NMbt, Setting::AemtdImlSsl]);
    let render = |r: &StageReport| {
        let mut buf = Vec::new();
        r.write_report_csv(&mut buf).unwrap();
        buf
    };
    let a = run_plan(&plan, 1).unwrap();
    let b = run_plan(&plan, 3).unwrap();
    assert_eq!(render(&a), render(&b));
}

#[test]
fn cell_failures_do_not_stop_siblings() {
    let mut plan = tiny_plan(vec![Setting::NMbt, Setting::AemtdMbt]);
    // divergent encoder training fails every completion cell
    plan.aemtd_sgd.learning_rate = 1.0;
    plan.aemtd.rec_weight = 1e300;
    let report = run_plan(&plan, 1).unwrap();
    assert!(report.errors.iter().all(|e| e.setting == Setting::AemtdMbt));
    assert!(!report.errors.is_empty());
    assert!(report.mean_f1(Setting::NMbt, 1).is_some());
    assert!(report.mean_f1(Setting::AemtdMbt, 1).is_none());
}

#[test]
fn report_files_are_written() {
    let plan = tiny_plan(vec![Setting::NMbt]);
    let report = run_plan(&plan, 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    report.write_dir(dir.path()).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("report.csv")).unwrap();
    assert!(csv.starts_with("setting,stage,mean_f1,std_f1,n"));
    let manifest: Manifest =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest.runs.len(), 3);
    assert_eq!(manifest.evaluation, EVALUATION_RULE);
}
