use std::collections::BTreeSet;

use arraydiag::array_model::{dft_codebook, ArrayConfig};
use arraydiag::cli::records;
use arraydiag::diagnosis::{
    diagnose_proposed, measure, proposed_combiner, ChannelKnowledge, NoiseModel, StoppingRule,
};
use arraydiag::fault_channel::{
    apply_faults, sample_faults, sample_paths, synthesize_channel, FaultMode,
};
use arraydiag::simulator::{
    preset, run_sweep, run_trial, trial_stream, CsiErrorModel, ExperimentSpec, OperatingPoint,
    PresetName, StreamPurpose, Sweep, SweepParam, Technique, TechniqueSelection,
};
use arraydiag::sparse_recovery::{exhaustive_solve, extract_support, RecoveryProblem};

fn spec(param: SweepParam, values: Vec<f64>) -> ExperimentSpec {
    ExperimentSpec {
        experiment_id: "pipeline".into(),
        n_elements: 64,
        n_faults: 3,
        fault_mode: FaultMode::Partial,
        n_paths: 2,
        quantized: false,
        technique: TechniqueSelection::Both,
        sweep: Sweep { param, values },
        fixed: OperatingPoint {
            m_measurements: 30,
            ..OperatingPoint::default()
        },
        csi_error: CsiErrorModel::Explicit,
        trials: 60,
        master_seed: 11,
    }
}

#[test]
fn small_array_matches_exhaustive_search() {
    let n = 16;
    let cfg = ArrayConfig::new(n).unwrap();
    let book = dft_codebook(&cfg);
    let mut exact = 0;
    for trial in 0..100 {
        let stream = |p| trial_stream(5, trial, p);
        let mut scenario = stream(StreamPurpose::Scenario);
        let paths = sample_paths(&cfg, 1, true, &mut scenario).unwrap();
        let faults = sample_faults(n, 2, FaultMode::Partial, &mut scenario).unwrap();
        let pair = apply_faults(&synthesize_channel(&cfg, &paths).unwrap(), &faults).unwrap();
        let mut comb = stream(StreamPurpose::Combiner(Technique::Proposed));
        let w = proposed_combiner(&cfg, Some(&book), &paths.angles(), 12, &mut comb).unwrap();
        let y = measure(
            &w,
            &pair,
            &NoiseModel::noiseless(),
            &mut stream(StreamPurpose::Noise),
        )
        .unwrap();
        let knowledge = ChannelKnowledge::angles_only(paths.angles());
        let omp = diagnose_proposed(&cfg, &knowledge, &y, &w, StoppingRule::sparsity(2)).unwrap();
        let ex = exhaustive_solve(
            &RecoveryProblem::with_sparsity(w.sensing(), y, 2).unwrap(),
            2,
        )
        .unwrap();
        let ex_set: BTreeSet<usize> = ex.support.iter().copied().collect();
        // Noiseless and identifiable: the exhaustive optimum is the truth.
        assert_eq!(ex_set, faults.indices(), "trial {trial}");
        exact += usize::from(extract_support(&omp, 2) == faults.indices());
    }
    assert!(exact >= 95, "{exact}/100");
}

#[test]
fn more_snr_never_hurts_much() {
    let s = spec(SweepParam::SnrDb, vec![40.0, 0.0, 10.0]);
    let result = run_sweep(&s, None).unwrap();
    for t in [Technique::Proposed, Technique::Difference] {
        let p: Vec<f64> = result.series(t).iter().map(|r| r.p_success).collect();
        assert_eq!(result.series(t)[0].sweep_value, 0.0);
        assert!(p[2] >= p[0], "{t:?} {p:?}");
        assert!(p[2] > 0.8, "{t:?} {p:?}");
    }
}

#[test]
fn workers_do_not_change_results() {
    let s = spec(SweepParam::Measurements, vec![10.0, 30.0]);
    let one = run_sweep(&s, Some(1)).unwrap();
    let three = run_sweep(&s, Some(3)).unwrap();
    let default = run_sweep(&s, None).unwrap();
    assert_eq!(one, three);
    assert_eq!(one, default);
}

#[test]
fn rows_count_individual_trials() {
    let s = spec(SweepParam::AoaErrorVar, vec![0.0, 1e-3]);
    let result = run_sweep(&s, None).unwrap();
    for row in &result.rows {
        let recount = (0..s.trials)
            .filter(|&k| run_trial(&s, &row.point, k, row.technique).unwrap())
            .count() as u64;
        assert_eq!(recount, row.successes);
    }
}

#[test]
fn records_reproduce_their_rows() {
    let mut fig3 = preset(PresetName::Fig3).with_trials(40).specs.remove(0);
    fig3.sweep.values = vec![15.0, 30.0];
    let result = run_sweep(&fig3, None).unwrap();
    for record in records(&result, &fig3) {
        let again = run_sweep(&record.to_spec(), None).unwrap();
        assert_eq!(again.rows.len(), 1);
        assert_eq!(again.rows[0].p_success, record.p_success, "{record:?}");
    }
}

#[test]
fn seed_changes_outcomes() {
    let mut a = spec(SweepParam::SnrDb, vec![10.0]);
    a.trials = 200;
    let mut b = a.clone();
    b.master_seed = 12;
    let (ra, rb) = (run_sweep(&a, None).unwrap(), run_sweep(&b, None).unwrap());
    assert_ne!(
        ra.rows.iter().map(|r| r.successes).collect::<Vec<_>>(),
        rb.rows.iter().map(|r| r.successes).collect::<Vec<_>>()
    );
}
