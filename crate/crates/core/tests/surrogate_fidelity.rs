use softfin::datagen::{generate_dataset, DataLog, DatasetConfig};
use softfin::plant::{MotorCommand, PlantParams};
use softfin::surrogate::{evaluate_surrogate, predict_log, train_surrogate, SurrogateModel, TrainConfig};

fn reduced() -> (SurrogateModel, Vec<DataLog>) {
    let ds = generate_dataset(
        &PlantParams::default(),
        &DatasetConfig {
            train_logs: 6,
            test_logs: 2,
            samples: 2000,
            ..Default::default()
        },
        11,
    )
    .unwrap();
    let cfg = TrainConfig {
        max_epochs: 8,
        min_examples: 100,
        ..Default::default()
    };
    let (model, _, _) = train_surrogate(&ds.train(), &cfg, 3).unwrap();
    (model, ds.test().into_iter().cloned().collect())
}

#[test]
fn reduced_surrogate_tracks_held_out_logs() {
    let (model, test) = reduced();
    let refs: Vec<&DataLog> = test.iter().collect();
    let table = evaluate_surrogate(&model, &refs).unwrap();
    assert!(table.theta_r2_rollout > 0.9, "{}", table.theta_r2_rollout);
    for a in 0..2 {
        assert!(table.force_rmse_ratio_rollout[a] < 0.5, "{:?}", table.force_rmse_ratio_rollout);
    }
    let csv = table.to_csv();
    assert!(csv.lines().next().unwrap().contains("RMSE,MAE,DTW"), "{csv}");

    // delaying the stream by rest ticks delays the forced predictions
    let log = &test[0];
    let k = 37;
    let mut delayed = DataLog::default();
    for _ in 0..k {
        delayed.push(0.0, MotorCommand::NEUTRAL, 0.0, 0.0, 0.0);
    }
    for i in 0..log.len() {
        delayed.push(0.0, log.command(i), log.theta[i], log.fx[i], log.fy[i]);
    }
    let a = predict_log(&model, log).unwrap();
    let b = predict_log(&model, &delayed).unwrap();
    for i in 0..log.len() {
        assert!((a.theta_step[i] - b.theta_step[i + k]).abs() < 1e-12, "t={i}");
    }
}
