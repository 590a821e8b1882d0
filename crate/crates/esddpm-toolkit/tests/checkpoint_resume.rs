//! Interrupted training resumed from a checkpoint must be
//! indistinguishable from uninterrupted training: same parameters, same
//! optimizer state, same RNG position, bit for bit.

use esddpm_core::diffusion::{DiffusionModel, SigmaMode, TrainConfig, Trainer};
use esddpm_core::nn::{Network, NetworkConfig};
use esddpm_core::schedule::NoiseSchedule;
use esddpm_toolkit::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use esddpm_toolkit::dataset::{make_dataset, DatasetKind, DatasetSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn fresh_model(seed: u64) -> DiffusionModel<Network> {
    let schedule = NoiseSchedule::linear(40, 1e-4, 0.02).unwrap();
    let mut cfg = NetworkConfig::new(2, 40).with_hidden(vec![16]);
    cfg.time_dim = 8;
    let net = Network::new(&cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    DiffusionModel::new(net, schedule, 20, SigmaMode::BetaTilde).unwrap()
}

#[test]
fn resumed_training_is_bitwise_identical_to_uninterrupted_training() {
    let spec = DatasetSpec::new(DatasetKind::TwoMoons, 256);
    let data = make_dataset(&spec).unwrap();
    let config = TrainConfig {
        iterations: 30,
        batch_size: 32,
        learning_rate: 1e-3,
        seed: 9,
    };

    // Straight-through run: 30 iterations without interruption.
    let mut straight = Trainer::new(fresh_model(9), config.clone()).unwrap();
    let mut straight_losses = Vec::new();
    for _ in 0..30 {
        straight_losses.push(straight.step(&data.points, None).unwrap());
    }

    // Interrupted run: 15 iterations, checkpoint to disk, reload,
    // resume for the remaining 15.
    let mut first_half = Trainer::new(fresh_model(9), config.clone()).unwrap();
    let mut resumed_losses = Vec::new();
    for _ in 0..15 {
        resumed_losses.push(first_half.step(&data.points, None).unwrap());
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mid.ckpt");
    let mut ckpt = Checkpoint::from_model(&first_half.model);
    ckpt.trainer = Some(first_half.state());
    save_checkpoint(&path, &ckpt).unwrap();
    drop(first_half);

    let restored = load_checkpoint(&path).unwrap();
    let model = restored.diffusion_model().unwrap();
    let state = restored.trainer.expect("trainer state was checkpointed");
    assert_eq!(state.iterations_done, 15);
    let mut second_half = Trainer::resume(model, config, &state).unwrap();
    for _ in 0..15 {
        resumed_losses.push(second_half.step(&data.points, None).unwrap());
    }

    // Bit-for-bit agreement: losses, parameters, optimizer moments, RNG.
    assert_eq!(straight_losses, resumed_losses);
    assert_eq!(
        straight.model.net.flat_params(),
        second_half.model.net.flat_params()
    );
    assert_eq!(straight.state(), second_half.state());
}

#[test]
fn a_checkpoint_written_twice_is_the_same_file() {
    let model = fresh_model(3);
    let ckpt = Checkpoint::from_model(&model);
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.ckpt");
    let b = dir.path().join("b.ckpt");
    save_checkpoint(&a, &ckpt).unwrap();
    save_checkpoint(&b, &ckpt).unwrap();
    assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
}
