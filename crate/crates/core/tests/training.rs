use eegmi_core::nn::checkpoint::{decode, encode};
use eegmi_core::nn::{init_parameters, ModelSpec};
use eegmi_core::optim::OptimizerKind;
use eegmi_core::synthetic::{synthetic_epochs, SyntheticConfig};
use eegmi_core::train::{
    dataset_loss, evaluate, fit, initial_state, split_indices, train, Dataset, StopReason, TrainConfig, TrainState,
};
use eegmi_core::Error;

fn small_data(epochs: usize) -> Dataset {
    let cfg = SyntheticConfig {
        epochs,
        channels: 4,
        samples: 400,
        active_channels: 2,
        ..Default::default()
    };
    Dataset::from_epochs(&synthetic_epochs(&cfg).unwrap()).unwrap()
}

fn small_config(kind: OptimizerKind) -> TrainConfig {
    TrainConfig {
        batch_size: 8,
        max_epochs: 12,
        ..TrainConfig::convnet(kind)
    }
}

fn halves(ds: &Dataset) -> (Dataset, Dataset) {
    let (tr, va) = split_indices(ds.len(), 0.15, 0).unwrap();
    (ds.subset(&tr), ds.subset(&va))
}

#[test]
fn resume_from_checkpoint_matches_uninterrupted_run() {
    let spec = ModelSpec::default_convnet(4, 400, 2).unwrap();
    let (tr, va) = halves(&small_data(40));
    for kind in [OptimizerKind::Sgdm, OptimizerKind::Adam, OptimizerKind::RmsProp] {
        let cfg = small_config(kind);
        let fresh = || initial_state(init_parameters(&spec, 3).unwrap(), &cfg).unwrap();

        let full = fit(&spec, &tr, &va, &cfg, fresh(), &mut |_| Ok(())).unwrap();

        let mut saved = None;
        let mut grab = |s: &TrainState| {
            if s.next_epoch == 5 {
                saved = Some(encode(&s.to_checkpoint(&spec)).unwrap());
            }
            Ok(())
        };
        fit(&spec, &tr, &va, &TrainConfig { max_epochs: 5, ..cfg.clone() }, fresh(), &mut grab).unwrap();
        let state = TrainState::from_checkpoint(decode(&saved.unwrap()).unwrap()).unwrap();
        assert_eq!(state.next_epoch, 5);
        let resumed = fit(&spec, &tr, &va, &cfg, state, &mut |_| Ok(())).unwrap();

        assert_eq!(resumed.history, full.history, "{kind:?}");
        assert_eq!(resumed.params, full.params, "{kind:?}");
    }
}

#[test]
fn history_respects_limits_and_best_revert_is_exact() {
    let spec = ModelSpec::default_convnet(4, 400, 2).unwrap();
    let (tr, va) = halves(&small_data(40));
    let cfg = TrainConfig {
        patience: 3,
        max_epochs: 30,
        ..small_config(OptimizerKind::Adam)
    };
    let out = fit(&spec, &tr, &va, &cfg, initial_state(init_parameters(&spec, 1).unwrap(), &cfg).unwrap(), &mut |_| {
        Ok(())
    })
    .unwrap();
    let h = &out.history;
    assert!(h.epochs.len() <= cfg.max_epochs);
    assert!(h.epochs.iter().enumerate().all(|(i, r)| r.epoch == i));
    match h.stop_reason {
        StopReason::Patience => assert_eq!(h.epochs.len(), h.best_epoch + cfg.patience + 1),
        StopReason::MaxEpochs => assert_eq!(h.epochs.len(), cfg.max_epochs),
    }
    let best = h.epochs.iter().map(|r| r.val_loss).fold(f64::INFINITY, f64::min);
    assert_eq!(h.best_val_loss, best);
    assert_eq!(h.epochs[h.best_epoch].val_loss, best);
    assert_eq!(dataset_loss(&spec, &out.params, &va, cfg.loss).unwrap(), best);
}

#[test]
fn mlp_reverts_to_best_and_evaluates_every_test_item() {
    let spec = ModelSpec::mlp(6, &[5], 2).unwrap();
    let n = 60;
    let mut data = Vec::new();
    let labels: Vec<_> = (0..n).map(|i| eegmi_core::edf::Label::ALL[i % 2]).collect();
    for (i, l) in labels.iter().enumerate() {
        let s = if l.index() == 0 { -1.0 } else { 1.0 };
        data.extend((0..6).map(|j| s * (1.0 + ((i * 7 + j) % 5) as f64 * 0.1)));
    }
    let ds = Dataset::new(vec![6], data, labels, vec![1; n]).unwrap();
    let cfg = TrainConfig {
        max_epochs: 20,
        ..TrainConfig::mlp()
    };
    let out = train(&spec, init_parameters(&spec, 2).unwrap(), &ds, &cfg).unwrap();
    assert!(out.standardizer.is_some());
    assert!(out.history.epochs.len() <= 20);
    let cm = evaluate(&spec, &out.params, &ds).unwrap();
    assert_eq!(cm.total(), n as u64);
}

#[test]
fn non_finite_loss_is_reported_as_divergence() {
    let spec = ModelSpec::default_convnet(4, 400, 2).unwrap();
    let (mut tr, va) = halves(&small_data(20));
    tr.data[17] = f64::NAN;
    let cfg = small_config(OptimizerKind::Adam);
    let state = initial_state(init_parameters(&spec, 0).unwrap(), &cfg).unwrap();
    let err = fit(&spec, &tr, &va, &cfg, state, &mut |_| Ok(())).unwrap_err();
    assert!(matches!(err, Error::Divergence { epoch: 0, .. }), "{err}");
}
