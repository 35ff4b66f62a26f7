//! Cross-module integration checks on a micro network and a tiny synthetic
//! sequence: variant wiring, first-frame separation, pretrained-backbone
//! loading, end-to-end tracking smoke.

use dmcnet_core::checkpoint;
use dmcnet_core::eval;
use dmcnet_core::model::{build_network, ModelConfig, Network};
use dmcnet_core::rng::Rng;
use dmcnet_core::synth::{self, SynthSpec};
use dmcnet_core::tracker::{self, NetworkModel, TrackerConfig};
use dmcnet_core::trainer::{self, TrainConfig};

fn micro_model() -> ModelConfig {
    ModelConfig {
        backbone_channels: [4, 6, 8],
        fc_dim: 12,
        dropout: 0.0,
        init_seed: 3,
        ..ModelConfig::default()
    }
}

fn micro_tracker() -> TrackerConfig {
    TrackerConfig {
        n_candidates: 48,
        init_pos: 40,
        init_neg: 140,
        init_iters: 60,
        update_iters: 2,
        batch_pos: 16,
        batch_neg: 48,
        mem_pos_per_frame: 6,
        mem_neg_per_frame: 12,
        seed: 11,
        ..TrackerConfig::default()
    }
}

fn tiny_sequence(seed: u64, with_motion: bool) -> dmcnet_core::data::RgbtSequence {
    let spec = SynthSpec {
        name: format!("itest_{seed}"),
        length: 8,
        width: 200,
        height: 150,
        seed,
        start_x: 80.0,
        start_y: 60.0,
        vel_x: 1.0,
        vel_y: 0.5,
        sway_amp: 1.0,
        camera_events: if with_motion {
            vec![synth::CameraEvent {
                frame: 4,
                dx: -24,
                dy: 0,
            }]
        } else {
            vec![]
        },
        ..SynthSpec::default()
    };
    synth::synth_generate(&spec).unwrap()
}

fn quick_net(dmc: bool) -> Network<f32> {
    let seq = tiny_sequence(5, false);
    let cfg = ModelConfig {
        dmc_enabled: dmc,
        ..micro_model()
    };
    let train = TrainConfig {
        cycles: 14,
        frames_per_batch: 2,
        pos_per_batch: 8,
        neg_per_batch: 16,
        lr_backbone_fc: 0.01,
        lr_adapter_dmc: 0.02,
        seed: 2,
        ..TrainConfig::default()
    };
    trainer::train::<f32>(std::slice::from_ref(&seq), &cfg, &train)
        .unwrap()
        .0
}

#[test]
fn variant_wiring_disables_components_exactly() {
    // DMC off + RS off must produce zero mutual-condition invocations and
    // zero flow computations — the baseline wiring.
    let net = quick_net(true);
    let seq = tiny_sequence(9, true);
    let mut cfg = micro_tracker();
    cfg.use_dmc = false;
    cfg.use_resample = false;
    let run = tracker::track_sequence(&net, &seq, &cfg).unwrap();
    assert_eq!(run.stats.dmc_invocations, 0, "mutual condition ran while disabled");
    assert_eq!(run.stats.flow_calls, 0, "flow ran while re-sampling disabled");
    assert_eq!(run.stats.resample_events, 0);
    assert_eq!(run.boxes.len(), seq.len());

    // Full wiring on a camera-motion sequence does run the blocks.
    let mut full = micro_tracker();
    full.use_dmc = true;
    full.use_resample = true;
    let run = tracker::track_sequence(&net, &seq, &full).unwrap();
    assert!(run.stats.dmc_invocations > 0, "mutual condition never invoked");
}

#[test]
fn first_frame_finetuning_separates_samples() {
    let net = quick_net(true);
    let seq = tiny_sequence(13, false);
    let cfg = micro_tracker();
    let gt = seq.frames[0].gt.unwrap();
    let mut rng = Rng::new(4);
    let model = NetworkModel::for_sequence(net, &cfg, &mut rng);
    let flow = Box::new(dmcnet_core::motion::BlockMatchingFlow::default());
    let tracker =
        tracker::Tracker::init(cfg.clone(), model, flow, &seq.frames[0], gt, 21).unwrap();

    // The short-term memory right after init holds exactly the first-frame
    // training samples: the fine-tuned classifier must separate them.
    let acc = tracker.training_set_accuracy().unwrap();
    assert!(acc >= 0.95, "first-frame training accuracy {acc:.3} < 0.95");
}

#[test]
fn pretrained_backbone_file_loads_into_network() {
    let dir = std::env::temp_dir().join("dmcnet_itest_pretrained");
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("backbone.ckpt");
    // Author a backbone-only container with recognizable values.
    let cfg = micro_model();
    let donor: Network<f64> = build_network(&cfg, 1).unwrap();
    let mut entries = Vec::new();
    donor.visit_params(&mut |name, t| {
        if name.starts_with("backbone.") {
            entries.push((
                name,
                t.shape().to_vec(),
                t.iter().map(|v| v + 0.125).collect::<Vec<f64>>(),
            ));
        }
    });
    checkpoint::save(&path, &entries).unwrap();

    let loaded_cfg = ModelConfig {
        pretrained_backbone: Some(path.clone()),
        strict_load: true,
        init_seed: 99, // different random init; backbone must come from the file
        ..cfg
    };
    let net: Network<f64> = build_network(&loaded_cfg, 1).unwrap();
    let mut checked = 0;
    net.visit_params(&mut |name, t| {
        if name == "backbone.conv1.weight" {
            let donor_w = &donor.backbone[0].conv.weight;
            for (a, b) in t.iter().zip(donor_w.iter()) {
                assert!((a - (b + 0.125)).abs() < 1e-12);
            }
            checked += 1;
        }
    });
    assert_eq!(checked, 1);
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn tracked_synthetic_sequence_evaluates_cleanly() {
    let net = quick_net(true);
    let seq = tiny_sequence(31, false);
    let run = tracker::track_sequence(&net, &seq, &micro_tracker()).unwrap();
    let results = vec![eval::SequenceResult::from_run(&seq, &run)];
    let report = eval::evaluate(&results, false);
    assert_eq!(report.frames, seq.len());
    // An easy clean sequence should be tracked essentially perfectly.
    assert!(report.pr_at >= 0.9, "PR {:.3} on a trivial sequence", report.pr_at);
}
