//! Browser bindings for three small demos. Every export takes plain values
//! and returns a JSON string; failures come back as `{"error": "..."}` so
//! the page never has to catch exceptions.

use serde_json::{json, Value};
use wasm_bindgen::prelude::wasm_bindgen;

use pta_core::control::ControlPolicy;
use pta_core::data::{LabelKind, SplitRatio, SyntheticUniverseSpec, generate_universe};
use pta_core::model::{Activation, LayerSpec, ModelSpec};
use pta_core::theory::{self, RandomInstance, WitnessInstance};
use pta_core::training::{self, DecoderReduction, OptimizerConfig, RunSpec, Sharing, TrainSchedule};

fn respond(result: pta_core::Result<Value>) -> String {
    match result {
        Ok(v) => v.to_string(),
        Err(e) => json!({ "error": e.to_string() }).to_string(),
    }
}

fn parse_rows(text: &str) -> pta_core::Result<Vec<Vec<f64>>> {
    serde_json::from_str(text).map_err(|e| pta_core::PtaError::Validation(format!("expected [[numbers]]: {e}")))
}

/// Non-simulability ratio test on a user-edited instance. `decoders` and
/// `points` are JSON arrays of equal-length number arrays; decimals are
/// converted to exact rationals before the check.
#[wasm_bindgen]
pub fn check_witness(y: f64, decoders: &str, points: &str) -> String {
    respond((|| {
        let inst = WitnessInstance::from_f64(y, &parse_rows(decoders)?, &parse_rows(points)?, 1.0)?;
        let report = theory::check_nonsimulability(&inst)?;
        Ok(serde_json::to_value(report)?)
    })())
}

/// The reference witness, for the page's reset button.
#[wasm_bindgen]
pub fn reference_witness() -> String {
    json!({
        "y": 1,
        "decoders": [[2, 3], [4, 5]],
        "points": [[6, 7], [8, 9]],
    })
    .to_string()
}

/// Trains a tiny single-task run and returns per-meta-iteration curves:
/// best validation error, mean decoder dropout rate, and each decoder's cost.
#[wasm_bindgen]
pub fn train_curves(policy: &str, decoders: usize, seed: u64, meta_iterations: usize) -> String {
    respond((|| {
        let universe = SyntheticUniverseSpec {
            num_tasks: 1,
            input_dim: 8,
            samples_per_task: vec![300],
            teacher_width: 8,
            label_kind: LabelKind::Classification,
            outputs: 3,
            noise: 0.3,
            mixing: 1.0,
            shared_head_seed: None,
            split: SplitRatio::default(),
        };
        let datasets = generate_universe(&universe, seed)?;
        let spec = RunSpec {
            model: ModelSpec {
                input_dim: 8,
                hidden_layers: vec![LayerSpec {
                    units: 32,
                    activation: Activation::Relu,
                }],
                embedding_dim: 16,
                embedding_activation: Activation::Relu,
                internal_dropout: 0.0,
            },
            num_decoders: decoders,
            policy: ControlPolicy::named(policy)?,
            schedule: TrainSchedule {
                meta_iteration_length: 10,
                meta_iterations: meta_iterations.clamp(1, 200),
                batch_size: 32,
            },
            optimizer: OptimizerConfig::adam().with_learning_rate(3e-3),
            reduction: DecoderReduction::Mean,
            sharing: Sharing::Shared,
            seed,
            snapshots: false,
        };
        let out = training::run(&spec, &datasets, &mut |_| Ok(()))?;
        let m = &out.metrics;
        Ok(json!({
            "policy": spec.policy.name(),
            "best_val_error": m.iter().map(|r| r.best_val_error).collect::<Vec<_>>(),
            "train_loss": m.iter().map(|r| r.train_loss).collect::<Vec<_>>(),
            "mean_dropout": m
                .iter()
                .map(|r| r.dropout_rates[0].iter().sum::<f64>() / r.dropout_rates[0].len() as f64)
                .collect::<Vec<_>>(),
            "costs": m.iter().map(|r| r.costs[0].clone()).collect::<Vec<_>>(),
            "test_error": out.final_eval.test_error,
        }))
    })())
}

/// Simulation by duplication on a random model: the relative gap between
/// `copies` duplicates at rate `gamma / copies` and one decoder at `gamma`,
/// with `offset` added to the last duplicate. Also reports ensemble collapse
/// for a random decoder bank of `copies` distinct decoders.
#[wasm_bindgen]
pub fn duplication_gap(seed: u64, copies: usize, offset: f64) -> String {
    respond((|| {
        let inst = RandomInstance::generate(seed, 1);
        let dup = theory::verify_simulation_by_duplication(&inst, &inst.decoders[0], 0.05, copies, offset)?;
        let bank = RandomInstance::generate(seed, copies.max(2));
        let ens = theory::verify_ensemble_collapse(&bank)?;
        Ok(json!({
            "duplication_relative_error": dup.relative_error,
            "duplication_within_tolerance": dup.passed,
            "ensemble_relative_error": ens.ensemble_relative_error,
            "pta_relative_error": ens.pta_relative_error,
        }))
    })())
}
