use drumsmith::models::{
    load_model, save_model, BasicDrumGen, BasicDrumGenConfig, Checkpointed, DecoderVariant, Infill, InfillConfig,
    Locator, LocatorConfig,
};
use drumsmith::pianoroll::{MaSample, PaSample, SAMPLE_STEPS};
use drumsmith::tokenizer::encode;
use drumsmith::Error;
use drumsmith_nn::{Graph, Tensor};

fn ma() -> MaSample {
    let mut m = MaSample::silent();
    for t in 0..SAMPLE_STEPS {
        if t % 6 < 3 {
            m.set_velocity(t, t % 4, (t / 16) % 63, 64 + (t % 60) as u8);
        }
    }
    m
}

fn pa() -> PaSample {
    PaSample::from_fn(|t, l| (l == 3 && t % 8 == 0) || (l == 0 && t % 16 == 8) || (l == 2 && t % 4 == 0))
}

fn small_basic() -> BasicDrumGenConfig {
    BasicDrumGenConfig {
        model_dim: 16,
        heads: 2,
        token_embed_dim: 8,
        embed_hidden: 32,
        embed_dim: 16,
        ff_hidden: 32,
        ..Default::default()
    }
}

fn small_locator() -> LocatorConfig {
    LocatorConfig {
        model_dim: 16,
        heads: 2,
        hidden: 32,
        embed_hidden: 32,
        embed_dim: 16,
        ff_hidden: 32,
        ..Default::default()
    }
}

fn small_infill(variant: DecoderVariant) -> InfillConfig {
    InfillConfig {
        variant,
        model_dim: 16,
        heads: 2,
        embed_hidden: 32,
        embed_dim: 16,
        ff_hidden: 32,
        mlp_hidden: vec![32],
        mixer_blocks: 2,
        mixer_token_hidden: 8,
        mixer_channel_hidden: 16,
        conv_channels: 8,
        ..Default::default()
    }
}

fn bits(t: &Tensor<f32>) -> Vec<u32> {
    t.data().iter().map(|v| v.to_bits()).collect()
}

#[test]
fn basic_checkpoint_reload_gives_identical_logits() {
    let dir = tempfile::tempdir().unwrap();
    let stem = dir.path().join("basic");
    let (model, params) = BasicDrumGen::init::<f32>(&small_basic(), 3).unwrap();
    save_model(&stem, &model, &params, 12, 2, 1e-4, 3).unwrap();
    let (loaded, loaded_params, meta) = load_model::<BasicDrumGen>(&stem).unwrap();
    assert_eq!((meta.step, meta.epoch, meta.seed), (12, 2, 3));
    let tokens = BasicDrumGen::shift_right(&encode(&pa()).as_usize());
    let run = |m: &BasicDrumGen, p| {
        let mut g = Graph::inference();
        let x = g.constant(ma().to_tensor());
        let y = m.forward(&mut g, p, x, &tokens).unwrap();
        bits(g.value(y))
    };
    assert_eq!(run(&model, &params), run(&loaded, &loaded_params));
}

#[test]
fn locator_and_infill_checkpoints_reload_bit_identically() {
    let dir = tempfile::tempdir().unwrap();
    let stem = dir.path().join("locator");
    let (model, params) = Locator::init::<f32>(&small_locator(), 4).unwrap();
    save_model(&stem, &model, &params, 1, 1, 1e-4, 4).unwrap();
    let (loaded, loaded_params, _) = load_model::<Locator>(&stem).unwrap();
    let x = ma().to_tensor();
    assert_eq!(
        model.predict(&params, &x).unwrap().to_bits(),
        loaded.predict(&loaded_params, &x).unwrap().to_bits()
    );

    for variant in [DecoderVariant::Mlp, DecoderVariant::MlpMixer, DecoderVariant::Conv1d] {
        let stem = dir.path().join(format!("infill-{variant}"));
        let (model, params) = Infill::init::<f32>(&small_infill(variant), 5).unwrap();
        save_model(&stem, &model, &params, 1, 1, 1e-4, 5).unwrap();
        let (loaded, loaded_params, _) = load_model::<Infill>(&stem).unwrap();
        assert_eq!(
            bits(&model.predict(&params, &x, &pa()).unwrap()),
            bits(&loaded.predict(&loaded_params, &x, &pa()).unwrap()),
            "{variant}"
        );
    }
}

#[test]
fn loading_the_wrong_model_kind_is_a_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let stem = dir.path().join("locator");
    let (model, params) = Locator::init::<f32>(&small_locator(), 4).unwrap();
    save_model(&stem, &model, &params, 0, 0, 1e-4, 4).unwrap();
    assert!(matches!(load_model::<Infill>(&stem), Err(Error::CheckpointMismatch(_))));
}

#[test]
fn locator_pooling_is_the_row_mean_of_the_encoder_output() {
    let (model, params) = Locator::init::<f64>(&small_locator(), 8).unwrap();
    let mut g = Graph::inference();
    let x = g.constant(ma().to_tensor());
    let h = model.encoder_forward(&mut g, &params, x).unwrap();
    let pooled = g.mean_rows(h);
    let rows = g.value(h).clone();
    let got = g.value(pooled).data().to_vec();
    assert_eq!(rows.rows(), SAMPLE_STEPS);
    for (c, v) in got.iter().enumerate() {
        let mean = (0..rows.rows()).map(|r| rows.get(r, c)).sum::<f64>() / rows.rows() as f64;
        assert!((v - mean).abs() < 1e-12, "column {c}: {v} vs {mean}");
    }
}

#[test]
fn output_layers_start_neutral() {
    let (loc, p) = Locator::init::<f64>(&small_locator(), 1).unwrap();
    assert_eq!(loc.predict(&p, &ma().to_tensor()).unwrap(), 0.5);
    let (infill, p) = Infill::init::<f64>(&small_infill(DecoderVariant::Mlp), 1).unwrap();
    let probs = infill.predict(&p, &ma().to_tensor(), &pa()).unwrap();
    assert_eq!(probs.shape(), [32, 16]);
    assert!(probs.data().iter().all(|&v| v > 0.0 && v < 1.0));
}
