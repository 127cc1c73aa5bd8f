use lorekt::autograd::{Gradients, Graph};
use lorekt::data::{build_vocab, DatasetSizes, DatasetSpec, GlobalVocab, Interaction, StudentSequence};
use lorekt::model::{EncodedBatch, LoReKTModel, ModelConfig};
use lorekt::Scalar;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

pub const FIXTURE_DATASET: usize = 0;

pub fn fixture_vocab() -> GlobalVocab {
    let spec = DatasetSpec { name: "fixture".into(), dataset_index: FIXTURE_DATASET, path: "fixture.txt".into() };
    build_vocab(&[spec], &[DatasetSizes { n_questions: 12, n_kcs: 5 }]).unwrap()
}

/// A small model whose parameters are spread well away from zero so that
/// every path through the network carries a visible gradient.
pub fn fixture_model<T: Scalar>(n_layers: usize, d_model: usize, n_head: usize, d_ff: usize, seed: u64) -> LoReKTModel<T> {
    let vocab = fixture_vocab();
    let config = ModelConfig {
        n_layers,
        d_model,
        n_head,
        d_ff,
        dropout: 0.0,
        max_seq_len: 8,
        n_questions: vocab.total_questions(),
        n_kcs: vocab.total_kcs(),
        n_datasets: vocab.dataset_slots(),
    };
    let mut model = LoReKTModel::build(config, vocab, seed).unwrap();
    let mut rng = StdRng::seed_from_u64(seed ^ 0x5eed);
    let ids: Vec<_> = model.params().ids().collect();
    for id in ids {
        let name = model.params().name(id).to_string();
        for x in model.params_mut().get_mut(id).data_mut() {
            let u: f64 = rng.gen_range(-1.0..1.0);
            *x = T::lit(if name.ends_with("gamma") { 1.0 + 0.3 * u } else { 0.6 * u });
        }
    }
    model
}

fn step(q: u32, kcs: &[u32], r: bool, t: u64) -> Interaction {
    Interaction::new(q, kcs.to_vec(), r, t)
}

/// Hand-made histories of different lengths, with multi-KC questions.
pub fn hand_sequences() -> Vec<StudentSequence> {
    vec![
        StudentSequence {
            student_id: "alice".into(),
            interactions: vec![
                step(0, &[0], true, 0),
                step(3, &[1, 2], false, 1),
                step(7, &[2], true, 2),
                step(3, &[1, 2], true, 3),
                step(11, &[4], false, 4),
            ],
        },
        StudentSequence {
            student_id: "bob".into(),
            interactions: vec![step(5, &[3], false, 0), step(2, &[0, 3, 4], true, 1), step(9, &[1], false, 2)],
        },
    ]
}

pub fn batch<T: Scalar>(model: &LoReKTModel<T>, seqs: &[StudentSequence]) -> EncodedBatch<T> {
    let refs: Vec<&StudentSequence> = seqs.iter().collect();
    EncodedBatch::new(model.vocab(), FIXTURE_DATASET, &refs).unwrap()
}

pub fn loss_value(model: &LoReKTModel<f64>, batch: &EncodedBatch<f64>) -> f64 {
    let mut g = Graph::eval();
    let l = model.loss(&mut g, batch, None).unwrap();
    g.value(l).item()
}

/// Largest relative error between reverse-mode parameter gradients and
/// central differences with step `h`. Relative error uses
/// `max(|analytic|, |numeric|, floor)` as denominator.
pub fn max_gradient_error(model: &LoReKTModel<f64>, seqs: &[StudentSequence], h: f64, floor: f64) -> (f64, String) {
    let b = batch(model, seqs);
    let mut g = Graph::eval();
    let loss = model.loss(&mut g, &b, None).unwrap();
    let mut grads = Gradients::new();
    g.backward(loss, &mut grads).unwrap();
    let mut worst = (0.0, String::new());
    let mut probe = model.clone();
    for (id, name, t) in model.params().iter() {
        let analytic = grads.param(id).expect("every parameter gets a gradient").data().to_vec();
        for i in 0..t.len() {
            let orig = t.data()[i];
            probe.params_mut().get_mut(id).data_mut()[i] = orig + h;
            let up = loss_value(&probe, &b);
            probe.params_mut().get_mut(id).data_mut()[i] = orig - h;
            let down = loss_value(&probe, &b);
            probe.params_mut().get_mut(id).data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let denom = analytic[i].abs().max(numeric.abs()).max(floor);
            let err = (analytic[i] - numeric).abs() / denom;
            if err > worst.0 {
                worst = (err, format!("{name}[{i}]: analytic {} numeric {numeric}", analytic[i]));
            }
        }
    }
    worst
}
