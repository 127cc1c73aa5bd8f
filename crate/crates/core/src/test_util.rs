use crate::data::{build_vocab, DatasetSizes, DatasetSpec, GlobalVocab, Interaction, StudentSequence};
use crate::model::{LoReKTModel, Preset};
use crate::scalar::Scalar;

pub fn spec(name: &str, idx: usize) -> DatasetSpec {
    DatasetSpec { name: name.into(), dataset_index: idx, path: format!("{name}.txt").into() }
}

/// 50 questions and 10 KCs over two datasets.
pub fn tiny_vocab() -> GlobalVocab {
    build_vocab(
        &[spec("a", 0), spec("b", 1)],
        &[DatasetSizes { n_questions: 30, n_kcs: 6 }, DatasetSizes { n_questions: 20, n_kcs: 4 }],
    )
    .unwrap()
}

pub fn tiny<T: Scalar>(seed: u64) -> LoReKTModel<T> {
    let vocab = tiny_vocab();
    let cfg = Preset::by_name("tiny").unwrap().config(&vocab, 0.0);
    LoReKTModel::build(cfg, vocab, seed).unwrap()
}

pub fn seq(id: &str, steps: &[(u32, &[u32], bool)]) -> StudentSequence {
    StudentSequence {
        student_id: id.into(),
        interactions: steps
            .iter()
            .enumerate()
            .map(|(t, &(q, k, r))| Interaction::new(q, k.to_vec(), r, t as u64))
            .collect(),
    }
}

pub fn sample_seqs() -> Vec<StudentSequence> {
    vec![
        seq("s1", &[(1, &[0], true), (2, &[1, 2], false), (3, &[2], true), (1, &[0], true)]),
        seq("s2", &[(4, &[3], false), (5, &[0, 5], true), (6, &[4], false)]),
    ]
}
