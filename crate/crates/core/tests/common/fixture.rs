//! Synthetic dataset plus benchmark split, as built by the command line.

use miavlm::bench::{build_benchmark, split_instructions, AntonymLexicon, Question, Templates, TRAIN_RATIO};
use miavlm::model::benchmark_vocab;
use miavlm::synth::{gen_synthetic, Dataset, SynthConfig};
use miavlm::train::{train, InstructionMix, RunConfig, TrainLog};
use miavlm::vocab::Vocab;

pub struct Fixture {
    pub dataset: Dataset,
    pub questions: Vec<Question>,
    pub train: Vec<Question>,
    pub test: Vec<Question>,
    pub vocab: Vocab,
}

pub fn fixture(scenes: usize, views: usize, seed: u64) -> Fixture {
    let cfg = SynthConfig {
        views,
        ..SynthConfig::default()
    };
    let dataset = gen_synthetic(scenes, &cfg, seed).unwrap();
    let templates = Templates::default();
    let lexicon = AntonymLexicon::shipped();
    let questions = build_benchmark(&dataset.records(), &templates, &lexicon, seed).unwrap();
    let (train, test) = split_instructions(&questions, TRAIN_RATIO, seed).unwrap();
    let vocab = benchmark_vocab(&templates, &lexicon, &questions);
    Fixture {
        dataset,
        questions,
        train,
        test,
        vocab,
    }
}

pub fn run_config(seed: u64, epochs: usize, mix: InstructionMix) -> RunConfig {
    RunConfig {
        seed,
        epochs,
        instruction_mix: mix,
        ..RunConfig::default()
    }
}

pub fn train_on(f: &Fixture, run: &RunConfig) -> (miavlm::model::Model, TrainLog) {
    train(run, &f.dataset, &f.train, f.vocab.clone()).unwrap()
}
