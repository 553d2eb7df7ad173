#![allow(dead_code)]

use std::path::Path;

use deca::config::ExperimentConfig;
use deca::dataset::generate_dataset;
use deca_core::model::TaskSet;
use deca_core::synth::ViewTag;

pub const SIDE: usize = 32;

/// A model small enough to train in well under a second per epoch.
pub fn tiny_config(train: &Path, view: ViewTag) -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.model.tasks = TaskSet::d3();
    c.model.image_size = SIDE;
    c.model.encoder.widths = vec![4, 8, 8];
    c.model.capsules.primary_types = 4;
    for s in c.model.capsules.conv.iter_mut() {
        s.types = 4;
    }
    c.model.decoder.hidden = vec![16];
    c.model.decoder.depth_side = 8;
    c.synth.image_size = SIDE;
    c.data.train = train.to_path_buf();
    c.data.view = view;
    c.train.epochs = 2;
    c.train.batch_size = 8;
    c
}

pub fn make_set(dir: &Path, frames: usize, first_frame_id: u64, seed: u64) {
    let mut c = ExperimentConfig::default().synth;
    c.image_size = SIDE;
    c.frames = frames;
    c.first_frame_id = first_frame_id;
    c.seed = seed;
    generate_dataset(&c, dir).unwrap();
}

pub fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}
