//! Scratch harness for eyeballing training behavior at small scale.
//! Run: cargo run -p hiergen --example train_probe --release -- [pairs] [steps]

use hiergen::config::{Geometry, ModelShape};
use hiergen::pipeline::caption_score;
use hiergen::tokenizer::vocab::CombinedVocab;
use hiergen::tokenizer::{encode_image, image_patches, Codebook};
use hiergen::training::{grammar_vocab, pretrain_coglm, synthetic_dataset, TrainConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let pairs: usize = args.get(1).map_or(400, |s| s.parse().unwrap());
    let steps: usize = args.get(2).map_or(300, |s| s.parse().unwrap());
    let lr: f64 = args.get(3).map_or(3e-3, |s| s.parse().unwrap());

    let geometry = Geometry::desk();
    let t0 = std::time::Instant::now();
    let dataset = synthetic_dataset(pairs, 1).unwrap();
    println!("dataset: {} train, {} val ({:?})", dataset.train.len(), dataset.val.len(), t0.elapsed());

    // codebook from a sample of training patches
    let t0 = std::time::Instant::now();
    let mut patches = Vec::new();
    for p in dataset.train.iter().take(600) {
        patches.extend(image_patches(&p.render(geometry.low_pixels()), geometry.patch_size).unwrap());
    }
    let cb = Codebook::build(&patches, geometry.patch_size, geometry.image_vocab, 0)
        .unwrap()
        .cluster(geometry.n_clusters, 0)
        .unwrap();
    println!("codebook built ({:?})", t0.elapsed());

    let vocab = CombinedVocab::new(geometry.image_vocab, grammar_vocab());
    let shape = ModelShape::desk(vocab.total(), geometry.image_vocab, &geometry);
    println!("vocab {} shape {:?}", vocab.total(), (shape.layers, shape.d_model, shape.heads));

    let mut cfg = TrainConfig { steps, ..Default::default() };
    cfg.adam.lr = lr;
    let t0 = std::time::Instant::now();
    let out = pretrain_coglm(&dataset, &cb, &vocab, &shape, &geometry, &cfg).unwrap();
    let dt = t0.elapsed();
    let first: f64 = out.log[..10.min(out.log.len())].iter().map(|r| r.loss).sum::<f64>()
        / 10.min(out.log.len()) as f64;
    let tail = &out.log[out.log.len().saturating_sub(10)..];
    let last: f64 = tail.iter().map(|r| r.loss).sum::<f64>() / tail.len() as f64;
    println!(
        "train {:?}  loss {:.4} -> {:.4}  (drop {:.1}%)  {:.2} s/step",
        dt,
        first,
        last,
        100.0 * (1.0 - last / first),
        dt.as_secs_f64() / steps as f64
    );
    for r in out.log.iter().step_by((steps / 12).max(1)) {
        println!("  step {:4}  loss {:.4}", r.step, r.loss);
    }

    // caption ranking on validation pairs
    let t0 = std::time::Instant::now();
    let mut wins = 0usize;
    let mut total = 0usize;
    let n_val = dataset.val.len();
    for (i, pair) in dataset.val.iter().enumerate() {
        let grid = encode_image(&pair.render(geometry.low_pixels()), &cb).unwrap();
        let true_score = caption_score(
            &grid, &pair.caption, pair.language, &out.checkpoint, &vocab, geometry.text_budget,
        )
        .unwrap();
        // shuffled caption = caption of another val pair, same language
        let other = dataset.val[(i + n_val / 2) % n_val].scene.clone();
        let shuffled = hiergen::training::caption_of(&other, pair.language);
        if shuffled == pair.caption {
            continue;
        }
        let shuf_score = caption_score(
            &grid, &shuffled, pair.language, &out.checkpoint, &vocab, geometry.text_budget,
        )
        .unwrap();
        total += 1;
        if true_score < shuf_score {
            wins += 1;
        }
    }
    println!(
        "caption ranking: {wins}/{total} = {:.1}%  ({:?})",
        100.0 * wins as f64 / total as f64,
        t0.elapsed()
    );

    // infill accuracy vs marginal baseline on a few val images
    let t0 = std::time::Instant::now();
    let mut freq = vec![0usize; geometry.image_vocab];
    for p in dataset.train.iter().take(200) {
        let g = encode_image(&p.render(geometry.low_pixels()), &cb).unwrap();
        for &id in &g.ids {
            freq[id as usize] += 1;
        }
    }
    let marginal_argmax = freq.iter().enumerate().max_by_key(|(_, &c)| c).unwrap().0 as u32;
    let mut model_hits = 0usize;
    let mut base_hits = 0usize;
    let mut cells = 0usize;
    for pair in dataset.val.iter().take(12) {
        let img = pair.render(geometry.low_pixels());
        let truth = encode_image(&img, &cb).unwrap();
        let req = hiergen::pipeline::InfillRequest {
            rect: (2, 2, 5, 5),
            mode: hiergen::coglm::InfillMode::AllAtOnce,
            sampler: hiergen::sampling::SamplerConfig {
                temperature: 0.0,
                mode: hiergen::sampling::TruncationMode::Cluster { k: 4 },
                seed: 3,
            },
            upweight: 0.0,
        };
        let (_, out_grid) = hiergen::pipeline::infill_edit(
            &img, &pair.caption, pair.language, &out.checkpoint, &cb, &vocab,
            geometry.text_budget, &req,
        )
        .unwrap();
        for r in 2..=5 {
            for c in 2..=5 {
                cells += 1;
                if out_grid.get(r, c) == truth.get(r, c) {
                    model_hits += 1;
                }
                if marginal_argmax == truth.get(r, c) {
                    base_hits += 1;
                }
            }
        }
    }
    println!(
        "infill accuracy: model {:.1}% vs marginal baseline {:.1}% over {cells} cells ({:?})",
        100.0 * model_hits as f64 / cells as f64,
        100.0 * base_hits as f64 / cells as f64,
        t0.elapsed()
    );
}
