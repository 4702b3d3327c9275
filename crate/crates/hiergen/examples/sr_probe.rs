//! Scratch harness for the super-resolution finetunes at reduced scale.
//! Run: cargo run -p hiergen --example sr_probe --release -- [pairs] [pretrain] [sr-steps]

use hiergen::config::{Geometry, ModelShape};
use hiergen::hierarchy::{decoder_logits, encode_low_grid};
use hiergen::model::{DirectSrParams, Stage};
use hiergen::tokenizer::vocab::CombinedVocab;
use hiergen::tokenizer::{encode_image, image_patches, Codebook};
use hiergen::training::{finetune_sr, grammar_vocab, pretrain_coglm, synthetic_dataset, TrainConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let pairs: usize = args.get(1).map_or(300, |s| s.parse().unwrap());
    let pre_steps: usize = args.get(2).map_or(150, |s| s.parse().unwrap());
    let sr_steps: usize = args.get(3).map_or(80, |s| s.parse().unwrap());

    // reduced geometry: 4x4 low grid -> 12x12 high grid
    let geometry = Geometry { low_side: 4, image_vocab: 128, n_clusters: 8, ..Geometry::desk() };
    let dataset = synthetic_dataset(pairs, 1).unwrap();
    let mut patches = Vec::new();
    for p in dataset.train.iter().take(300) {
        patches
            .extend(image_patches(&p.render(geometry.high_pixels()), geometry.patch_size).unwrap());
    }
    let t0 = std::time::Instant::now();
    let cb = Codebook::build(&patches, geometry.patch_size, geometry.image_vocab, 0)
        .unwrap()
        .cluster(geometry.n_clusters, 0)
        .unwrap();
    println!("codebook ({:?})", t0.elapsed());

    let vocab = CombinedVocab::new(geometry.image_vocab, grammar_vocab());
    let shape = ModelShape::desk(vocab.total(), geometry.image_vocab, &geometry);

    let t0 = std::time::Instant::now();
    let cfg = TrainConfig { steps: pre_steps, ..Default::default() };
    let pre = pretrain_coglm(&dataset, &cb, &vocab, &shape, &geometry, &cfg).unwrap();
    println!("pretrain {:?}  loss {:.3}", t0.elapsed(), pre.log.last().unwrap().loss);

    // direct stage
    let t0 = std::time::Instant::now();
    let sr_cfg = TrainConfig { steps: sr_steps, batch_size: 4, ..Default::default() };
    let direct =
        finetune_sr(&pre.checkpoint, Stage::DirectSr, &dataset, &cb, &vocab, &geometry, &sr_cfg)
            .unwrap();
    println!(
        "direct-sr {:?}  loss {:.3} -> {:.3}  ({:.2} s/step)",
        t0.elapsed(),
        direct.log.first().unwrap().loss,
        direct.log.last().unwrap().loss,
        t0.elapsed().as_secs_f64() / sr_steps as f64
    );

    // held-out accuracy vs marginal baseline
    let sr = DirectSrParams {
        base: direct.checkpoint.model.clone(),
        decoder_attn: direct.checkpoint.decoder_attn.clone().unwrap(),
    };
    let mut freq = vec![0usize; geometry.image_vocab];
    for p in dataset.train.iter().take(200) {
        let g = encode_image(&p.render(geometry.high_pixels()), &cb).unwrap();
        for &id in &g.ids {
            freq[id as usize] += 1;
        }
    }
    let base_id = freq.iter().enumerate().max_by_key(|(_, &c)| c).unwrap().0 as u32;
    let (mut hits, mut base_hits, mut cells) = (0usize, 0usize, 0usize);
    for p in dataset.val.iter().take(20) {
        let low = encode_image(&p.render(geometry.low_pixels()), &cb).unwrap();
        let high = encode_image(&p.render(geometry.high_pixels()), &cb).unwrap();
        let enc = encode_low_grid(&low, &sr, geometry.window).unwrap();
        let logits = decoder_logits(
            &enc,
            (low.height, low.width),
            &sr,
            &vocab,
            geometry.scale,
            geometry.window,
        )
        .unwrap();
        for i in 0..high.ids.len() {
            cells += 1;
            let row = logits.row(i);
            let argmax = (0..geometry.image_vocab)
                .max_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap())
                .unwrap() as u32;
            if argmax == high.ids[i] {
                hits += 1;
            }
            if base_id == high.ids[i] {
                base_hits += 1;
            }
        }
    }
    println!(
        "direct-sr top-1: model {:.1}% vs marginal {:.1}% over {cells} cells",
        100.0 * hits as f64 / cells as f64,
        100.0 * base_hits as f64 / cells as f64
    );

    // iterative stage
    let t0 = std::time::Instant::now();
    let iter =
        finetune_sr(&pre.checkpoint, Stage::IterativeSr, &dataset, &cb, &vocab, &geometry, &sr_cfg)
            .unwrap();
    println!(
        "iterative-sr {:?}  loss {:.3} -> {:.3}  ({:.2} s/step)",
        t0.elapsed(),
        iter.log.first().unwrap().loss,
        iter.log.last().unwrap().loss,
        t0.elapsed().as_secs_f64() / sr_steps as f64
    );
}
