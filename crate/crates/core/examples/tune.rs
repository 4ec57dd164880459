//! Scratch harness: train on the bundled pair and report reconstruction
//! quality and timing. Run with `cargo run --release -p photostyle-core
//! --example tune [alpha] [max_iters] [lr] [patience]`.

use std::time::Instant;

use photostyle_core::{
    load_image, losses, pipeline, psnr, reconstruct, stylize, Branch, TrainConfig,
};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let alpha: f64 = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(1.0);
    let max_iters: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(5000);
    let lr: f64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(1e-3);
    let patience: usize = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(200);
    let seed: u64 = args.get(5).map(|s| s.parse().unwrap()).unwrap_or(0);
    let side: usize = args.get(6).map(|s| s.parse().unwrap()).unwrap_or(128);

    let root = concat!(env!("CARGO_MANIFEST_DIR"), "/../../assets");
    let content_path = args
        .get(7)
        .cloned()
        .unwrap_or_else(|| format!("{root}/content_128.png"));
    let style_path = args
        .get(8)
        .cloned()
        .unwrap_or_else(|| format!("{root}/style_128.png"));
    let content = load_image(content_path).unwrap();
    let style = load_image(style_path).unwrap();

    let cfg = TrainConfig {
        alpha,
        max_iters,
        learning_rate: lr,
        patience,
        seed,
        train_max_side: side,
        ..TrainConfig::default()
    };
    let t0 = Instant::now();
    let mut last = 0;
    let ckpt = pipeline::train_traced(&content, &style, &cfg, |iter, bd| {
        if iter % 250 == 0 {
            eprintln!(
                "iter {iter:5}  recon {:.4}  sparse {:.3}  mi {:.4}  total {:.4}",
                bd.recon_l21, bd.sparse_h, bd.mi, bd.total
            );
        }
        last = iter;
    })
    .unwrap();
    let train_time = t0.elapsed();

    let rc = reconstruct(&ckpt, &content, Branch::Content).unwrap();
    let rs = reconstruct(&ckpt, &style, Branch::Style).unwrap();
    let (sc, _) = pipeline::preprocess(&content);
    let s_abund = pipeline::encode_abundance(&ckpt.params, &sc).unwrap();
    let mean_entropy = losses::entropy_h1(&s_abund) / s_abund.rows() as f64;

    let t1 = Instant::now();
    let out = stylize(&ckpt, &content, &style, false).unwrap();
    let stylize_time = t1.elapsed();

    println!("iterations run : {}", ckpt.iterations);
    println!("train time     : {:.1?}", train_time);
    println!("stylize time   : {:.2?}  ({}x{})", stylize_time, out.width, out.height);
    println!("psnr content   : {:.2} dB", psnr(&content, &rc));
    println!("psnr style     : {:.2} dB", psnr(&style, &rs));
    println!("mean entropy   : {:.4} (alpha = {alpha})", mean_entropy);

    // how many distinct colors in each image, and how they map to vertices
    for (name, img) in [("content", &content), ("style", &style)] {
        use std::collections::HashMap;
        let (x, _) = pipeline::preprocess(img);
        let s = pipeline::encode_abundance(&ckpt.params, &x).unwrap();
        let mut by_color: HashMap<[u64; 3], HashMap<usize, usize>> = HashMap::new();
        for i in 0..x.rows() {
            let key = [
                x.get(i, 0).to_bits(),
                x.get(i, 1).to_bits(),
                x.get(i, 2).to_bits(),
            ];
            let argmax = (0..s.cols())
                .max_by(|&a, &b| s.get(i, a).partial_cmp(&s.get(i, b)).unwrap())
                .unwrap();
            *by_color.entry(key).or_default().entry(argmax).or_default() += 1;
        }
        println!("{name}: {} distinct colors", by_color.len());
        let mut rows: Vec<_> = by_color.values().collect();
        rows.sort_by_key(|m| std::cmp::Reverse(m.values().sum::<usize>()));
        for m in rows.iter().take(8) {
            let mut verts: Vec<_> = m.iter().collect();
            verts.sort_by_key(|(_, &n)| std::cmp::Reverse(n));
            let desc: Vec<String> = verts.iter().map(|(v, n)| format!("v{v}:{n}")).collect();
            println!("  color ({} px) -> {}", m.values().sum::<usize>(), desc.join(" "));
        }
    }
}
