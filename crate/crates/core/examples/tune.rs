//! Scratch hyperparameter probe used while freezing the training defaults.
//! Not part of the shipped surface; run as
//! `cargo run --example tune -- victim|poison|aug`.

use memelab::augmentor::{train_augmentor, AugmentorTrainConfig};
use memelab::corpus::{generate_corpus, CorpusConfig, Label, Meme};
use memelab::extractor::ExtractorConfig;
use memelab::metrics::{EvalOptions, EvalSetup};
use memelab::trigger::{apply_trigger, plan_poison, poison_dataset, TriggerConfig, TriggerKind};
use memelab::victim::{train_detector, Fusion, VictimTrainConfig};

fn gen(seed: u64) -> (Vec<Meme>, Vec<Meme>) {
    let cfg = CorpusConfig { seed, ..CorpusConfig::default() };
    generate_corpus(&cfg).unwrap()
}

fn victim_sweep(train: &[Meme], test: &[Meme]) {
    let ext = ExtractorConfig::default();
    for fusion in [Fusion::Early, Fusion::Late] {
        for lr in [0.05, 0.1, 0.2] {
            for epochs in [30, 60] {
                let mut accs = Vec::new();
                for seed in [1u64, 2, 3] {
                    let cfg = VictimTrainConfig {
                        fusion,
                        lr,
                        epochs,
                        seed,
                        ..VictimTrainConfig::default()
                    };
                    let model = train_detector(train, &cfg, &ext).unwrap();
                    let setup = EvalSetup { model: &model, ext: &ext, opts: EvalOptions::default() };
                    accs.push(setup.accuracy(test).unwrap());
                }
                println!(
                    "{fusion:?} lr={lr} ep={epochs} cda={:.3} {:.3} {:.3}",
                    accs[0], accs[1], accs[2]
                );
            }
        }
    }
}

fn poison_sweep(train: &[Meme], test: &[Meme]) {
    let ext = ExtractorConfig::default();
    let trig = TriggerConfig { kind: TriggerKind::CmtInitial, ..TriggerConfig::default() };
    let plan = plan_poison(train, &trig, 0.05, 7).unwrap();
    let poisoned = poison_dataset(train, &plan, None, &ext).unwrap();
    for lr in [0.05, 0.1, 0.2] {
        for epochs in [30, 60] {
            let mut rows = Vec::new();
            for seed in [1u64, 2, 3] {
                let cfg = VictimTrainConfig { lr, epochs, seed, ..VictimTrainConfig::default() };
                let model = train_detector(&poisoned, &cfg, &ext).unwrap();
                let setup = EvalSetup { model: &model, ext: &ext, opts: EvalOptions::default() };
                let cda = setup.accuracy(test).unwrap();
                let asr = setup.asr(test, &trig, None).unwrap().rate;
                let far = setup.far(test).unwrap().rate;
                rows.push((cda, asr, far));
            }
            let s: Vec<String> =
                rows.iter().map(|r| format!("cda={:.3} asr={:.3} far={:.3}", r.0, r.1, r.2)).collect();
            println!("lr={lr} ep={epochs}  {}", s.join(" | "));
        }
    }
}

fn aug_sweep(train: &[Meme], test: &[Meme]) {
    let trig = TriggerConfig::default();
    let ext = ExtractorConfig::default();
    for lr in [0.02, 0.03, 0.05] {
        for seed in [1u64, 2, 3] {
            let cfg = AugmentorTrainConfig { lr, seed, ..AugmentorTrainConfig::default() };
            let (model, losses) = train_augmentor(train, &trig, &cfg).unwrap();
            // Held-out accuracy: clean test images against their dotted twins.
            let mut n = 0usize;
            let mut hits = 0usize;
            let dotted_trig =
                TriggerConfig { kind: TriggerKind::CmtInitial, ..TriggerConfig::default() };
            for m in test {
                let attacked = match apply_trigger(m, &dotted_trig, None, &ext) {
                    Ok(a) => a,
                    Err(_) => continue,
                };
                n += 2;
                if model.score(&m.image) < 0.5 {
                    hits += 1;
                }
                if model.score(&attacked.image) >= 0.5 {
                    hits += 1;
                }
            }
            println!(
                "lr={lr} seed={seed} first_loss={:.4} last_loss={:.4} heldout={:.3} (n={n})",
                losses.first().unwrap(),
                losses.last().unwrap(),
                hits as f64 / n as f64
            );
        }
    }
}

fn signal_probe(test: &[Meme]) {
    use memelab::util::downsample_luma;
    let ext = ExtractorConfig::default();
    let trig = TriggerConfig { kind: TriggerKind::CmtInitial, ..TriggerConfig::default() };
    let mut max_d = Vec::new();
    let mut cells = Vec::new();
    for m in test.iter().take(40) {
        let attacked = match apply_trigger(m, &trig, None, &ext) {
            Ok(a) => a,
            Err(_) => continue,
        };
        let a = downsample_luma(&m.image, 32);
        let b = downsample_luma(&attacked.image, 32);
        let deltas: Vec<f64> = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).collect();
        let mx = deltas.iter().cloned().fold(0.0f64, f64::max);
        max_d.push(mx);
        cells.push(deltas.iter().filter(|d| **d > 0.01).count());
        if max_d.len() <= 3 {
            let pl = m.trigger.clone();
            println!("placement={:?}", attacked.trigger.map(|t| t.placement));
            let _ = pl;
        }
    }
    max_d.sort_by(f64::total_cmp);
    println!("pairs={} max_delta: min={:.4} med={:.4} max={:.4}", max_d.len(),
        max_d.first().unwrap(), max_d[max_d.len()/2], max_d.last().unwrap());
    println!("changed cells (>0.01): {:?}", &cells[..cells.len().min(20)]);
}

fn dump_probe_inputs(train: &[Meme]) {
    use memelab::trigger::{inject_initial, select_placement};
    use memelab::util::downsample_luma;
    use std::io::Write;
    let trig = TriggerConfig::default();
    let mut f = std::fs::File::create("/tmp/probe_inputs.csv").unwrap();
    let mut taken = 0;
    for m in train {
        if taken == 200 {
            break;
        }
        let (w, h) = m.image.dimensions();
        let Ok(p) = select_placement(&m.boxes, w, h, trig.epsilon) else { continue };
        let dotted = inject_initial(&m.image, p, trig.white_level);
        for (label, img) in [(0, &m.image), (1, &dotted)] {
            let row: Vec<String> = downsample_luma(img, 32)
                .iter()
                .map(|v| format!("{:.4}", v / 255.0))
                .collect();
            writeln!(f, "{label},{}", row.join(",")).unwrap();
        }
        taken += 1;
    }
    println!("wrote {taken} pairs");
}

fn main() {
    let mode = std::env::args().nth(1).unwrap_or_else(|| "victim".into());
    let (train, test) = gen(0);
    let _ = Label::Hateful;
    match mode.as_str() {
        "victim" => victim_sweep(&train, &test),
        "poison" => poison_sweep(&train, &test),
        "aug" => aug_sweep(&train, &test),
        "sig" => signal_probe(&test),
        "dump" => dump_probe_inputs(&train),
        other => panic!("unknown mode {other}"),
    }
}
