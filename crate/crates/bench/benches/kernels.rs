use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use segcvae::autodiff::{Rng, Tape};
use segcvae::corpus::{mine_cdm, DialoguePair};
use segcvae::eval::{bleu_n, distinct_n, generate_n};
use segcvae::model::{uniform, ModelConfig};
use segcvae::synth::planted_cdm;
use segcvae::training::{perplexity, Trainer, TrainingConfig};
use segcvae_bench::{desk, fixture};

fn primitives(c: &mut Criterion) {
    let mut g = c.benchmark_group("primitives");
    let mut rng = Rng::new(1);
    for n in [16usize, 64, 128] {
        let a = uniform(&[n, n], 1.0, &mut rng);
        let b = uniform(&[n, n], 1.0, &mut rng);
        g.bench_with_input(BenchmarkId::new("matmul_fwd_bwd", n), &n, |bench, _| {
            bench.iter(|| {
                let mut t = Tape::new();
                let (x, y) = (t.var(a.clone()), t.var(b.clone()));
                let p = t.matmul(x, y).unwrap();
                let s = t.sum(p);
                t.backward(s).unwrap()
            })
        });
    }
    let ctx = uniform(&[25, 300], 1.0, &mut rng);
    let kernel = uniform(&[3, 300, 1, 3], 0.05, &mut rng);
    g.bench_function("conv_seq_25x300", |bench| {
        bench.iter(|| {
            let mut t = Tape::new();
            let (x, k) = (t.var(ctx.clone()), t.var(kernel.clone()));
            let f = t.conv_seq(x, k).unwrap();
            let s = t.sum(f);
            t.backward(s).unwrap()
        })
    });
    g.finish();
}

fn model(c: &mut Criterion) {
    let mut g = c.benchmark_group("model");
    g.sample_size(20);
    let f = desk(16, 2);
    let batch: Vec<_> = f.data[..16].to_vec();
    g.bench_function("train_step_desk_b16", |bench| {
        let mut trainer = Trainer::new(f.model.clone(), TrainingConfig::default()).unwrap();
        bench.iter(|| trainer.train_step(&batch).unwrap())
    });
    g.bench_function("perplexity_desk", |bench| bench.iter(|| perplexity(&f.model, &f.data).unwrap()));
    g.bench_function("generate_8_desk", |bench| {
        let mut rng = Rng::new(3);
        bench.iter(|| generate_n(&f.model, &f.data[0].context, 8, &mut rng).unwrap())
    });
    let mut cfg = ModelConfig::full(0);
    cfg.num_semantics = 2;
    let big = fixture(8, cfg, 4);
    g.bench_function("encode_context_full_m2", |bench| {
        bench.iter(|| {
            let mut t = Tape::new();
            let b = big.model.bind(&mut t, false);
            big.model.encode_context(&mut t, &b, &big.data[0].context, None).unwrap().stacked
        })
    });
    g.finish();
}

fn corpus_and_metrics(c: &mut Criterion) {
    let mut g = c.benchmark_group("corpus");
    let planted = planted_cdm(20_000, 500, &mut Rng::new(5));
    g.bench_function("mine_cdm_20k", |bench| bench.iter(|| mine_cdm(&planted.pairs).unwrap()));
    let sentences: Vec<Vec<String>> = planted.pairs.iter().take(2000).map(|p: &DialoguePair| p.response.clone()).collect();
    g.bench_function("distinct2_2k", |bench| bench.iter(|| distinct_n(&sentences, 2).unwrap()));
    g.bench_function("bleu3_2k", |bench| {
        bench.iter(|| {
            sentences
                .windows(2)
                .map(|w| bleu_n(&w[0], &[w[1].clone()], 3).unwrap())
                .sum::<f64>()
        })
    });
    g.finish();
}

criterion_group!(benches, primitives, model, corpus_and_metrics);
criterion_main!(benches);
