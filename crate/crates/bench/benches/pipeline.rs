use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use hummit_bench::{frames, hum, model, noisy_steps};
use hummit_core::fcn::{conv1d_forward, forward, gradients, ArchSpec, Mode};
use hummit_core::pitch::{estimate_f0, PitchConfig};
use hummit_core::tvr::{denoise_tv, TvrConfig};

fn tv(c: &mut Criterion) {
    let mut g = c.benchmark_group("denoise_tv");
    let cfg = TvrConfig::default();
    for len in [800, 8_000, 80_000] {
        let f = noisy_steps(len, 1);
        g.throughput(Throughput::Elements(len as u64));
        g.bench_with_input(BenchmarkId::from_parameter(len), &f, |b, f| b.iter(|| denoise_tv(f, &cfg).unwrap()));
    }
    g.finish();
}

fn pitch(c: &mut Criterion) {
    let audio = hum(8.0);
    let cfg = PitchConfig::default();
    c.bench_function("estimate_f0/8s", |b| b.iter(|| estimate_f0(&audio, &cfg).unwrap()));
}

fn network(c: &mut Criterion) {
    let arch = ArchSpec::fcn(48, 500);
    let m = model(&arch, 0);
    let x = frames(16, 500, 2);
    let labels: Vec<usize> = (0..16).map(|i| i % 48).collect();

    c.bench_function("conv1d_forward/256x128x5/L500", |b| {
        let input = frames(128, 500, 3);
        b.iter(|| conv1d_forward(&input, 1, 500, &m.convs[1]).unwrap())
    });
    c.bench_function("fcn_forward/batch16/L500", |b| b.iter(|| forward(&m, &x, 16, Mode::Infer).unwrap()));
    let mut g = c.benchmark_group("fcn_gradients");
    g.sample_size(10);
    g.bench_function("batch16/L500", |b| b.iter(|| gradients(&m, &x, &labels).unwrap()));
    g.finish();
}

criterion_group!(benches, tv, pitch, network);
criterion_main!(benches);
