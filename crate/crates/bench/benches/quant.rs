use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use gammaquant::autograd::Graph;
use gammaquant::quant::materialize_lut;
use gammaquant::Tensor;
use gammaquant_bench::{grid, specs};

fn scalar_quantize(c: &mut Criterion) {
    let mut g = c.benchmark_group("quantize");
    g.throughput(Throughput::Elements(4096));
    for (name, spec) in specs(4) {
        let xs = grid(&spec, 4096);
        g.bench_with_input(BenchmarkId::from_parameter(name), &xs, |b, xs| {
            b.iter(|| {
                xs.iter()
                    .map(|&x| spec.quantize(black_box(x)).unwrap().0)
                    .sum::<u32>()
            })
        });
    }
    g.finish();
}

fn lut(c: &mut Criterion) {
    let mut g = c.benchmark_group("materialize_lut");
    for in_bits in [8u32, 12, 16] {
        let spec = specs(4)[3].1;
        g.throughput(Throughput::Elements(1 << in_bits));
        g.bench_with_input(BenchmarkId::from_parameter(in_bits), &in_bits, |b, &n| {
            b.iter(|| materialize_lut(&spec, n).unwrap())
        });
    }
    g.finish();
}

fn ste_forward_backward(c: &mut Criterion) {
    let spec = specs(2)[3].1;
    let x = Tensor::new(vec![32, 3, 50], grid(&spec, 32 * 3 * 50)).unwrap();
    c.bench_function("ste_quantize_per_axis_32x3x50", |b| {
        b.iter(|| {
            let mut g = Graph::new();
            let xv = g.constant(x.clone());
            let gv = g.param(Tensor::from_vec(vec![0.4; 3]));
            let mv = g.param(Tensor::from_vec(vec![0.0; 3]));
            let q = g.quantize(xv, &spec, Some(gv), Some(mv)).unwrap();
            let s = g.sum(q);
            g.backward(s).unwrap();
            black_box(g.grad(gv).map(|v| v[0]))
        })
    });
}

criterion_group!(benches, scalar_quantize, lut, ste_forward_backward);
criterion_main!(benches);
