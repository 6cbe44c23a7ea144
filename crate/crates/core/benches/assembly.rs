//! Compares the chunked parallel map against its sequential baseline on the
//! operator-assembly workload, and times the full quadrature assembly of one
//! Toeplitz matrix. Both map variants split the node range into the same
//! chunks and sum partials in chunk order, so their outputs are required to
//! be bitwise identical.

use criterion::{criterion_group, criterion_main, Criterion};
use nalgebra::DMatrix;
use num_complex::Complex64;
use std::hint::black_box;
use twistorq::{
    chunked_map, chunked_map_seq, toeplitz_matrix, FockBasis, PolySymbol, QuadratureSpec, Symbol,
    Var,
};

/// Rank-one accumulation over a node range, shaped like the assembly's
/// second stage: each node contributes w * conj(a_i) * a_j to every entry.
fn accumulate(dim: usize, range: std::ops::Range<usize>) -> DMatrix<Complex64> {
    let mut acc = DMatrix::<Complex64>::zeros(dim, dim);
    for p in range {
        let t = p as f64;
        let w = 0.5 + (t * 0.01).cos().abs();
        let a: Vec<Complex64> = (0..dim)
            .map(|i| Complex64::new((t + i as f64).sin(), (t - i as f64).cos()))
            .collect();
        for i in 0..dim {
            let ci = a[i].conj() * w;
            for j in 0..dim {
                acc[(i, j)] += ci * a[j];
            }
        }
    }
    acc
}

fn sum_partials(parts: Vec<DMatrix<Complex64>>, dim: usize) -> DMatrix<Complex64> {
    parts
        .into_iter()
        .fold(DMatrix::zeros(dim, dim), |acc, p| acc + p)
}

fn bench_chunked_map(c: &mut Criterion) {
    let dim = 66;
    let nodes = 400;
    let chunks = 8;

    let par = sum_partials(
        chunked_map(nodes, chunks, |r| accumulate(dim, r)),
        dim,
    );
    let seq = sum_partials(
        chunked_map_seq(nodes, chunks, |r| accumulate(dim, r)),
        dim,
    );
    assert!(
        par.iter()
            .zip(seq.iter())
            .all(|(a, b)| a.re.to_bits() == b.re.to_bits() && a.im.to_bits() == b.im.to_bits()),
        "parallel and sequential assembly must agree bitwise"
    );

    let mut group = c.benchmark_group("node_accumulation");
    group.sample_size(10);
    group.bench_function("parallel", |b| {
        b.iter(|| {
            sum_partials(
                chunked_map(black_box(nodes), chunks, |r| accumulate(dim, r)),
                dim,
            )
        })
    });
    group.bench_function("sequential", |b| {
        b.iter(|| {
            sum_partials(
                chunked_map_seq(black_box(nodes), chunks, |r| accumulate(dim, r)),
                dim,
            )
        })
    });
    group.finish();
}

fn bench_toeplitz(c: &mut Criterion) {
    let basis = FockBasis::new(1, 2.0, 10).unwrap();
    let sym = Symbol::polynomial(
        PolySymbol::coordinate(1, Var::V(0)).mul(&PolySymbol::coordinate(1, Var::VBar(0))),
    );
    let spec = QuadratureSpec::default_for(&basis, twistorq::fs_quadrature_build(8, 8).unwrap());
    let mut group = c.benchmark_group("toeplitz_matrix");
    group.sample_size(10);
    group.bench_function("quadrature_n1_d10", |b| {
        b.iter(|| toeplitz_matrix(black_box(&sym), &basis, &spec).unwrap())
    });
    group.finish();
}

criterion_group!(benches, bench_chunked_map, bench_toeplitz);
criterion_main!(benches);
