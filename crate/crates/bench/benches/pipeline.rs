use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use restdep_bench::{booking_item, layered_graph};
use restdep_core::datagen::Expr;
use restdep_core::fixtures;
use restdep_core::odg::{build_odg, gather_heuristic_edges};
use restdep_core::pipeline::generate;
use restdep_core::sequence::{break_cycles, generate_sequences, ElementChoice};
use restdep_core::{parse_spec, DocumentFormat, MockBackend};

fn parsing(c: &mut Criterion) {
    c.bench_function("parse_extended_fixture", |b| {
        b.iter(|| parse_spec(black_box(fixtures::FLIGHT_BOOKING_EXTENDED_YAML.as_bytes()), DocumentFormat::Yaml))
    });
}

fn graph(c: &mut Criterion) {
    let spec = fixtures::flight_booking_extended();
    let backend = MockBackend::new();
    c.bench_function("heuristic_edges", |b| b.iter(|| gather_heuristic_edges(black_box(&spec))));
    c.bench_function("build_odg_mock", |b| b.iter(|| build_odg(black_box(&spec), &backend)));

    let mut group = c.benchmark_group("break_cycles");
    for n in [20usize, 100, 400] {
        let g = layered_graph(n);
        group.bench_with_input(BenchmarkId::from_parameter(n), &g, |b, g| b.iter(|| break_cycles(black_box(g))));
    }
    group.finish();
}

fn sequences(c: &mut Criterion) {
    let spec = fixtures::flight_booking_extended();
    let (g, _, _) = build_odg(&spec, &MockBackend::new());
    c.bench_function("generate_sequences_fixture", |b| {
        b.iter(|| generate_sequences(black_box(&g), &spec))
    });
}

fn predicates(c: &mut Criterion) {
    let expr: Expr = "(date< departureDate arrivalDate)".parse().expect("predicate parses");
    let items: Vec<_> = (1..=28).map(|d| booking_item(d, 29 - d)).collect();
    c.bench_function("date_order_eval_28", |b| {
        b.iter(|| items.iter().filter(|i| expr.holds(black_box(i))).count())
    });
}

fn plan(c: &mut Criterion) {
    let spec = fixtures::flight_booking_extended();
    let backend = MockBackend::new();
    let (g, _, _) = build_odg(&spec, &backend);
    c.bench_function("generate_plan_mock", |b| {
        b.iter(|| generate(black_box(&spec), &g, &backend, 7, ElementChoice::First))
    });
}

criterion_group!(benches, parsing, graph, sequences, predicates, plan);
criterion_main!(benches);
