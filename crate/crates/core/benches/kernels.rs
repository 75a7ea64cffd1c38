//! Parallel vs single-threaded timings of the main kernels.
//!
//! With the `parallel` feature each kernel runs twice: on the default rayon
//! pool and on a one-thread pool. Without it only the sequential path exists.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use fharmonic::identity::{canonical_fields, identity_hessian};
use fharmonic::variation::energy_gradient;
use fharmonic::{f_energy, make_map, DomainMesh, DomainSpec, FProfile, MapKind, SecondVariation};

fn modes() -> Vec<(&'static str, Box<dyn Fn(&mut (dyn FnMut() + Send))>)> {
    #[cfg(feature = "parallel")]
    {
        let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        vec![
            ("parallel", Box::new(|f: &mut (dyn FnMut() + Send)| f())),
            ("single", Box::new(move |f: &mut (dyn FnMut() + Send)| single.install(|| f()))),
        ]
    }
    #[cfg(not(feature = "parallel"))]
    {
        vec![("sequential", Box::new(|f: &mut (dyn FnMut() + Send)| f()))]
    }
}

fn torus_kernels(c: &mut Criterion) {
    let mesh = DomainMesh::build(DomainSpec::torus(32)).unwrap();
    let map = make_map(&mesh, &MapKind::CliffordTorus).unwrap();
    let profile = FProfile::sqrt_shift();
    let sv = SecondVariation::new(&mesh, &map, &profile).unwrap();

    let mut group = c.benchmark_group("clifford32");
    for (name, run) in modes() {
        group.bench_function(BenchmarkId::new("energy", name), |b| {
            b.iter(|| run(&mut || sink(f_energy(&mesh, &map, &profile).unwrap())))
        });
        group.bench_function(BenchmarkId::new("gradient", name), |b| {
            b.iter(|| run(&mut || sink(energy_gradient(&mesh, &map, &profile).unwrap())))
        });
        group.bench_function(BenchmarkId::new("conformal_index", name), |b| {
            b.iter(|| run(&mut || sink(sv.conformal_index_bound(&map, 1e-3))))
        });
    }
    group.finish();
}

fn sphere_kernels(c: &mut Criterion) {
    let mesh = DomainMesh::build(DomainSpec::sphere(4)).unwrap();
    let fields = canonical_fields(2).on_sphere_mesh(&mesh).unwrap();
    let profile = FProfile::sqrt_shift();

    let mut group = c.benchmark_group("sphere4");
    group.sample_size(20);
    for (name, run) in modes() {
        group.bench_function(BenchmarkId::new("identity_hessian", name), |b| {
            b.iter(|| run(&mut || sink(identity_hessian(&mesh, &profile, &fields, 1e-3).unwrap())))
        });
    }
    group.finish();
}

criterion_group!(benches, torus_kernels, sphere_kernels);
criterion_main!(benches);

fn sink<T>(x: T) {
    std::hint::black_box(x);
}
