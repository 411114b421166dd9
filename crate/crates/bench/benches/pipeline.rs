use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vta_core::isa::{decode_instruction, encode_instruction};
use vta_core::progbuild::compile_matmul;
use vta_core::tensorfront::{compile_layer, lenet5};
use vta_core::{default_config, AgnosticMatrix, MatMulJob, PostOp, Simulator};

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> AgnosticMatrix {
    AgnosticMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-128..=127))
}

fn codec(c: &mut Criterion) {
    let cfg = default_config();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (a, b) = (random_matrix(&mut rng, 64, 64), random_matrix(&mut rng, 64, 64));
    let job = MatMulJob::from_matrices(&a, &b, None, vec![PostOp::relu()], cfg.block_size).unwrap();
    let instrs = compile_matmul(job, &cfg).unwrap().program.instructions;
    c.bench_function("codec/encode_decode_program", |bench| {
        bench.iter(|| {
            for i in &instrs {
                let bytes = encode_instruction(black_box(i)).unwrap();
                black_box(decode_instruction(&bytes).unwrap());
            }
        })
    });
}

fn matmul16(c: &mut Criterion) {
    let cfg = default_config();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (a, b) = (random_matrix(&mut rng, 16, 16), random_matrix(&mut rng, 16, 16));
    let job = MatMulJob::from_matrices(&a, &b, None, vec![PostOp::relu()], cfg.block_size).unwrap();
    c.bench_function("matmul16/compile", |bench| bench.iter(|| compile_matmul(black_box(job.clone()), &cfg).unwrap()));
    let compiled = compile_matmul(job, &cfg).unwrap();
    c.bench_function("matmul16/simulate", |bench| {
        bench.iter_batched(
            || compiled.image.clone(),
            |mut image| {
                let mut sim = Simulator::new(&cfg).unwrap();
                sim.run(&mut image, &compiled.regions.instr).unwrap()
            },
            BatchSize::SmallInput,
        )
    });
}

fn lenet_conv1(c: &mut Criterion) {
    let cfg = default_config();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let layers = lenet5(|| rng.gen_range(-8..=8), || 0);
    let compiled = compile_layer(&layers[0], &cfg).unwrap();
    c.bench_function("lenet5/conv1_compile", |bench| bench.iter(|| compile_layer(black_box(&layers[0]), &cfg).unwrap()));
    c.bench_function("lenet5/conv1_simulate", |bench| {
        bench.iter_batched(
            || compiled.image.clone(),
            |mut image| {
                let mut sim = Simulator::new(&cfg).unwrap();
                sim.run(&mut image, &compiled.regions.instr).unwrap()
            },
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(benches, codec, matmul16, lenet_conv1);
criterion_main!(benches);
