//! Desk-scale acceptance run: one PASS/FAIL line per criterion.

use std::time::{Duration, Instant};

use freepd_core::energysolver::{
    encost_report, make_singular, pair_gradient, random_configuration, solve_configuration, Side, SolveOptions,
};
use freepd_core::extend::{embed_toeplitz, extend_entry, legal_disk, set_entry, stage, to_stage, toeplitz_step, SzegoParameter};
use freepd_core::linalg::{c, herm_eig, l1_norm, CMat, C64};
use freepd_core::pdcore::{check_pd, check_pd_brute, gram_indices, random_nspd, Domain, Idx, PdFunction, Verdict};
use freepd_core::surgery::{desk_strip, perform_surgery, verify_conditions};
use freepd_core::transport::{energy_schedule, perturbation_bound_check, perturbation_eta, StagePair};
use freepd_core::words::{ball, clique, index_set, is_clique, maximal_cliques_containing, Word};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, Duration, fn() -> Outcome);

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn stage5(seed: u64) -> PdFunction {
    to_stage(&random_nspd(4, 1, seed, 0.2)).expect("stage of a strict function")
}

fn rand_disk(rng: &mut ChaCha8Rng, r: f64) -> C64 {
    C64::from_polar(r * rng.random::<f64>().sqrt(), rng.random::<f64>() * std::f64::consts::TAU)
}

fn clique_oracle() -> Outcome {
    let words: Vec<Word> = ball(3).into_iter().skip(1).collect();
    let mut unique = 0;
    for g in &words {
        let k = clique(g).map_err(|e| format!("{g}: {e}"))?.vertices;
        ensure(is_clique(g, &k), || format!("K_{g} is not a clique"))?;
        let domain: Vec<Word> = index_set(g).members.into_iter().collect();
        let found = maximal_cliques_containing(g, &domain, &[Word::identity(), g.clone()]);
        if g.is_canonical() {
            ensure(found.len() == 1 && found[0] == k, || format!("{g}: {} maximal cliques", found.len()))?;
            unique += 1;
        } else {
            ensure(found.iter().any(|cl| k.iter().all(|x| cl.contains(x))), || format!("{g}: not inside a maximal clique"))?;
        }
    }
    Ok(format!("{} words, {unique} canonical with a unique maximal clique", words.len()))
}

fn pd_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut strict = 0;
    for i in 0..100u64 {
        let (r, d) = (1 + (i % 2) as usize, 1 + ((i / 2) % 2) as usize);
        let t = rng.random_range(-0.5..0.3);
        let f = random_nspd(r, d, 1000 + i, 0.0).mix_delta(t);
        let a = check_pd(&f, 1e-10).map_err(|e| e.to_string())?;
        let b = check_pd_brute(&f, 1e-10).map_err(|e| e.to_string())?;
        ensure(a.verdict == b.verdict, || format!("instance {i}: {:?} vs {:?}", a.verdict, b.verdict))?;
        ensure((a.min_eigenvalue - b.min_eigenvalue).abs() < 1e-9, || format!("instance {i}: eigenvalues differ"))?;
        strict += usize::from(a.verdict == Verdict::Strict);
    }
    Ok(format!("100 instances agree ({strict} strict)"))
}

fn full_min_eig(st: &PdFunction, value: C64) -> Result<f64, String> {
    let (g, _, _) = stage(st).map_err(|e| e.to_string())?;
    let next = set_entry(st, value).map_err(|e| e.to_string())?;
    let idx: Vec<Idx> = clique(&g).map_err(|e| e.to_string())?.vertices.into_iter().map(|h| (h, 0)).collect();
    Ok(herm_eig(&gram_indices(&next, &idx).map_err(|e| e.to_string())?).0[0])
}

fn legal_disk_boundary() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let targets: Vec<Word> = ball(5).into_iter().filter(|g| g.is_canonical() && g.len() >= 2).collect();
    for i in 0..50u64 {
        let g = targets[rng.random_range(0..targets.len())].clone();
        let f = random_nspd(g.len(), 1, 3000 + i, 0.2)
            .restrict_prefix_domain(Domain::Prefix(g.predecessor().expect("non-identity")))
            .map_err(|e| e.to_string())?;
        let mut st = to_stage(&f).map_err(|e| e.to_string())?;
        while stage(&st).map_err(|e| e.to_string())?.0 != g {
            st = extend_entry(&st, SzegoParameter::zero()).map_err(|e| e.to_string())?;
        }
        let (ctr, rad) = legal_disk(&st).map_err(|e| e.to_string())?;
        let dir = C64::from_polar(1.0, rng.random::<f64>() * std::f64::consts::TAU);
        let inside = full_min_eig(&st, ctr + dir * (0.999 * rad))?;
        let outside = full_min_eig(&st, ctr + dir * (1.001 * rad))?;
        ensure(inside > 0.0 && outside < 0.0, || format!("stage {g}: λ_min {inside:e} inside, {outside:e} outside"))?;
    }
    Ok("50 stages, strict at 0.999 and not at 1.001".into())
}

fn toeplitz_agreement() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let n = rng.random_range(1..=4usize);
        // Moments of a random 6-atom probability measure on the circle.
        let atoms: Vec<(f64, f64)> = (0..6).map(|_| (rng.random::<f64>() + 0.1, rng.random::<f64>() * std::f64::consts::TAU)).collect();
        let total: f64 = atoms.iter().map(|a| a.0).sum();
        let seq: Vec<C64> = (0..n).map(|k| atoms.iter().map(|&(w, th)| C64::from_polar(w / total, k as f64 * th)).sum()).collect();
        let z = SzegoParameter::new(rand_disk(&mut rng, 0.95)).map_err(|e| e.to_string())?;
        let expect = toeplitz_step(&seq, z).map_err(|e| e.to_string())?;
        let st = to_stage(&embed_toeplitz(&seq)).map_err(|e| e.to_string())?;
        let g = Word::parse(&"a".repeat(n)).expect("word");
        ensure(stage(&st).map_err(|e| e.to_string())?.0 == g, || format!("stage is not at {g}"))?;
        let got = extend_entry(&st, z).map_err(|e| e.to_string())?.value(&g, 0, 0).ok_or("missing value")?;
        worst = worst.max((got - expect).norm());
    }
    ensure(worst <= 1e-10, || format!("max deviation {worst:e}"))?;
    Ok(format!("20 sequences, max deviation {worst:.3e}"))
}

fn energy_axioms() -> Outcome {
    let mut min_e = f64::INFINITY;
    let mut self_dev: f64 = 0.0;
    let mut worst_sub: f64 = 0.0;
    for i in 0..100u64 {
        let d = 1 + (i % 2) as usize;
        let a = random_nspd(4, d, 5000 + 3 * i, 0.3);
        let b = random_nspd(4, d, 5001 + 3 * i, 0.3);
        let cc = random_nspd(4, d, 5002 + 3 * i, 0.3);
        let radii = [0, 1, 2];
        let ab = energy_schedule(&a, &b, &radii).map_err(|e| e.to_string())?;
        let bc = energy_schedule(&b, &cc, &radii).map_err(|e| e.to_string())?;
        let ac = energy_schedule(&a, &cc, &radii).map_err(|e| e.to_string())?;
        let aa = energy_schedule(&a, &a, &radii).map_err(|e| e.to_string())?;
        for r in 0..3 {
            min_e = min_e.min(ab[r].energy);
            self_dev = self_dev.max((aa[r].energy - 1.0).abs());
            if r > 0 {
                ensure(ab[r].energy >= ab[r - 1].energy - 1e-10, || format!("pair {i}: not monotone at r = {r}"))?;
            }
            worst_sub = worst_sub.max(ac[r].energy / (ab[r].energy * bc[r].energy));
        }
    }
    ensure(min_e >= 1.0 - 1e-10, || format!("energy {min_e} below 1"))?;
    ensure(self_dev <= 1e-10, || format!("self energy off by {self_dev:e}"))?;
    ensure(worst_sub <= 1.0 + 1e-8, || format!("submultiplicativity ratio {worst_sub}"))?;
    Ok(format!("min 𝔢 {min_e:.6}, |𝔢(C,C) - 1| ≤ {self_dev:.1e}, max 𝔢(A,C)/(𝔢(A,B)𝔢(B,C)) {worst_sub:.6}"))
}

fn perturbation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    for sigma in [0.1, 0.5] {
        for _ in 0..250 {
            let n = rng.random_range(1..6usize);
            let l = CMat::from_fn(n, n, |_, _| c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)) + CMat::identity(n, n);
            let eta = perturbation_eta(&l, sigma).map_err(|e| e.to_string())?;
            let dir = CMat::from_fn(n, n, |_, _| c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
            let mut t = rng.random_range(0.5..2.0);
            let m = loop {
                let m = &l + &dir * c(t, 0.0);
                if l1_norm(&(l.adjoint() * &l - m.adjoint() * &m)) <= eta {
                    break m;
                }
                t *= 0.7;
            };
            let chk = perturbation_bound_check(&l, &m, sigma).map_err(|e| e.to_string())?;
            ensure(chk.premise && chk.holds, || format!("σ = {sigma}: {chk:?}"))?;
            worst = worst.max((chk.norm_lm.max(chk.norm_ml) - 1.0) / sigma);
        }
    }
    Ok(format!("500 pairs, max (‖·‖ - 1)/σ = {worst:.4}"))
}

fn gradient_fd() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut checks = 0;
    for i in 0..50u64 {
        let out = make_singular(&[stage5(7000 + i), stage5(8000 + i)], 1e-3, i).map_err(|e| e.to_string())?;
        let pair = StagePair::new(&out.functions[0], &out.functions[1]).map_err(|e| e.to_string())?;
        let (z, m) = (rand_disk(&mut rng, 0.7), rand_disk(&mut rng, 0.7));
        for dir in [c(1.0, 0.0), c(0.0, 1.0)] {
            for side in [Side::Zeta, Side::Mu] {
                let an = pair_gradient(&pair, z, m, side, dir).map_err(|e| e.to_string())?;
                let (zp, mp, zm, mm) = match side {
                    Side::Zeta => (z + dir * h, m, z - dir * h, m),
                    Side::Mu => (z, m + dir * h, z, m - dir * h),
                };
                let fd = (pair.energy(zp, mp).map_err(|e| e.to_string())? - pair.energy(zm, mm).map_err(|e| e.to_string())?) / (2.0 * h);
                let rel = (an - fd).abs() / fd.abs().max(1e-6);
                worst = worst.max(rel);
                checks += 1;
            }
        }
    }
    ensure(worst <= 1e-4, || format!("max relative error {worst:e}"))?;
    Ok(format!("50 pairs, {checks} directional derivatives, max relative error {worst:.2e}"))
}

fn certificates() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut min_ratio = f64::INFINITY;
    let mut n = 0;
    for i in 0..10u64 {
        let out = make_singular(&[stage5(9000 + i), stage5(9500 + i)], 1e-3, i).map_err(|e| e.to_string())?;
        ensure(out.certificates.len() == 2, || format!("pair {i}: {} certificates", out.certificates.len()))?;
        for cert in &out.certificates {
            let pair = StagePair::new(&out.functions[cert.from], &out.functions[cert.to]).map_err(|e| e.to_string())?;
            for _ in 0..20 {
                let (z, m) = (rand_disk(&mut rng, 0.999), rand_disk(&mut rng, 0.999));
                let e = pair.energy(z, m).map_err(|e| e.to_string())?;
                let bound = cert.bound(z);
                ensure(e >= bound * (1.0 - 1e-6), || format!("pair {i}: energy {e} below bound {bound}"))?;
                min_ratio = min_ratio.min(e / bound);
                n += 1;
            }
        }
    }
    Ok(format!("{n} samples, min energy/bound {min_ratio:.4}"))
}

fn desk_configurations() -> Outcome {
    let mut notes = Vec::new();
    for (name, cycle) in [("path", false), ("cycle", true)] {
        let cfg = random_configuration(cycle, 3, 1, 1, 21, 1.1).map_err(|e| e.to_string())?;
        let eps = 2e-3;
        let (ext, report) = solve_configuration(&cfg, 3, eps, None, &SolveOptions::default()).map_err(|e| format!("{name}: {e}"))?;
        let mut worst: f64 = f64::NEG_INFINITY;
        for e in &report.edges {
            worst = worst.max(e.after - e.before);
        }
        ensure(worst <= 1e-3, || format!("{name}: an edge energy grew by {worst:e}"))?;
        ensure(report.stages.iter().all(|s| s.ledger_ok), || format!("{name}: a stage overspent its budget"))?;
        let enc = encost_report(&cfg, &ext, eps).map_err(|e| format!("{name}: {e}"))?;
        ensure(enc.encost <= 1.01, || format!("{name}: encost {}", enc.encost))?;
        notes.push(format!("{name} M = {:.8}, max growth {worst:.1e}", enc.encost));
    }
    Ok(notes.join("; "))
}

fn surgery() -> Outcome {
    let mut notes = Vec::new();
    for big_r in [2usize, 3] {
        let mut worst = [0.0f64; 3];
        let mut sizes = (usize::MAX, 0);
        for seed in 0..10u64 {
            let g = desk_strip(big_r, 100 + seed);
            ensure((200..=2000).contains(&g.n), || format!("n = {} outside [200, 2000]", g.n))?;
            sizes = (sizes.0.min(g.n), sizes.1.max(g.n));
            let res = perform_surgery(&g, big_r, 1).map_err(|e| format!("R = {big_r}, seed {seed}: {e}"))?;
            let rep = verify_conditions(&g, &res, 1, big_r);
            for c in &rep.conditions {
                ensure(c.pass, || format!("R = {big_r}, seed {seed}: {} measured {} vs bound {}", c.name, c.measured, c.bound))?;
            }
            ensure(rep.inserted as f64 <= rep.inserted_bound, || format!("R = {big_r}, seed {seed}: {} inserted", rep.inserted))?;
            for (slot, name) in ["G-3", "G-4", "G-5"].iter().enumerate() {
                let c = rep.get(name).expect("condition present");
                worst[slot] = worst[slot].max(c.measured / c.bound);
            }
        }
        notes.push(format!(
            "R = {big_r}: n in [{}, {}], max measured/bound G-3 {:.3}, G-4 {:.4}, G-5 {:.5}",
            sizes.0, sizes.1, worst[0], worst[1], worst[2]
        ));
    }
    Ok(notes.join("; "))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("clique oracle", Duration::from_secs(5), clique_oracle),
        ("PD-check oracle", Duration::from_secs(60), pd_oracle),
        ("legal-disk boundary", Duration::from_secs(60), legal_disk_boundary),
        ("Toeplitz agreement", Duration::from_secs(10), toeplitz_agreement),
        ("energy axioms", Duration::from_secs(120), energy_axioms),
        ("perturbation bound", Duration::from_secs(30), perturbation),
        ("gradient vs finite differences", Duration::from_secs(120), gradient_fd),
        ("singularity certificates", Duration::from_secs(120), certificates),
        ("desk-scale path and cycle", Duration::from_secs(600), desk_configurations),
        ("surgery verifier", Duration::from_secs(60), surgery),
    ];
    let mut failed = 0;
    for (i, (name, limit, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = run();
        let took = start.elapsed();
        let (ok, detail) = match outcome {
            Ok(d) if took <= *limit => (true, d),
            Ok(d) => (false, format!("{d}; over the {}s limit", limit.as_secs())),
            Err(e) => (false, e),
        };
        failed += usize::from(!ok);
        println!("criterion {:>2} {} {name}: {detail} [{:.2}s]", i + 1, if ok { "PASS" } else { "FAIL" }, took.as_secs_f64());
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
