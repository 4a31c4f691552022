use std::collections::BTreeSet;

use proptest::prelude::*;

use puma_lab::analysis::{
    chernoff_information, exact_marginals, verify_marginal_agreement, verify_minimizer_preservation, ChainKind,
    ForwardKind, VerifyMode,
};
use puma_lab::chains::{run_teacher_forced_chain, unmask_step_map, Trajectory};
use puma_lab::dist::TabularDistribution;
use puma_lab::learner::{reveal_count_distribution, vanilla_train_step, TabularMDM};
use puma_lab::oracle::{posterior_table, Oracle};
use puma_lab::policy::{PolicyKind, PolicySpec, SelectCount};
use puma_lab::rng;
use puma_lab::sequence::{MaskedSequence, Vocab};

/// Small random distributions: length 2..=3, vocabulary 2..=3, 1..=6
/// distinct support points with positive weights.
fn small_dist() -> impl Strategy<Value = TabularDistribution> {
    (2usize..=3, 2u32..=3).prop_flat_map(|(len, v)| {
        let point = prop::collection::vec(0..v, len);
        prop::collection::vec((point, 0.05f64..1.0), 1..=6).prop_map(move |rows| {
            let mut seen = BTreeSet::new();
            let rows: Vec<_> = rows.into_iter().filter(|(x, _)| seen.insert(x.clone())).collect();
            TabularDistribution::build(len, Vocab::new(v).unwrap(), rows).unwrap()
        })
    })
}

fn policy_kind() -> impl Strategy<Value = PolicyKind> {
    prop::sample::select(PolicyKind::ALL.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn teacher_forced_and_idealized_marginals_agree(
        dist in small_dist(),
        kind in policy_kind(),
        count in 1usize..=2,
        tau in prop::option::of(0.3f64..1.0),
    ) {
        let p = PolicySpec::new(kind).with_count(SelectCount::Fixed(count)).with_threshold(tau);
        let rep = verify_marginal_agreement(&dist, &p, dist.len(), VerifyMode::Exact).unwrap();
        prop_assert!(rep.passed(), "{:?}", rep.tv);
    }

    #[test]
    fn marginal_layers_are_distributions(dist in small_dist(), kind in policy_kind()) {
        let p = PolicySpec::new(kind);
        for layer in exact_marginals(ChainKind::TeacherForced, &dist, &p, dist.len()).unwrap() {
            prop_assert!((layer.total() - 1.0).abs() < 1e-12);
            prop_assert!(layer.0.values().all(|&q| q > 0.0));
        }
    }

    #[test]
    fn non_leaking_forward_processes_keep_the_posterior(dist in small_dist(), kind in policy_kind()) {
        let p = PolicySpec::new(kind);
        for forward in [ForwardKind::Iid, ForwardKind::TeacherForced] {
            let rep = verify_minimizer_preservation(&dist, forward, &p, dist.len()).unwrap();
            prop_assert!(rep.preserved(), "{:?} {}", forward, rep.max_deviation);
        }
    }

    #[test]
    fn posterior_rows_are_normalized_and_consistent(dist in small_dist(), pick in 0usize..64, mask in 1u32..8) {
        let (x, _) = &dist.enumerate()[pick % dist.support_size()];
        let ids = (0..dist.len())
            .map(|i| if mask >> i & 1 == 1 { dist.vocab().mask() } else { x.get(i) })
            .collect();
        let z = MaskedSequence::from_ids(ids, dist.vocab()).unwrap();
        let table = posterior_table(&dist, &z).unwrap();
        prop_assert_eq!(table.len(), z.masked_count());
        for (i, row) in table.rows() {
            prop_assert!((row.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
            // The true token is always possible.
            prop_assert!(row.prob(x.get(*i)) > 0.0);
        }
    }

    #[test]
    fn teacher_forced_chains_reveal_x0_and_round_trip(
        dist in small_dist(),
        kind in policy_kind(),
        k in 1usize..=4,
        seed in any::<u64>(),
    ) {
        let mut r = rng::derive(seed, "prop/chain", 0);
        let x0 = dist.sample(&mut r);
        let p = PolicySpec::new(kind).with_count(SelectCount::Staged);
        let oracle = Oracle::new(&dist);
        let t = run_teacher_forced_chain(&x0, dist.vocab(), &oracle, &p, k, 0, &mut r).unwrap();
        prop_assert_eq!(t.final_state().to_clean(), Some(x0.clone()));
        for w in t.states.windows(2) {
            prop_assert!(w[1].masked_count() <= w[0].masked_count());
            prop_assert!(w[1].agrees_with(&x0));
        }
        let map = unmask_step_map(&t).unwrap();
        prop_assert!(map.0.iter().all(|&s| (1..=k).contains(&s)));
        let back = Trajectory::from_text(&t.to_text(), dist.vocab()).unwrap();
        prop_assert_eq!(back, t);
    }

    #[test]
    fn reveal_count_law_is_a_distribution(l in 1usize..=12, k in 1usize..=12, u in 0usize..12, stage in 0usize..12) {
        prop_assume!(u < l && stage < k);
        let law = reveal_count_distribution(u, stage, k, l).unwrap();
        prop_assert!((law.iter().map(|p| p.1).sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(law.iter().all(|&(c, p)| c >= 1 && c <= l - u && p > 0.0));
    }

    #[test]
    fn chernoff_is_symmetric_and_bounded(
        a in prop::collection::vec(0.01f64..1.0, 2..6),
        b in prop::collection::vec(0.01f64..1.0, 2..6),
    ) {
        let n = a.len().min(b.len());
        let norm = |v: &[f64]| { let s: f64 = v[..n].iter().sum(); v[..n].iter().map(|x| x / s).collect::<Vec<_>>() };
        let (p, q) = (norm(&a), norm(&b));
        let c = chernoff_information(&p, &q).unwrap();
        prop_assert!((c - chernoff_information(&q, &p).unwrap()).abs() < 1e-8);
        // The s = 1/2 coefficient gives a lower bound.
        let bc: f64 = p.iter().zip(&q).map(|(x, y)| (x * y).sqrt()).sum();
        prop_assert!(c >= -bc.ln() - 1e-9);
        prop_assert!(c >= 0.0);
    }

    #[test]
    fn model_text_round_trip(dist in small_dist(), steps in 0usize..20, seed in any::<u64>()) {
        let mut model = TabularMDM::new(dist.len(), dist.vocab(), 0.3).unwrap();
        let mut r = rng::derive(seed, "prop/model", 0);
        for _ in 0..steps {
            vanilla_train_step(&mut model, &dist, 4, 0, &mut r).unwrap();
        }
        let back = TabularMDM::from_text(&model.to_text()).unwrap();
        prop_assert_eq!(back, model);
    }
}
