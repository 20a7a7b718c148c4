use fgdd::anova::{
    mobius_variance, monotonicity_check, nonnegativity_check, permute_mask, subset_sum_check, HTable, SubsetIndex,
};
use proptest::prelude::*;

/// H-table of `Y = Σ_S c_S Π_{j∈S} X_j` with independent standard normal
/// inputs, where each product term contributes `c_S²` to every `H_T` with
/// `S ⊆ T`.
fn product_model(k: usize, coefs: &[f64]) -> HTable {
    let n = 1usize << k;
    let values: Vec<f64> = (0..n as u32)
        .map(|t| {
            (1..n as u32)
                .filter(|s| SubsetIndex(*s).is_subset_of(SubsetIndex(t)))
                .map(|s| coefs[s as usize].powi(2))
                .sum()
        })
        .collect();
    HTable::from_values(k, &values, None).unwrap()
}

fn table_strategy() -> impl Strategy<Value = (usize, Vec<f64>)> {
    (1usize..=5).prop_flat_map(|k| (Just(k), prop::collection::vec(-3.0f64..3.0, 1 << k)))
}

fn perm_strategy() -> impl Strategy<Value = (usize, Vec<f64>, Vec<usize>)> {
    table_strategy().prop_flat_map(|(k, v)| (Just(k), Just(v), Just((0..k).collect::<Vec<_>>()).prop_shuffle()))
}

#[test]
fn two_variable_closed_form() {
    let h = HTable::from_values(2, &[0.5, 1.5, 2.0, 4.0], None).unwrap();
    let v = mobius_variance(&h).unwrap();
    assert_eq!(v.get(SubsetIndex(0b01)), 1.0);
    assert_eq!(v.get(SubsetIndex(0b10)), 1.5);
    assert_eq!(v.get(SubsetIndex(0b11)), 1.0);
    assert_eq!(v.explained(), 3.5);
}

#[test]
fn monotone_violation_is_reported() {
    let mut h = HTable::new(2).unwrap();
    for (m, x) in [(0b00, 5.0), (0b01, 6.0), (0b10, 6.0), (0b11, 0.0)] {
        h.set(SubsetIndex(m), x, 0.1);
    }
    let bad = monotonicity_check(&h).unwrap();
    assert!(bad.contains(&(SubsetIndex(0b00), SubsetIndex(0b11))));
    assert!(bad.contains(&(SubsetIndex(0b01), SubsetIndex(0b11))));
    assert_eq!(bad.len(), 3);
}

#[test]
fn corrupted_table_gives_negative_terms() {
    let mut h = product_model(3, &[0.0, 1.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
    assert!(nonnegativity_check(&mobius_variance(&h).unwrap()).is_empty());
    h.set(SubsetIndex(0b111), 1.0, 0.01);
    let neg = nonnegativity_check(&mobius_variance(&h).unwrap());
    assert!(neg.contains(&SubsetIndex(0b111)));
}

#[test]
fn bit_string_round_trip() {
    for i in 0..64u32 {
        let s = SubsetIndex(i).to_bits(6);
        assert_eq!(SubsetIndex::parse_bits(&s).unwrap(), SubsetIndex(i));
    }
    assert!(SubsetIndex::parse_bits("10x").is_err());
    assert!(SubsetIndex::parse_bits("").is_err());
}

proptest! {
    #[test]
    fn recovers_product_model((k, coefs) in table_strategy()) {
        let v = mobius_variance(&product_model(k, &coefs)).unwrap();
        for s in v.subsets() {
            let expect = coefs[s.0 as usize].powi(2);
            prop_assert!((v.get(s) - expect).abs() <= 1e-12 * (1u32 << k) as f64);
        }
    }

    #[test]
    fn terms_sum_to_table((k, values) in table_strategy()) {
        let h = HTable::from_values(k, &values, None).unwrap();
        let v = mobius_variance(&h).unwrap();
        prop_assert!(subset_sum_check(&v, &h).unwrap() <= 1e-12 * (1u32 << k) as f64);
        let full = SubsetIndex::full(k);
        prop_assert!((v.explained() - (h.get(full).unwrap() - h.get(SubsetIndex::EMPTY).unwrap())).abs() <= 1e-11);
    }

    #[test]
    fn relabeling_commutes((k, values, perm) in perm_strategy()) {
        let h = HTable::from_values(k, &values, None).unwrap();
        let v = mobius_variance(&h).unwrap();
        let w = mobius_variance(&h.permuted(&perm).unwrap()).unwrap();
        for s in v.subsets() {
            prop_assert!((v.get(s) - w.get(permute_mask(s, &perm))).abs() <= 1e-12);
        }
    }

    #[test]
    fn product_models_are_monotone((k, coefs) in table_strategy()) {
        let h = product_model(k, &coefs);
        prop_assert!(monotonicity_check(&h).unwrap().is_empty());
    }
}
