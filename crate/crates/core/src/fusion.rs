//! Residual features, correlation-driven pair selection and spherical
//! interpolation of residuals.
//!
//! Within a group of three equal-dimension networks, one network is chosen as
//! the *anchor*: the one whose residuals correlate least (summed over the two
//! other networks, averaged over training pairs). Each of the two remaining
//! networks is interpolated with the anchor on the great circle, and the
//! difference of the two interpolants becomes the group's residue feature.

use serde::{Deserialize, Serialize};

use crate::embedding::{Group, NetworkId};
use crate::error::{DmadError, Result};

/// Element-wise `document - probe` residual for one network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifferenceFeature {
    pub network: NetworkId,
    pub values: Vec<f64>,
}

impl DifferenceFeature {
    pub fn compute(network: NetworkId, document: &[f32], probe: &[f32]) -> Result<Self> {
        Ok(Self {
            network,
            values: difference(document, probe)?,
        })
    }
}

pub fn difference(f1: &[f32], f2: &[f32]) -> Result<Vec<f64>> {
    if f1.len() != f2.len() {
        return Err(DmadError::DimensionMismatch {
            expected: f1.len(),
            actual: f2.len(),
        });
    }
    f1.iter()
        .zip(f2)
        .enumerate()
        .map(|(index, (&a, &b))| {
            let d = f64::from(a) - f64::from(b);
            if d.is_finite() {
                Ok(d)
            } else {
                Err(DmadError::NonFinite { index })
            }
        })
        .collect()
}

/// Pearson correlation of two equal-length sequences, clamped to [-1, 1].
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(DmadError::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(DmadError::Empty("pearson needs at least two components".into()));
    }
    let n = a.len() as f64;
    let mean_a = a.iter().sum::<f64>() / n;
    let mean_b = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let dx = x - mean_a;
        let dy = y - mean_b;
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(DmadError::DegenerateVariance);
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Anchor and partners chosen for one group.
///
/// The residue feature is `slerp(anchor, partner_a) - slerp(anchor, partner_b)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupSelection {
    pub group: Group,
    pub anchor: NetworkId,
    pub partner_a: NetworkId,
    pub partner_b: NetworkId,
}

impl GroupSelection {
    /// Builds the selection for `anchor`. Partners follow the cyclic group
    /// order: `partner_a` precedes the anchor, `partner_b` follows it, so
    /// anchor VGG16 yields the pairs (AlexNet, VGG16) and (VGG16, VGG19).
    pub fn with_anchor(anchor: NetworkId) -> Self {
        let group = anchor.group();
        let members = group.members();
        let i = anchor.index_in_group();
        Self {
            group,
            anchor,
            partner_a: members[(i + 2) % 3],
            partner_b: members[(i + 1) % 3],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = [self.anchor, self.partner_a, self.partner_b]
            .iter()
            .all(|n| n.group() == self.group)
            && self.anchor != self.partner_a
            && self.anchor != self.partner_b
            && self.partner_a != self.partner_b;
        if ok {
            Ok(())
        } else {
            Err(DmadError::GroupMismatch(format!("invalid selection {self:?}")))
        }
    }

    /// The two interpolated pairs, each written in group order.
    pub fn pairs(&self) -> [(NetworkId, NetworkId); 2] {
        let ordered = |x: NetworkId, y: NetworkId| if x < y { (x, y) } else { (y, x) };
        [
            ordered(self.partner_a, self.anchor),
            ordered(self.anchor, self.partner_b),
        ]
    }
}

/// Which pairing a model uses for its residue classifiers.
///
/// `Pair1` and `Pair2` rotate the anchor forward by one and two positions in
/// group order relative to the correlation-selected anchor; they exist for
/// ablation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairScheme {
    #[default]
    Proposed,
    Pair1,
    Pair2,
}

impl PairScheme {
    pub const ALL: [PairScheme; 3] = [PairScheme::Proposed, PairScheme::Pair1, PairScheme::Pair2];

    pub fn apply(self, selected: &GroupSelection) -> GroupSelection {
        let shift = match self {
            PairScheme::Proposed => 0,
            PairScheme::Pair1 => 1,
            PairScheme::Pair2 => 2,
        };
        let members = selected.group.members();
        GroupSelection::with_anchor(members[(selected.anchor.index_in_group() + shift) % 3])
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PairScheme::Proposed => "proposed",
            PairScheme::Pair1 => "pair1",
            PairScheme::Pair2 => "pair2",
        }
    }
}

impl std::str::FromStr for PairScheme {
    type Err = DmadError;

    fn from_str(s: &str) -> Result<Self> {
        PairScheme::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| DmadError::InvalidConfig(format!("unknown pair scheme {s:?}")))
    }
}

/// Mean over training samples of `rho(DF_i, DF_j) + rho(DF_i, DF_k)` for each
/// candidate anchor `i`, in group order.
///
/// `per_network[m][s]` is the residual of the group's `m`-th network for
/// training sample `s`.
pub fn anchor_costs(per_network: [&[Vec<f64>]; 3]) -> Result<[f64; 3]> {
    let n = per_network[0].len();
    if n == 0 {
        return Err(DmadError::Empty("no training residuals for pair selection".into()));
    }
    if per_network.iter().any(|v| v.len() != n) {
        return Err(DmadError::DimensionMismatch {
            expected: n,
            actual: per_network.iter().map(|v| v.len()).find(|&l| l != n).unwrap_or(n),
        });
    }
    let mut sums = [0.0f64; 3];
    for ((x0, x1), x2) in per_network[0].iter().zip(per_network[1]).zip(per_network[2]) {
        let r01 = pearson(x0, x1)?;
        let r02 = pearson(x0, x2)?;
        let r12 = pearson(x1, x2)?;
        sums[0] += r01 + r02;
        sums[1] += r01 + r12;
        sums[2] += r02 + r12;
    }
    Ok(sums.map(|c| c / n as f64))
}

/// Picks the anchor with minimal mean summed correlation. Ties resolve to
/// the earliest network in group order.
pub fn select_optimal_pairs(group: Group, per_network: [&[Vec<f64>]; 3]) -> Result<GroupSelection> {
    let costs = anchor_costs(per_network)?;
    let mut best = 0;
    for i in 1..3 {
        if costs[i] < costs[best] {
            best = i;
        }
    }
    Ok(GroupSelection::with_anchor(group.members()[best]))
}

/// What the group residue interpolates.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SlerpInput {
    /// Interpolate the per-network residuals (document minus probe).
    #[default]
    Residuals,
    /// Interpolate raw document and probe features separately and subtract
    /// the two residues afterwards.
    Features,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlerpConfig {
    pub t: f64,
    /// Below this `|sin(omega)|` the interpolation degrades to a straight line.
    pub parallel_threshold: f64,
    #[serde(default)]
    pub input: SlerpInput,
}

impl Default for SlerpConfig {
    fn default() -> Self {
        Self {
            t: 0.5,
            parallel_threshold: 1e-7,
            input: SlerpInput::Residuals,
        }
    }
}

impl SlerpConfig {
    pub fn with_t(t: f64) -> Self {
        Self { t, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.t) {
            return Err(DmadError::InvalidConfig(format!("slerp t={} outside [0, 1]", self.t)));
        }
        if !(self.parallel_threshold > 0.0 && self.parallel_threshold.is_finite()) {
            return Err(DmadError::InvalidConfig(
                "slerp parallel_threshold must be positive".into(),
            ));
        }
        Ok(())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Spherical linear interpolation between two (not necessarily unit) vectors.
///
/// The angle comes from the normalised dot product; the weights are applied
/// to the raw vectors.
pub fn slerp(a: &[f64], b: &[f64], config: &SlerpConfig) -> Result<Vec<f64>> {
    config.validate()?;
    if a.len() != b.len() {
        return Err(DmadError::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    let norm_a = dot(a, a).sqrt();
    let norm_b = dot(b, b).sqrt();
    if norm_a == 0.0 || norm_b == 0.0 {
        return Err(DmadError::ZeroNorm);
    }
    let cos = (dot(a, b) / (norm_a * norm_b)).clamp(-1.0, 1.0);
    let omega = cos.acos();
    let sin_omega = omega.sin();
    let t = config.t;

    let (wa, wb) = if sin_omega.abs() < config.parallel_threshold {
        if cos < 0.0 {
            return Err(DmadError::Antipodal);
        }
        (1.0 - t, t)
    } else {
        (
            ((1.0 - t) * omega).sin() / sin_omega,
            (t * omega).sin() / sin_omega,
        )
    };
    Ok(a.iter().zip(b).map(|(x, y)| wa * x + wb * y).collect())
}

/// Like [`slerp`], but a zero-norm endpoint has no direction and is blended
/// linearly instead of failing. Antipodal inputs still fail.
pub fn slerp_or_lerp(a: &[f64], b: &[f64], config: &SlerpConfig) -> Result<Vec<f64>> {
    match slerp(a, b, config) {
        Err(DmadError::ZeroNorm) => {
            let t = config.t;
            Ok(a.iter().zip(b).map(|(x, y)| (1.0 - t) * x + t * y).collect())
        }
        other => other,
    }
}

/// `slerp(anchor, partner_a) - slerp(anchor, partner_b)` on raw vectors.
pub fn residue(
    anchor: &[f64],
    partner_a: &[f64],
    partner_b: &[f64],
    config: &SlerpConfig,
) -> Result<Vec<f64>> {
    let first = slerp(anchor, partner_a, config)?;
    let second = slerp(anchor, partner_b, config)?;
    Ok(first.iter().zip(&second).map(|(x, y)| x - y).collect())
}

/// [`residue`] built on [`slerp_or_lerp`]; used where a document and probe
/// may coincide exactly in one backbone.
pub fn residue_lenient(
    anchor: &[f64],
    partner_a: &[f64],
    partner_b: &[f64],
    config: &SlerpConfig,
) -> Result<Vec<f64>> {
    let first = slerp_or_lerp(anchor, partner_a, config)?;
    let second = slerp_or_lerp(anchor, partner_b, config)?;
    Ok(first.iter().zip(&second).map(|(x, y)| x - y).collect())
}

/// Residue feature of one evaluation pair for the selection's group. `dfs`
/// may hold residuals of any networks as long as the three selected ones are
/// present.
pub fn slerp_residue(
    dfs: &[DifferenceFeature],
    selection: &GroupSelection,
    config: &SlerpConfig,
) -> Result<Vec<f64>> {
    let [anchor, a, b] = selected_residuals(dfs, selection)?;
    residue(anchor, a, b, config)
}

pub(crate) fn selected_residuals<'a>(
    dfs: &'a [DifferenceFeature],
    selection: &GroupSelection,
) -> Result<[&'a [f64]; 3]> {
    selection.validate()?;
    let find = |network: NetworkId| {
        dfs.iter()
            .find(|d| d.network == network)
            .map(|d| d.values.as_slice())
            .ok_or_else(|| {
                DmadError::GroupMismatch(format!(
                    "{} residual missing for {} selection",
                    network, selection.group
                ))
            })
    };
    Ok([
        find(selection.anchor)?,
        find(selection.partner_a)?,
        find(selection.partner_b)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_3, FRAC_PI_6};

    use proptest::prelude::*;

    fn norm(v: &[f64]) -> f64 {
        dot(v, v).sqrt()
    }

    fn angle(a: &[f64], b: &[f64]) -> f64 {
        (dot(a, b) / (norm(a) * norm(b))).clamp(-1.0, 1.0).acos()
    }

    #[test]
    fn difference_basics() {
        assert_eq!(difference(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), vec![0.0; 3]);
        assert_eq!(difference(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), vec![1.0, -1.0]);
        assert!(matches!(
            difference(&[1.0], &[1.0, 2.0]),
            Err(DmadError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn difference_is_antisymmetric() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let u: Vec<f32> = (0..4096).map(|_| rng.random_range(-1.0..1.0)).collect();
        let v: Vec<f32> = (0..4096).map(|_| rng.random_range(-1.0..1.0)).collect();
        let uv = difference(&u, &v).unwrap();
        let vu = difference(&v, &u).unwrap();
        for i in 0..4096 {
            assert_eq!(uv[i], -vu[i]);
            assert_eq!(uv[i], f64::from(u[i]) - f64::from(v[i]));
        }
    }

    #[test]
    fn pearson_known_values() {
        let a = [0.3, -1.0, 2.5, 4.0, 0.0];
        let neg: Vec<f64> = a.iter().map(|x| -x).collect();
        assert!((pearson(&a, &a).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson(&a, &neg).unwrap() + 1.0).abs() < 1e-15);

        // Integer sums: n*Sxy - Sx*Sy = 46, (n*Sxx - Sx^2)(n*Syy - Sy^2) = 20 * 107.
        let expected = 46.0 / 2140f64.sqrt();
        let got = pearson(&[1.0, 2.0, 3.0, 4.0], &[2.0, 4.0, 6.0, 9.0]).unwrap();
        assert!((got - expected).abs() < 1e-15, "{got} vs {expected}");
    }

    #[test]
    fn pearson_errors() {
        assert!(matches!(
            pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(DmadError::DegenerateVariance)
        ));
        assert!(pearson(&[1.0], &[2.0]).is_err());
        assert!(pearson(&[1.0, 2.0], &[2.0]).is_err());
    }

    #[test]
    fn selection_tie_breaks_to_first_member() {
        let v = vec![vec![1.0, 2.0, 4.0, 3.0]; 2];
        let sel = select_optimal_pairs(Group::G1, [&v, &v, &v]).unwrap();
        assert_eq!(sel.anchor, NetworkId::Alexnet);
        let sel = select_optimal_pairs(Group::G2, [&v, &v, &v]).unwrap();
        assert_eq!(sel.anchor, NetworkId::Resnet50);
    }

    #[test]
    fn selection_errors() {
        let empty: Vec<Vec<f64>> = vec![];
        assert!(matches!(
            select_optimal_pairs(Group::G1, [&empty, &empty, &empty]),
            Err(DmadError::Empty(_))
        ));
        let flat = vec![vec![1.0; 4]];
        let ok = vec![vec![1.0, 2.0, 3.0, 5.0]];
        assert!(matches!(
            select_optimal_pairs(Group::G1, [&ok, &flat, &ok]),
            Err(DmadError::DegenerateVariance)
        ));
    }

    #[test]
    fn pair_schemes_rotate_like_the_published_table() {
        let proposed = GroupSelection::with_anchor(NetworkId::Vgg16);
        use NetworkId::*;
        assert_eq!(proposed.pairs(), [(Alexnet, Vgg16), (Vgg16, Vgg19)]);
        let p1 = PairScheme::Pair1.apply(&proposed);
        assert_eq!((p1.anchor, p1.partner_a, p1.partner_b), (Vgg19, Vgg16, Alexnet));
        let p2 = PairScheme::Pair2.apply(&proposed);
        assert_eq!((p2.anchor, p2.partner_a, p2.partner_b), (Alexnet, Vgg19, Vgg16));

        let proposed = GroupSelection::with_anchor(Resnet101);
        assert_eq!(proposed.pairs(), [(Resnet50, Resnet101), (Resnet101, Xception)]);
        let p1 = PairScheme::Pair1.apply(&proposed);
        assert_eq!((p1.anchor, p1.partner_a, p1.partner_b), (Xception, Resnet101, Resnet50));
        let p2 = PairScheme::Pair2.apply(&proposed);
        assert_eq!((p2.anchor, p2.partner_a, p2.partner_b), (Resnet50, Xception, Resnet101));
        assert_eq!(PairScheme::Proposed.apply(&proposed), proposed);
    }

    #[test]
    fn slerp_orthogonal_midpoint() {
        let out = slerp(&[1.0, 0.0], &[0.0, 1.0], &SlerpConfig::default()).unwrap();
        assert!((out[0] - FRAC_1_SQRT_2).abs() < 1e-15);
        assert!((out[1] - FRAC_1_SQRT_2).abs() < 1e-15);
    }

    #[test]
    fn slerp_parallel_falls_back_to_lerp() {
        let a = [0.2, -0.4, 1.0];
        let out = slerp(&a, &a, &SlerpConfig::default()).unwrap();
        for (x, y) in out.iter().zip(&a) {
            assert!((x - y).abs() < 1e-15);
        }
        let scaled = [0.4, -0.8, 2.0];
        let out = slerp(&a, &scaled, &SlerpConfig::default()).unwrap();
        assert!((out[2] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn slerp_errors() {
        let cfg = SlerpConfig::default();
        assert!(matches!(slerp(&[0.0, 0.0], &[1.0, 0.0], &cfg), Err(DmadError::ZeroNorm)));
        let err = slerp(&[1.0, 2.0], &[-1.0, -2.0], &cfg).unwrap_err();
        assert_eq!(err.to_string(), "antipodal, interpolation undefined");
        assert!(slerp(&[1.0], &[1.0, 0.0], &cfg).is_err());
        assert!(slerp(&[1.0, 0.0], &[0.0, 1.0], &SlerpConfig::with_t(1.5)).is_err());
    }

    #[test]
    fn slerp_bisects_sixty_degrees() {
        let a = [1.0, 0.0, 0.0];
        let b = [FRAC_PI_3.cos(), FRAC_PI_3.sin(), 0.0];
        let out = slerp(&a, &b, &SlerpConfig::default()).unwrap();
        assert!((norm(&out) - 1.0).abs() < 1e-12);
        assert!((angle(&out, &a) - FRAC_PI_6).abs() < 1e-9);
        assert!((angle(&out, &b) - FRAC_PI_6).abs() < 1e-9);
    }

    #[test]
    fn residue_degenerate_cases() {
        let anchor = DifferenceFeature { network: NetworkId::Vgg16, values: vec![1.0, 2.0, -1.0] };
        let same = vec![0.5, -1.0, 3.0];
        let dfs = vec![
            DifferenceFeature { network: NetworkId::Alexnet, values: same.clone() },
            anchor,
            DifferenceFeature { network: NetworkId::Vgg19, values: same },
        ];
        let sel = GroupSelection::with_anchor(NetworkId::Vgg16);
        let r = slerp_residue(&dfs, &sel, &SlerpConfig::default()).unwrap();
        assert!(r.iter().all(|&x| x == 0.0));

        let dfs = vec![
            DifferenceFeature { network: NetworkId::Alexnet, values: vec![3.0, 0.0, 1.0] },
            dfs[1].clone(),
            DifferenceFeature { network: NetworkId::Vgg19, values: vec![0.0, 1.0, 1.0] },
        ];
        let r = slerp_residue(&dfs, &sel, &SlerpConfig::with_t(0.0)).unwrap();
        assert!(r.iter().all(|&x| x == 0.0));

        let g2 = GroupSelection::with_anchor(NetworkId::Xception);
        assert!(matches!(
            slerp_residue(&dfs, &g2, &SlerpConfig::default()),
            Err(DmadError::GroupMismatch(_))
        ));
    }

    /// Independent evaluation of the interpolation formula: the angle is taken
    /// from atan2(|a x b|, a.b) rather than acos of the cosine.
    fn slerp_oracle(a: &[f64], b: &[f64], t: f64) -> Vec<f64> {
        let aa: f64 = a.iter().map(|x| x * x).sum();
        let bb: f64 = b.iter().map(|x| x * x).sum();
        let ab: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let cross = (aa * bb - ab * ab).max(0.0).sqrt();
        let omega = cross.atan2(ab);
        let s = omega.sin();
        a.iter()
            .zip(b)
            .map(|(x, y)| (((1.0 - t) * omega).sin() * x + (t * omega).sin() * y) / s)
            .collect()
    }

    #[test]
    fn residue_matches_independent_formula() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let mut v = || (0..8).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
            let (x, y, z) = (v(), v(), v());
            let t: f64 = rng.random_range(0.0..=1.0);
            let cfg = SlerpConfig::with_t(t);
            let got = residue(&x, &y, &z, &cfg).unwrap();
            let first = slerp_oracle(&x, &y, t);
            let second = slerp_oracle(&x, &z, t);
            for i in 0..8 {
                let want = first[i] - second[i];
                assert!((got[i] - want).abs() < 1e-10, "{} vs {}", got[i], want);
            }
        }
    }

    fn vec_strategy(dim: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-10.0f64..10.0, dim)
    }

    proptest! {
        #[test]
        fn pearson_symmetric_scale_invariant_bounded(
            a in vec_strategy(12), b in vec_strategy(12), k in 0.01f64..100.0
        ) {
            let r = match pearson(&a, &b) {
                Ok(r) => r,
                Err(_) => return Ok(()),
            };
            prop_assert!((-1.0..=1.0).contains(&r));
            prop_assert!((pearson(&b, &a).unwrap() - r).abs() < 1e-12);
            let scaled: Vec<f64> = a.iter().map(|x| k * x).collect();
            prop_assert!((pearson(&scaled, &b).unwrap() - r).abs() < 1e-9);
        }

        #[test]
        fn slerp_endpoints_and_symmetry(a in vec_strategy(6), b in vec_strategy(6), t in 0.0f64..=1.0) {
            prop_assume!(norm(&a) > 1e-3 && norm(&b) > 1e-3);
            prop_assume!(angle(&a, &b) < std::f64::consts::PI - 1e-3);
            let at = |t: f64| slerp(&a, &b, &SlerpConfig::with_t(t)).unwrap();
            let start = at(0.0);
            let end = at(1.0);
            let dist = |x: &[f64], y: &[f64]| norm(&x.iter().zip(y).map(|(p, q)| p - q).collect::<Vec<_>>());
            prop_assert!(dist(&start, &a) <= 1e-9 * norm(&a));
            prop_assert!(dist(&end, &b) <= 1e-9 * norm(&b));
            let back = slerp(&b, &a, &SlerpConfig::with_t(1.0 - t)).unwrap();
            prop_assert!(dist(&at(t), &back) <= 1e-9 * (norm(&a) + norm(&b)));
        }
    }
}
