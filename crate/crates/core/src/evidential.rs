//! Subjective-logic algebra over the singleton-plus-frame family.
//!
//! Evidence `e` (one non-negative value per class) maps to a Dirichlet with
//! `alpha_k = e_k + 1` and strength `S = sum(alpha)`. The opinion is
//! `b_k = e_k / S`, `u = K / S`. Opinions from independent sources are fused
//! with Dempster's rule, whose identity element is the vacuous opinion
//! (`b = 0`, `u = 1`).

use tracing::warn;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Conflict at or above `1 - TOTAL_CONFLICT_EPS` is treated as total.
pub const TOTAL_CONFLICT_EPS: f64 = 1e-12;

/// Non-negative per-class support.
#[derive(Clone, PartialEq, Debug)]
pub struct Evidence<T>(Vec<T>);

impl<T: Scalar> Evidence<T> {
    pub fn new(values: Vec<T>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::domain(format!("need at least 2 classes, got {}", values.len())));
        }
        if let Some((k, v)) = values.iter().enumerate().find(|(_, v)| !(**v >= T::zero()) || !v.is_finite()) {
            return Err(Error::domain(format!("evidence[{k}] = {v} is not a finite non-negative value")));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[T] {
        &self.0
    }

    pub fn num_classes(&self) -> usize {
        self.0.len()
    }

    pub fn dirichlet(&self) -> DirichletParams<T> {
        let alpha: Vec<T> = self.0.iter().map(|&e| e + T::one()).collect();
        let strength = alpha.iter().copied().sum();
        DirichletParams { alpha, strength }
    }
}

/// Dirichlet concentration derived from evidence.
#[derive(Clone, PartialEq, Debug)]
pub struct DirichletParams<T> {
    pub alpha: Vec<T>,
    pub strength: T,
}

impl<T: Scalar> DirichletParams<T> {
    /// Mean of the Dirichlet, `alpha_k / S`.
    pub fn mean(&self) -> Vec<T> {
        self.alpha.iter().map(|&a| a / self.strength).collect()
    }
}

/// Belief masses plus uncertainty on the K-simplex.
#[derive(Clone, PartialEq, Debug)]
pub struct Opinion<T> {
    beliefs: Vec<T>,
    uncertainty: T,
}

impl<T: Scalar> Opinion<T> {
    /// Builds an opinion, checking the simplex constraint to 1e-9.
    pub fn new(beliefs: Vec<T>, uncertainty: T) -> Result<Self> {
        if beliefs.len() < 2 {
            return Err(Error::domain("an opinion needs at least 2 classes"));
        }
        let in_unit = |v: T| v >= T::zero() && v <= T::one();
        if !beliefs.iter().all(|&b| in_unit(b)) || !in_unit(uncertainty) {
            return Err(Error::domain("belief and uncertainty masses must lie in [0, 1]"));
        }
        let total: T = beliefs.iter().copied().sum::<T>() + uncertainty;
        if (total - T::one()).abs().as_f64() > 1e-9 {
            return Err(Error::domain(format!("masses sum to {total}, expected 1")));
        }
        Ok(Self {
            beliefs,
            uncertainty,
        })
    }

    pub fn vacuous(num_classes: usize) -> Self {
        Self {
            beliefs: vec![T::zero(); num_classes],
            uncertainty: T::one(),
        }
    }

    pub fn from_evidence(evidence: &Evidence<T>) -> Self {
        let strength = evidence.dirichlet().strength;
        Self {
            beliefs: evidence.values().iter().map(|&e| e / strength).collect(),
            uncertainty: T::of_usize(evidence.num_classes()) / strength,
        }
    }

    pub fn beliefs(&self) -> &[T] {
        &self.beliefs
    }

    pub fn belief(&self, k: usize) -> T {
        self.beliefs[k]
    }

    pub fn uncertainty(&self) -> T {
        self.uncertainty
    }

    pub fn num_classes(&self) -> usize {
        self.beliefs.len()
    }

    pub fn is_vacuous(&self) -> bool {
        self.uncertainty == T::one() && self.beliefs.iter().all(|b| b.is_zero())
    }

    /// Index of the largest belief; ties go to the lower class id.
    pub fn argmax(&self) -> usize {
        argmax_first(&self.beliefs)
    }
}

pub(crate) fn argmax_first<T: PartialOrd + Copy>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

pub fn opinion_from_evidence<T: Scalar>(evidence: &Evidence<T>) -> Opinion<T> {
    Opinion::from_evidence(evidence)
}

/// Expected class probabilities `(e_k + 1) / S`.
pub fn expected_probability<T: Scalar>(evidence: &Evidence<T>) -> Vec<T> {
    evidence.dirichlet().mean()
}

/// Mass assigned to contradictory singleton pairs, `sum_{i != j} b1_i b2_j`.
///
/// Summed pairwise so that swapping the operands gives a bit-identical value.
pub fn conflict<T: Scalar>(m1: &Opinion<T>, m2: &Opinion<T>) -> T {
    let (a, b) = (&m1.beliefs, &m2.beliefs);
    let mut c = T::zero();
    for i in 0..a.len() {
        for j in i + 1..a.len() {
            c += a[i] * b[j] + a[j] * b[i];
        }
    }
    c
}

/// Dempster's rule.
///
/// Fails with [`Error::TotalConflict`] when `C >= 1 - 1e-12`; see
/// [`combine_or_fallback`] for the total variant used by pixel fusion.
pub fn combine<T: Scalar>(m1: &Opinion<T>, m2: &Opinion<T>) -> Result<Opinion<T>> {
    if m1.num_classes() != m2.num_classes() {
        return Err(Error::domain(format!(
            "cannot combine opinions over {} and {} classes",
            m1.num_classes(),
            m2.num_classes()
        )));
    }
    let c = conflict(m1, m2);
    if c >= T::one() - T::of(TOTAL_CONFLICT_EPS) {
        return Err(Error::TotalConflict { conflict: c.as_f64() });
    }
    let norm = T::one() - c;
    let (u1, u2) = (m1.uncertainty, m2.uncertainty);
    let beliefs = m1
        .beliefs
        .iter()
        .zip(&m2.beliefs)
        .map(|(&b1, &b2)| (b1 * b2 + (b1 * u2 + b2 * u1)) / norm)
        .collect();
    Ok(Opinion {
        beliefs,
        uncertainty: u1 * u2 / norm,
    })
}

/// Dempster's rule that never fails on conflict: under total conflict the
/// operand with the lower uncertainty is returned (first operand on ties).
pub fn combine_or_fallback<T: Scalar>(m1: &Opinion<T>, m2: &Opinion<T>) -> Result<Opinion<T>> {
    match combine(m1, m2) {
        Err(Error::TotalConflict { conflict }) => {
            warn!(conflict, "total conflict in Dempster combination, keeping the more certain opinion");
            Ok(if m2.uncertainty < m1.uncertainty { m2.clone() } else { m1.clone() })
        }
        other => other,
    }
}

/// Left fold of [`combine_or_fallback`].
pub fn combine_all<T: Scalar>(opinions: &[Opinion<T>]) -> Result<Opinion<T>> {
    let (first, rest) = opinions
        .split_first()
        .ok_or_else(|| Error::domain("cannot combine an empty list of opinions"))?;
    rest.iter().try_fold(first.clone(), |acc, m| combine_or_fallback(&acc, m))
}

/// Per-pixel evidence with `K` planar planes of `height * width`, row-major.
#[derive(Clone, PartialEq, Debug)]
pub struct EvidenceMap<T> {
    height: usize,
    width: usize,
    num_classes: usize,
    data: Vec<T>,
}

impl<T: Scalar> EvidenceMap<T> {
    pub fn zeros(height: usize, width: usize, num_classes: usize) -> Self {
        Self {
            height,
            width,
            num_classes,
            data: vec![T::zero(); height * width * num_classes],
        }
    }

    /// `data` holds `num_classes` planes back to back.
    pub fn from_planes(height: usize, width: usize, num_classes: usize, data: Vec<T>) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::domain("evidence maps need at least 2 classes"));
        }
        if data.len() != height * width * num_classes {
            return Err(Error::domain("evidence buffer does not match dimensions"));
        }
        if data.iter().any(|v| !(*v >= T::zero()) || !v.is_finite()) {
            return Err(Error::domain("evidence must be finite and non-negative"));
        }
        Ok(Self {
            height,
            width,
            num_classes,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn plane(&self, k: usize) -> &[T] {
        let n = self.height * self.width;
        &self.data[k * n..(k + 1) * n]
    }

    pub fn plane_mut(&mut self, k: usize) -> &mut [T] {
        let n = self.height * self.width;
        &mut self.data[k * n..(k + 1) * n]
    }

    #[inline]
    pub fn get(&self, k: usize, y: usize, x: usize) -> T {
        self.data[(k * self.height + y) * self.width + x]
    }

    pub fn evidence_at(&self, pixel: usize) -> Evidence<T> {
        let n = self.height * self.width;
        Evidence((0..self.num_classes).map(|k| self.data[k * n + pixel]).collect())
    }

    /// Expected-probability planes `(e_k + 1) / S`, planar like the input.
    pub fn expected_probability_planes(&self) -> Vec<Vec<T>> {
        let n = self.height * self.width;
        let mut planes = vec![vec![T::zero(); n]; self.num_classes];
        for i in 0..n {
            let p = expected_probability(&self.evidence_at(i));
            for (k, v) in p.into_iter().enumerate() {
                planes[k][i] = v;
            }
        }
        planes
    }
}

/// Per-pixel opinions: `K` belief planes then one uncertainty plane.
///
/// Pixels outside `support` stand for "no information" and are fused as the
/// vacuous opinion regardless of what is stored there.
#[derive(Clone, PartialEq, Debug)]
pub struct OpinionMap<T> {
    height: usize,
    width: usize,
    num_classes: usize,
    planes: Vec<T>,
    support: Vec<bool>,
}

impl<T: Scalar> OpinionMap<T> {
    pub fn vacuous(height: usize, width: usize, num_classes: usize) -> Self {
        let n = height * width;
        let mut planes = vec![T::zero(); n * (num_classes + 1)];
        planes[n * num_classes..].fill(T::one());
        Self {
            height,
            width,
            num_classes,
            planes,
            support: vec![true; n],
        }
    }

    /// Lifts a pixel-wise [`Opinion::from_evidence`]; `out_of_support` marks
    /// pixels whose evidence is unknown.
    pub fn from_evidence(evidence: &EvidenceMap<T>, out_of_support: Option<&[bool]>) -> Result<Self> {
        let (h, w, k) = (evidence.height, evidence.width, evidence.num_classes);
        let n = h * w;
        if let Some(mask) = out_of_support {
            if mask.len() != n {
                return Err(Error::domain("support mask does not match evidence dimensions"));
            }
        }
        let mut map = Self::vacuous(h, w, k);
        for i in 0..n {
            if out_of_support.is_some_and(|m| m[i]) {
                map.support[i] = false;
                continue;
            }
            map.set_opinion(i, &Opinion::from_evidence(&evidence.evidence_at(i)));
        }
        Ok(map)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn belief_plane(&self, k: usize) -> &[T] {
        let n = self.len();
        &self.planes[k * n..(k + 1) * n]
    }

    pub fn uncertainty_plane(&self) -> &[T] {
        let n = self.len();
        &self.planes[self.num_classes * n..]
    }

    pub fn in_support(&self, pixel: usize) -> bool {
        self.support[pixel]
    }

    pub fn support(&self) -> &[bool] {
        &self.support
    }

    /// Opinion at a pixel as stored (ignores support).
    pub fn opinion_at(&self, pixel: usize) -> Opinion<T> {
        let n = self.len();
        Opinion {
            beliefs: (0..self.num_classes).map(|k| self.planes[k * n + pixel]).collect(),
            uncertainty: self.planes[self.num_classes * n + pixel],
        }
    }

    /// Opinion at a pixel as seen by fusion: vacuous when out of support.
    pub fn effective_opinion(&self, pixel: usize) -> Opinion<T> {
        if self.support[pixel] {
            self.opinion_at(pixel)
        } else {
            Opinion::vacuous(self.num_classes)
        }
    }

    pub fn set_opinion(&mut self, pixel: usize, m: &Opinion<T>) {
        let n = self.len();
        for (k, &b) in m.beliefs.iter().enumerate() {
            self.planes[k * n + pixel] = b;
        }
        self.planes[self.num_classes * n + pixel] = m.uncertainty;
    }

    pub fn set_support(&mut self, pixel: usize, in_support: bool) {
        self.support[pixel] = in_support;
    }

    /// Per-pixel belief argmax over classes.
    pub fn argmax_map(&self) -> Vec<usize> {
        (0..self.len()).map(|i| self.opinion_at(i).argmax()).collect()
    }
}

/// Pixel-wise [`combine_all`]. Arithmetic runs in `f64` whatever `T` is.
pub fn combine_opinion_maps<T: Scalar>(maps: &[OpinionMap<T>]) -> Result<OpinionMap<T>> {
    let first = maps
        .first()
        .ok_or_else(|| Error::domain("cannot combine an empty list of opinion maps"))?;
    let (h, w, k) = (first.height, first.width, first.num_classes);
    if let Some(bad) = maps.iter().find(|m| (m.height, m.width, m.num_classes) != (h, w, k)) {
        return Err(Error::domain(format!(
            "opinion map {}x{}x{} does not match {h}x{w}x{k}",
            bad.height, bad.width, bad.num_classes
        )));
    }
    let mut out = OpinionMap::vacuous(h, w, k);
    let widen = |m: Opinion<T>| Opinion::<f64> {
        beliefs: m.beliefs.iter().map(|b| b.as_f64()).collect(),
        uncertainty: m.uncertainty.as_f64(),
    };
    let mut stack = Vec::with_capacity(maps.len());
    for i in 0..h * w {
        stack.clear();
        stack.extend(maps.iter().map(|m| widen(m.effective_opinion(i))));
        let fused = combine_all(&stack)?;
        out.set_opinion(
            i,
            &Opinion {
                beliefs: fused.beliefs.iter().map(|&b| T::of(b)).collect(),
                uncertainty: T::of(fused.uncertainty),
            },
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn ev(v: &[f64]) -> Evidence<f64> {
        Evidence::new(v.to_vec()).unwrap()
    }

    fn op(b: &[f64], u: f64) -> Opinion<f64> {
        Opinion::new(b.to_vec(), u).unwrap()
    }

    #[test]
    fn opinion_examples() {
        let m = opinion_from_evidence(&ev(&[0.0, 0.0]));
        assert_eq!(m.beliefs(), &[0.0, 0.0]);
        assert_eq!(m.uncertainty(), 1.0);

        let m = opinion_from_evidence(&ev(&[3.0, 1.0]));
        assert_abs_diff_eq!(m.belief(0), 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(m.belief(1), 1.0 / 6.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m.uncertainty(), 1.0 / 3.0, epsilon = 1e-12);

        let m = opinion_from_evidence(&ev(&[1.0, 1.0, 1.0]));
        for k in 0..3 {
            assert_abs_diff_eq!(m.belief(k), 1.0 / 6.0, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(m.uncertainty(), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn evidence_validation() {
        assert!(Evidence::new(vec![1.0f64, -0.1]).is_err());
        assert!(Evidence::new(vec![1.0f64]).is_err());
        assert!(Evidence::new(vec![f64::NAN, 1.0]).is_err());
        assert!(Evidence::new(vec![f64::INFINITY, 1.0]).is_err());
    }

    #[test]
    fn expected_probability_examples() {
        assert_eq!(expected_probability(&ev(&[0.0, 0.0])), vec![0.5, 0.5]);
        let p = expected_probability(&ev(&[3.0, 1.0]));
        assert_abs_diff_eq!(p[0], 4.0 / 6.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p[1], 2.0 / 6.0, epsilon = 1e-12);
        let p = expected_probability(&ev(&[8.0, 0.0, 0.0]));
        assert_abs_diff_eq!(p[0], 9.0 / 11.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p[2], 1.0 / 11.0, epsilon = 1e-12);
    }

    #[test]
    fn dempster_worked_example() {
        // C = 0.6*0.3 + 0.2*0.5 = 0.28
        // b1 = (0.30 + 0.12 + 0.10) / 0.72, b2 = (0.06 + 0.04 + 0.06) / 0.72, u = 0.04 / 0.72
        let m1 = op(&[0.6, 0.2], 0.2);
        let m2 = op(&[0.5, 0.3], 0.2);
        assert_abs_diff_eq!(conflict(&m1, &m2), 0.28, epsilon = 1e-12);
        let m = combine(&m1, &m2).unwrap();
        assert_abs_diff_eq!(m.belief(0), 0.52 / 0.72, epsilon = 1e-12);
        assert_abs_diff_eq!(m.belief(1), 0.16 / 0.72, epsilon = 1e-12);
        assert_abs_diff_eq!(m.uncertainty(), 0.04 / 0.72, epsilon = 1e-12);
        assert_eq!(combine(&m2, &m1).unwrap(), m);
    }

    #[test]
    fn vacuous_is_identity() {
        let m = op(&[0.3, 0.45, 0.05], 0.2);
        let v = Opinion::vacuous(3);
        assert_eq!(combine(&m, &v).unwrap(), m);
        assert_eq!(combine(&v, &m).unwrap(), m);
        assert_eq!(combine_all(&[m.clone(), v.clone(), v]).unwrap(), m);
        assert_eq!(combine_all(std::slice::from_ref(&m)).unwrap(), m);
    }

    #[test]
    fn class_mismatch_and_empty_are_errors() {
        assert!(combine(&Opinion::<f64>::vacuous(2), &Opinion::vacuous(3)).is_err());
        assert!(combine_all::<f64>(&[]).is_err());
        assert!(combine_opinion_maps::<f64>(&[]).is_err());
        let a = OpinionMap::<f64>::vacuous(2, 2, 2);
        let b = OpinionMap::<f64>::vacuous(2, 3, 2);
        assert!(combine_opinion_maps(&[a, b]).is_err());
    }

    #[test]
    fn total_conflict_falls_back_to_more_certain() {
        let m1 = op(&[1.0, 0.0], 0.0);
        let m2 = op(&[0.0, 0.9], 0.1);
        assert!(combine(&m1, &m2).is_ok());
        let m3 = op(&[0.0, 1.0], 0.0);
        assert!(matches!(combine(&m1, &m3), Err(Error::TotalConflict { .. })));
        assert_eq!(combine_or_fallback(&m1, &m3).unwrap(), m1);
        let m4 = op(&[0.0, 1.0], 0.0);
        let m5 = op(&[0.999_999_999_999_9, 0.0], 1e-13);
        assert_eq!(combine_or_fallback(&m5, &m4).unwrap(), m4);
    }

    #[test]
    fn opinion_map_fusion_honours_support() {
        let e = EvidenceMap::from_planes(1, 2, 2, vec![3.0, 0.5, 1.0, 2.0]).unwrap();
        let a = OpinionMap::from_evidence(&e, None).unwrap();
        let b = OpinionMap::from_evidence(&e, Some(&[false, true])).unwrap();
        let fused = combine_opinion_maps(&[a.clone(), b]).unwrap();
        // pixel 1 of `b` is out of support, so it fuses as vacuous
        assert_eq!(fused.opinion_at(1), a.opinion_at(1));
        assert_eq!(
            fused.opinion_at(0),
            combine(&a.opinion_at(0), &a.opinion_at(0)).unwrap()
        );
        let v = OpinionMap::<f64>::vacuous(1, 2, 2);
        assert_eq!(combine_opinion_maps(&[a.clone(), v.clone()]).unwrap(), a);
        assert_eq!(combine_opinion_maps(&[v.clone(), v.clone()]).unwrap(), v);
    }

    #[test]
    fn probability_planes_sum_to_one() {
        let e = EvidenceMap::from_planes(1, 3, 2, vec![0.0, 1.0, 7.0, 0.0, 2.0, 0.5]).unwrap();
        let p = e.expected_probability_planes();
        for i in 0..3 {
            assert_abs_diff_eq!(p[0][i] + p[1][i], 1.0, epsilon = 1e-12);
        }
        assert_eq!(p[0][0], 0.5);
    }

    fn evidence_strategy() -> impl Strategy<Value = Vec<f64>> {
        prop_oneof![Just(2usize), Just(3usize), Just(5usize)]
            .prop_flat_map(|k| proptest::collection::vec(0.0f64..50.0, k))
    }

    proptest! {
        #[test]
        fn opinions_lie_on_simplex(e in evidence_strategy()) {
            let e = Evidence::new(e).unwrap();
            let m = opinion_from_evidence(&e);
            let total: f64 = m.beliefs().iter().sum::<f64>() + m.uncertainty();
            prop_assert!((total - 1.0).abs() < 1e-9);
            let p: f64 = expected_probability(&e).iter().sum();
            prop_assert!((p - 1.0).abs() < 1e-9);
            prop_assert!(m.uncertainty() > 0.0);
        }

        #[test]
        fn combination_preserves_simplex(a in evidence_strategy(), scale in 0.1f64..3.0) {
            let b: Vec<f64> = a.iter().rev().map(|v| v * scale).collect();
            let m1 = opinion_from_evidence(&Evidence::new(a).unwrap());
            let m2 = opinion_from_evidence(&Evidence::new(b).unwrap());
            let m = combine(&m1, &m2).unwrap();
            let total: f64 = m.beliefs().iter().sum::<f64>() + m.uncertainty();
            prop_assert!((total - 1.0).abs() < 1e-9);
            prop_assert!(m.beliefs().iter().all(|&b| b >= 0.0));
            prop_assert_eq!(combine(&m2, &m1).unwrap(), m);
        }
    }
}
