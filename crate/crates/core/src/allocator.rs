//! Conservation-exact volume allocation over an `h`-bin horizon, and
//! recursive refinement of coarse bins into finer ones.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::nn::layers::{self, Initializer};
use crate::nn::{ParameterStore, Tape, Tensor, Var};

/// Fractions of the order assigned to each bin.
#[derive(Clone, Debug, PartialEq)]
pub struct AllocationCurve {
    weights: Vec<f64>,
}

const SUM_TOLERANCE: f64 = 1e-9;

impl AllocationCurve {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidAllocation("no bins".into()));
        }
        if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(Error::InvalidAllocation(format!("bad weight {w}")));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::InvalidAllocation(format!("weights sum to {total}")));
        }
        Ok(Self { weights })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn into_weights(self) -> Vec<f64> {
        self.weights
    }
}

/// Equal split across `h` bins.
pub fn naive_allocation(h: usize) -> Result<AllocationCurve> {
    if h == 0 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    let w = 1.0 / h as f64;
    let mut weights = vec![w; h];
    weights[h - 1] = 1.0 - w * (h - 1) as f64;
    AllocationCurve::new(weights)
}

/// Clips `α_t · base_t` against the remaining budget bin by bin; the last
/// bin takes whatever is left.
pub fn apply_adjustments(base: &[f64], alpha: &[f64]) -> Result<AllocationCurve> {
    let h = base.len();
    if h < 1 || alpha.len() + 1 != h {
        return Err(Error::InvalidArgument(format!(
            "{} adjustments for {h} bins",
            alpha.len()
        )));
    }
    let mut v = Vec::with_capacity(h);
    let mut used = 0.0;
    for (b, a) in base.iter().zip(alpha) {
        let remaining = 1.0 - used;
        let x = a * b;
        let vt = if x >= remaining { remaining } else { x.max(0.0) };
        used += vt;
        v.push(vt);
    }
    v.push(1.0 - used);
    AllocationCurve::new(v)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AllocatorConfig {
    pub horizon: usize,
    pub lookback: usize,
    pub context_width: usize,
    /// Hidden widths of each bin's feed-forward adjuster.
    pub hidden: [usize; 2],
}

impl AllocatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon < 2 {
            return Err(Error::InvalidArgument("horizon must be at least 2".into()));
        }
        if self.lookback < 1 {
            return Err(Error::InvalidArgument("lookback must be at least 1".into()));
        }
        Ok(())
    }

    /// 0-based context row seen by 1-based bin `t`.
    pub fn context_row(&self, t: usize) -> usize {
        self.lookback - 1 + (t - 1)
    }
}

pub const BASE_LOGITS: &str = "alloc.base.logits";

fn adjuster(t: usize) -> String {
    format!("alloc.adj.{t}")
}

pub fn init_allocator(init: &mut Initializer, cfg: &AllocatorConfig) -> Result<()> {
    cfg.validate()?;
    init.constant(BASE_LOGITS, &[1, cfg.horizon], 0.0)?;
    let [w1, w2] = cfg.hidden;
    for t in 1..cfg.horizon {
        let p = adjuster(t);
        init.dense(&format!("{p}.l1"), cfg.context_width + t - 1, w1)?;
        init.dense(&format!("{p}.l2"), w1, w2)?;
        init.glorot(&format!("{p}.l3.w"), w2, 1, 0.1)?;
        init.constant(&format!("{p}.l3.b"), &[1, 1], 0.0)?;
    }
    Ok(())
}

/// Zeroes every adjuster's output layer, leaving `α ≡ 1`.
pub fn disable_adjusters(store: &mut ParameterStore, cfg: &AllocatorConfig) -> Result<()> {
    let [_, w2] = cfg.hidden;
    for t in 1..cfg.horizon {
        let p = adjuster(t);
        store.set_value(&format!("{p}.l3.w"), Tensor::zeros(&[w2, 1]))?;
        store.set_value(&format!("{p}.l3.b"), Tensor::zeros(&[1, 1]))?;
    }
    Ok(())
}

/// Zeroes the adjusters and excludes them from optimization, leaving a
/// base-curve-only allocator.
pub fn freeze_adjusters(store: &mut ParameterStore, cfg: &AllocatorConfig) -> Result<()> {
    disable_adjusters(store, cfg)?;
    for t in 1..cfg.horizon {
        for layer in ["l1", "l2", "l3"] {
            for leaf in ["w", "b"] {
                store.get_mut(&format!("{}.{layer}.{leaf}", adjuster(t)))?.trainable = false;
            }
        }
    }
    Ok(())
}

/// The learned base curve, softmax of the stored logits.
pub fn base_curve(store: &ParameterStore) -> Result<Vec<f64>> {
    let logits = store.value(BASE_LOGITS)?.data();
    let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
    let s: f64 = e.iter().sum();
    Ok(e.into_iter().map(|v| v / s).collect())
}

pub struct AllocationVars {
    /// `1 x h` allocation.
    pub volumes: Var,
    /// `1 x h` base curve.
    pub base: Var,
    /// `α_t` for `t = 1..h-1`.
    pub alphas: Vec<Var>,
}

/// Builds the sequential allocation for one sample from its context
/// (`rows x context_width`).
pub fn allocate(
    tape: &mut Tape,
    store: &ParameterStore,
    cfg: &AllocatorConfig,
    context: Var,
) -> Result<AllocationVars> {
    cfg.validate()?;
    let ctx = tape.value(context);
    if !ctx.all_finite() {
        return Err(Error::NonFinite("allocator context".into()));
    }
    let need = cfg.context_row(cfg.horizon - 1) + 1;
    if ctx.rows() < need || ctx.cols() != cfg.context_width {
        return Err(Error::shape(
            "allocate",
            format!(
                "context {:?}, need at least {need} rows of width {}",
                ctx.shape(),
                cfg.context_width
            ),
        ));
    }
    let logits = tape.param(store, BASE_LOGITS)?;
    let base = tape.softmax_rows(logits, None)?;
    let one = tape.constant(Tensor::scalar(1.0));
    let mut used: Option<Var> = None;
    let mut volumes = Vec::with_capacity(cfg.horizon);
    let mut alphas = Vec::with_capacity(cfg.horizon - 1);
    for t in 1..cfg.horizon {
        let row = tape.slice_rows(context, cfg.context_row(t), 1)?;
        let input = if volumes.is_empty() {
            row
        } else {
            let mut parts = vec![row];
            parts.extend_from_slice(&volumes);
            tape.concat_cols(&parts)?
        };
        let p = adjuster(t);
        let z = layers::dense(tape, store, input, &format!("{p}.l1"))?;
        let z = tape.relu(z);
        let z = layers::dense(tape, store, z, &format!("{p}.l2"))?;
        let z = tape.relu(z);
        let f = layers::dense(tape, store, z, &format!("{p}.l3"))?;
        let th = tape.tanh(f);
        let alpha = tape.add_scalar(th, 1.0);
        let vb = tape.element(base, 0, t - 1)?;
        let proposed = tape.mul(alpha, vb)?;
        let remaining = match used {
            None => one,
            Some(u) => tape.sub(one, u)?,
        };
        let vt = tape.clip_cap(proposed, remaining)?;
        used = Some(match used {
            None => vt,
            Some(u) => tape.add(u, vt)?,
        });
        volumes.push(vt);
        alphas.push(alpha);
    }
    let last = tape.sub(one, used.expect("horizon >= 2"))?;
    volumes.push(last);
    let volumes = tape.concat_cols(&volumes)?;
    Ok(AllocationVars {
        volumes,
        base,
        alphas,
    })
}

/// Forward-only convenience returning a validated curve.
pub fn allocate_curve(
    store: &ParameterStore,
    cfg: &AllocatorConfig,
    context: &Tensor,
) -> Result<AllocationCurve> {
    let mut tape = Tape::new();
    let c = tape.constant(context.clone());
    let out = allocate(&mut tape, store, cfg, c)?;
    AllocationCurve::new(tape.value(out.volumes).data().to_vec())
}

/// Splits one coarse bin into finer sub-bins.
pub trait SubAllocator {
    fn sub_bins(&self) -> usize;
    /// Curve over the sub-bins of parent bin `parent_index` at recursion
    /// level `depth`.
    fn allocate(&self, parent_index: usize, depth: usize) -> Result<AllocationCurve>;
}

pub struct UniformSubAllocator {
    pub bins: usize,
}

impl SubAllocator for UniformSubAllocator {
    fn sub_bins(&self) -> usize {
        self.bins
    }

    fn allocate(&self, _: usize, _: usize) -> Result<AllocationCurve> {
        naive_allocation(self.bins)
    }
}

/// A fixed curve, e.g. the base curve learned at the finer frequency.
pub struct CurveSubAllocator {
    pub curve: AllocationCurve,
}

impl SubAllocator for CurveSubAllocator {
    fn sub_bins(&self) -> usize {
        self.curve.len()
    }

    fn allocate(&self, _: usize, _: usize) -> Result<AllocationCurve> {
        Ok(self.curve.clone())
    }
}

pub const REFINE_THRESHOLD_S: u64 = 1440;

/// Leaf bins after refinement, in time order.
#[derive(Clone, Debug, PartialEq)]
pub struct RefinedCurve {
    pub weights: Vec<f64>,
    pub durations_s: Vec<u64>,
    /// Index of the original parent bin for each leaf.
    pub parents: Vec<usize>,
}

/// Recursively replaces every bin longer than `threshold_s` with
/// `weight × sub-curve`, using the sub-allocator registered for that bin
/// duration.
pub fn refine_allocation(
    parent: &AllocationCurve,
    bin_duration_s: u64,
    threshold_s: u64,
    ladder: &BTreeMap<u64, Box<dyn SubAllocator>>,
) -> Result<RefinedCurve> {
    let durations = vec![bin_duration_s; parent.len()];
    refine_bins(parent.weights(), &durations, threshold_s, ladder)
}

/// As [`refine_allocation`] for bins of individual durations.
pub fn refine_bins(
    weights: &[f64],
    durations_s: &[u64],
    threshold_s: u64,
    ladder: &BTreeMap<u64, Box<dyn SubAllocator>>,
) -> Result<RefinedCurve> {
    if weights.len() != durations_s.len() {
        return Err(Error::InvalidArgument(format!(
            "{} weights for {} durations",
            weights.len(),
            durations_s.len()
        )));
    }
    let mut out = RefinedCurve {
        weights: Vec::new(),
        durations_s: Vec::new(),
        parents: Vec::new(),
    };
    for (i, (&w, &d)) in weights.iter().zip(durations_s).enumerate() {
        refine_bin(w, d, threshold_s, ladder, i, 0, &mut out)?;
    }
    Ok(out)
}

fn refine_bin(
    weight: f64,
    duration: u64,
    threshold: u64,
    ladder: &BTreeMap<u64, Box<dyn SubAllocator>>,
    parent: usize,
    depth: usize,
    out: &mut RefinedCurve,
) -> Result<()> {
    if duration <= threshold {
        out.weights.push(weight);
        out.durations_s.push(duration);
        out.parents.push(parent);
        return Ok(());
    }
    let sub = ladder
        .get(&duration)
        .ok_or(Error::MissingSubAllocator(duration))?;
    let n = sub.sub_bins() as u64;
    if n < 2 || duration % n != 0 {
        return Err(Error::InvalidArgument(format!(
            "{n} sub-bins do not evenly divide a {duration} s bin"
        )));
    }
    let curve = sub.allocate(parent, depth)?;
    if curve.len() as u64 != n {
        return Err(Error::InvalidAllocation(format!(
            "sub-allocator returned {} bins, declared {n}",
            curve.len()
        )));
    }
    for &c in curve.weights() {
        refine_bin(weight * c, duration / n, threshold, ladder, parent, depth + 1, out)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(h: usize) -> AllocatorConfig {
        AllocatorConfig {
            horizon: h,
            lookback: 3,
            context_width: 4,
            hidden: [6, 4],
        }
    }

    fn store(c: &AllocatorConfig, seed: u64) -> ParameterStore {
        let mut s = ParameterStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        init_allocator(&mut Initializer::new(&mut s, &mut rng), c).unwrap();
        s
    }

    fn context(c: &AllocatorConfig, salt: f64) -> Tensor {
        let rows = c.lookback + c.horizon - 1;
        Tensor::matrix(
            rows,
            c.context_width,
            (0..rows * c.context_width).map(|i| (i as f64 * 1.3 + salt).sin()).collect(),
        )
    }

    #[test]
    fn zero_adjusters_give_uniform() {
        let c = cfg(4);
        let mut s = store(&c, 0);
        disable_adjusters(&mut s, &c).unwrap();
        let v = allocate_curve(&s, &c, &context(&c, 0.0)).unwrap();
        for w in v.weights() {
            assert!((w - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn saturated_hand_trace() {
        let v = apply_adjustments(&[1.0 / 3.0; 3], &[2.0, 2.0]).unwrap();
        assert!((v.weights()[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((v.weights()[1] - 1.0 / 3.0).abs() < 1e-15);
        assert!(v.weights()[2].abs() < 1e-15);

        let c = cfg(3);
        let mut s = store(&c, 1);
        disable_adjusters(&mut s, &c).unwrap();
        for t in 1..3 {
            s.set_value(&format!("alloc.adj.{t}.l3.b"), Tensor::scalar(40.0).reshaped(&[1, 1]).unwrap())
                .unwrap();
        }
        let tape_v = allocate_curve(&s, &c, &context(&c, 0.1)).unwrap();
        for (a, b) in tape_v.weights().iter().zip(v.weights()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn two_bin_remainder_nonnegative() {
        for b in [0.1, 0.5, 0.9] {
            for a in [0.01, 1.0, 1.99] {
                let v = apply_adjustments(&[b, 1.0 - b], &[a]).unwrap();
                assert!(v.weights()[1] >= 0.0);
            }
        }
    }

    #[test]
    fn naive_curves() {
        assert_eq!(naive_allocation(1).unwrap().weights(), &[1.0]);
        let v = naive_allocation(12).unwrap();
        assert_eq!(v.len(), 12);
        assert!(v.weights().iter().all(|w| (w - 1.0 / 12.0).abs() < 1e-16));
        assert_eq!(v.weights().iter().sum::<f64>(), 1.0);
        assert!(naive_allocation(0).is_err());
    }

    #[test]
    fn progressive_causality() {
        let c = cfg(5);
        let s = store(&c, 2);
        let ctx = context(&c, 0.3);
        let base = allocate_curve(&s, &c, &ctx).unwrap();
        for t in 1..c.horizon {
            let mut p = ctx.clone();
            for r in c.context_row(t) + 1..p.rows() {
                for col in 0..c.context_width {
                    p.set(r, col, 10.0 - p.get(r, col));
                }
            }
            let v = allocate_curve(&s, &c, &p).unwrap();
            assert_eq!(&v.weights()[..t], &base.weights()[..t], "bin {t}");
        }
    }

    #[test]
    fn rejects_non_finite_context() {
        let c = cfg(3);
        let s = store(&c, 3);
        let mut ctx = context(&c, 0.0);
        ctx.set(0, 0, f64::NAN);
        assert!(matches!(allocate_curve(&s, &c, &ctx), Err(Error::NonFinite(_))));
    }

    #[test]
    fn refinement_identity_below_threshold() {
        let parent = AllocationCurve::new(vec![0.2, 0.3, 0.5]).unwrap();
        let r = refine_allocation(&parent, 1440, REFINE_THRESHOLD_S, &BTreeMap::new()).unwrap();
        assert_eq!(r.weights, parent.weights());
    }

    #[test]
    fn refinement_of_uniform_halves() {
        let parent = AllocationCurve::new(vec![0.5, 0.5]).unwrap();
        let mut ladder: BTreeMap<u64, Box<dyn SubAllocator>> = BTreeMap::new();
        ladder.insert(3600, Box::new(UniformSubAllocator { bins: 3 }));
        let r = refine_allocation(&parent, 3600, REFINE_THRESHOLD_S, &ladder).unwrap();
        assert_eq!(r.weights.len(), 6);
        assert!(r.weights.iter().all(|w| (w - 1.0 / 6.0).abs() < 1e-15));
        assert_eq!(r.durations_s, vec![1200; 6]);
    }

    #[test]
    fn refinement_recurses_and_conserves() {
        let parent = AllocationCurve::new(vec![0.1, 0.6, 0.3]).unwrap();
        let mut ladder: BTreeMap<u64, Box<dyn SubAllocator>> = BTreeMap::new();
        ladder.insert(
            14400,
            Box::new(CurveSubAllocator {
                curve: AllocationCurve::new(vec![0.7, 0.2, 0.1]).unwrap(),
            }),
        );
        ladder.insert(4800, Box::new(UniformSubAllocator { bins: 4 }));
        let r = refine_allocation(&parent, 14400, REFINE_THRESHOLD_S, &ladder).unwrap();
        assert_eq!(r.weights.len(), 36);
        assert!(r.durations_s.iter().all(|&d| d == 1200));
        for (i, &w) in parent.weights().iter().enumerate() {
            let s: f64 = r.weights.iter().zip(&r.parents).filter(|(_, &p)| p == i).map(|(w, _)| w).sum();
            assert!((s - w).abs() < 1e-12);
        }
        assert!((r.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn missing_rung_is_an_error() {
        let parent = naive_allocation(2).unwrap();
        let err = refine_allocation(&parent, 3600, REFINE_THRESHOLD_S, &BTreeMap::new()).unwrap_err();
        assert!(matches!(err, Error::MissingSubAllocator(3600)));
    }
}
