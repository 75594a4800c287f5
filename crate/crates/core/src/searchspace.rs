//! Decision schema construction from dataset statistics.
//!
//! Patch sizes come from the median extents rounded down to a multiple of the
//! cumulative pooling stride, stepping down by that stride for at most five
//! candidates. Pooling strides are restricted on thin axes so that every stage
//! sees an integral, non-degenerate extent.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{ActivationKind, PoolKind};

/// Largest patch-candidate list per axis.
pub const MAX_PATCH_CANDIDATES: usize = 5;
/// A stage may pool with stride 2 on an axis only if its incoming minimum
/// extent is at least this large.
pub const STRIDE2_MIN_EXTENT: usize = 4;
pub const STAGES: usize = 4;
pub const DILATIONS: [usize; 3] = [1, 2, 3];

/// Searchable encoder→decoder skip edges `(encoder stage, decoder stage)`.
pub const SKIP_EDGES: [(usize, usize); 6] = [(1, 2), (1, 3), (1, 4), (2, 3), (2, 4), (3, 4)];

/// Position of each decision in the schema. The controller steps in this order.
pub mod slot {
    pub const PATCH_HW: usize = 0;
    pub const PATCH_D: usize = 1;
    pub const STRIDE3_D: usize = 2;
    pub const STRIDE3_HW: usize = 3;
    pub const STRIDE4_D: usize = 4;
    pub const STRIDE4_HW: usize = 5;
    pub const POOLING: usize = 6;
    /// Encoder stages 2, 3, 4.
    pub const DILATION: [usize; 3] = [7, 8, 9];
    pub const ACTIVATION: usize = 10;
    /// First of the six skip-edge binaries, in `SKIP_EDGES` order.
    pub const SKIP: usize = 11;
    pub const COUNT: usize = 17;
}

pub const SKIP_CONNECT: &str = "connect";
pub const SKIP_ZERO: &str = "zero";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TaskStats {
    pub median_d: usize,
    pub median_h: usize,
    pub median_w: usize,
    pub min_d: usize,
    pub min_h: usize,
    pub min_w: usize,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl TaskStats {
    /// Stats for a dataset whose every case has the same extent.
    pub fn uniform(d: usize, h: usize, w: usize, in_channels: usize, out_channels: usize) -> Self {
        TaskStats {
            median_d: d,
            median_h: h,
            median_w: w,
            min_d: d,
            min_h: h,
            min_w: w,
            in_channels,
            out_channels,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.median_d,
            self.median_h,
            self.median_w,
            self.min_d,
            self.min_h,
            self.min_w,
            self.in_channels,
            self.out_channels,
        ];
        if all.contains(&0) {
            return Err(Error::Argument(format!("task stats must be positive: {self:?}")));
        }
        if self.min_d > self.median_d || self.min_h > self.median_h || self.min_w > self.median_w {
            return Err(Error::Argument(format!(
                "task stats minimum exceeds median: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Allowed pooling strides per stage for the depth and in-plane axes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StrideRule {
    pub depth: [Vec<usize>; STAGES],
    pub hw: [Vec<usize>; STAGES],
    /// Product of the largest allowed depth stride over all stages.
    pub depth_divisor: usize,
    pub hw_divisor: usize,
}

fn axis_strides(min_extent: usize) -> ([Vec<usize>; STAGES], usize) {
    let mut incoming = min_extent;
    let mut divisor = 1;
    let sets = std::array::from_fn(|stage| {
        let set = if incoming >= STRIDE2_MIN_EXTENT {
            // Stages 1 and 2 are fixed; 3 and 4 are searched.
            if stage < 2 {
                vec![2]
            } else {
                vec![2, 1]
            }
        } else {
            vec![1]
        };
        let top = set[0];
        incoming /= top;
        divisor *= top;
        set
    });
    (sets, divisor)
}

/// Walks stages 1→4 with the worst-case (minimum) extent per axis.
pub fn restrict_strides(stats: &TaskStats) -> StrideRule {
    let (depth, depth_divisor) = axis_strides(stats.min_d);
    let (hw, hw_divisor) = axis_strides(stats.min_h.min(stats.min_w));
    StrideRule {
        depth,
        hw,
        depth_divisor,
        hw_divisor,
    }
}

fn patch_candidates(median: usize, divisor: usize, axis: &str) -> Result<Vec<usize>> {
    if divisor == 0 {
        return Err(Error::Argument("patch divisor must be positive".into()));
    }
    let top = (median / divisor) * divisor;
    let out: Vec<usize> = (0..MAX_PATCH_CANDIDATES)
        .filter_map(|k| top.checked_sub(divisor * k))
        .filter(|&v| v >= divisor)
        .collect();
    if out.is_empty() {
        return Err(Error::DatasetTooSmall(format!(
            "median {axis} extent {median} is below the pooling divisor {divisor}"
        )));
    }
    Ok(out)
}

/// In-plane patch candidates from `max(median_h, median_w)`, largest first.
pub fn patch_hw_candidates(stats: &TaskStats, divisor: usize) -> Result<Vec<usize>> {
    patch_candidates(stats.median_h.max(stats.median_w), divisor, "height/width")
}

/// Depth patch candidates from `median_d`, largest first.
pub fn patch_d_candidates(stats: &TaskStats, divisor: usize) -> Result<Vec<usize>> {
    patch_candidates(stats.median_d, divisor, "depth")
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ChoiceValue {
    Int(usize),
    Label(String),
}

impl ChoiceValue {
    pub fn as_int(&self) -> Option<usize> {
        match self {
            ChoiceValue::Int(v) => Some(*v),
            ChoiceValue::Label(_) => None,
        }
    }

    pub fn as_label(&self) -> Option<&str> {
        match self {
            ChoiceValue::Label(s) => Some(s),
            ChoiceValue::Int(_) => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub name: String,
    pub choices: Vec<ChoiceValue>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edge: Option<[usize; 2]>,
}

impl Decision {
    fn ints(name: &str, values: &[usize], stage: Option<usize>) -> Self {
        Decision {
            name: name.into(),
            choices: values.iter().map(|&v| ChoiceValue::Int(v)).collect(),
            stage,
            edge: None,
        }
    }

    fn labels(name: &str, values: &[&str]) -> Self {
        Decision {
            name: name.into(),
            choices: values.iter().map(|v| ChoiceValue::Label((*v).into())).collect(),
            stage: None,
            edge: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionSchema {
    pub decisions: Vec<Decision>,
    pub stats: TaskStats,
    pub stride_rule: StrideRule,
}

/// One selected index per schema decision.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ArchChoice {
    pub indices: Vec<usize>,
}

impl ArchChoice {
    pub fn new(indices: Vec<usize>) -> Self {
        ArchChoice { indices }
    }
}

/// Builds the 17-decision schema in the order given by [`slot`].
pub fn build_schema(stats: &TaskStats) -> Result<DecisionSchema> {
    stats.validate()?;
    let rule = restrict_strides(stats);
    let hw = patch_hw_candidates(stats, rule.hw_divisor)?;
    let d = patch_d_candidates(stats, rule.depth_divisor)?;

    let mut decisions = vec![
        Decision::ints("patch_hw", &hw, None),
        Decision::ints("patch_d", &d, None),
        Decision::ints("stride3_d", &rule.depth[2], Some(3)),
        Decision::ints("stride3_hw", &rule.hw[2], Some(3)),
        Decision::ints("stride4_d", &rule.depth[3], Some(4)),
        Decision::ints("stride4_hw", &rule.hw[3], Some(4)),
        Decision::labels("pooling", &[PoolKind::Max.name(), PoolKind::Avg.name()]),
    ];
    for stage in 2..=4 {
        decisions.push(Decision::ints(&format!("dilation{stage}"), &DILATIONS, Some(stage)));
    }
    let acts: Vec<&str> = ActivationKind::ALL.iter().map(|k| k.name()).collect();
    decisions.push(Decision::labels("activation", &acts));
    for (from, to) in SKIP_EDGES {
        let mut dec = Decision::labels(&format!("skip_{from}_{to}"), &[SKIP_CONNECT, SKIP_ZERO]);
        dec.edge = Some([from, to]);
        decisions.push(dec);
    }
    debug_assert_eq!(decisions.len(), slot::COUNT);
    Ok(DecisionSchema {
        decisions,
        stats: *stats,
        stride_rule: rule,
    })
}

impl DecisionSchema {
    pub fn len(&self) -> usize {
        self.decisions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.decisions.is_empty()
    }

    pub fn choice_counts(&self) -> Vec<usize> {
        self.decisions.iter().map(|d| d.choices.len()).collect()
    }

    /// Number of distinct architectures (product of list sizes).
    pub fn architecture_count(&self) -> u128 {
        self.decisions.iter().map(|d| d.choices.len() as u128).product()
    }

    pub fn validate_choice(&self, choice: &ArchChoice) -> Result<()> {
        if choice.indices.len() != self.decisions.len() {
            return Err(Error::Argument(format!(
                "choice has {} indices for {} decisions",
                choice.indices.len(),
                self.decisions.len()
            )));
        }
        for (d, &i) in self.decisions.iter().zip(&choice.indices) {
            if i >= d.choices.len() {
                return Err(Error::Validation {
                    decision: d.name.clone(),
                    index: i,
                    len: d.choices.len(),
                });
            }
        }
        Ok(())
    }

    /// Largest patches, stride 2 wherever allowed, max pooling, dilation 1,
    /// the first activation, and every skip edge connected.
    pub fn max_architecture(&self) -> ArchChoice {
        let indices = self
            .decisions
            .iter()
            .enumerate()
            .map(|(i, d)| match i {
                slot::PATCH_HW | slot::PATCH_D => argmax_int(d),
                slot::STRIDE3_D | slot::STRIDE3_HW | slot::STRIDE4_D | slot::STRIDE4_HW => argmax_int(d),
                slot::POOLING => position(d, PoolKind::Max.name()),
                i if slot::DILATION.contains(&i) => d
                    .choices
                    .iter()
                    .position(|c| c.as_int() == Some(1))
                    .unwrap_or(0),
                i if i >= slot::SKIP => position(d, SKIP_CONNECT),
                _ => 0,
            })
            .collect();
        ArchChoice { indices }
    }

    pub fn value(&self, slot: usize, choice: &ArchChoice) -> &ChoiceValue {
        &self.decisions[slot].choices[choice.indices[slot]]
    }

    pub fn int(&self, slot: usize, choice: &ArchChoice) -> Result<usize> {
        self.value(slot, choice).as_int().ok_or_else(|| {
            Error::Argument(format!("decision `{}` is not numeric", self.decisions[slot].name))
        })
    }

    pub fn label(&self, slot: usize, choice: &ArchChoice) -> Result<&str> {
        self.value(slot, choice).as_label().ok_or_else(|| {
            Error::Argument(format!("decision `{}` is not a label", self.decisions[slot].name))
        })
    }
}

fn argmax_int(d: &Decision) -> usize {
    let mut best = 0;
    for (i, c) in d.choices.iter().enumerate() {
        if c.as_int() > d.choices[best].as_int() {
            best = i;
        }
    }
    best
}

fn position(d: &Decision, label: &str) -> usize {
    d.choices
        .iter()
        .position(|c| c.as_label() == Some(label))
        .unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn stats(md: usize, mh: usize, mind: usize, minh: usize) -> TaskStats {
        TaskStats {
            median_d: md,
            median_h: mh,
            median_w: mh,
            min_d: mind,
            min_h: minh,
            min_w: minh,
            in_channels: 1,
            out_channels: 1,
        }
    }

    #[test]
    fn heart_in_plane_candidates() {
        let s = stats(110, 320, 90, 320);
        assert_eq!(patch_hw_candidates(&s, 16).unwrap(), vec![320, 304, 288, 272, 256]);
    }

    #[test]
    fn brain_in_plane_candidates() {
        let s = stats(155, 240, 155, 240);
        assert_eq!(patch_hw_candidates(&s, 16).unwrap(), vec![240, 224, 208, 192, 176]);
    }

    #[test]
    fn tiny_in_plane_keeps_one() {
        assert_eq!(patch_hw_candidates(&stats(16, 16, 16, 16), 16).unwrap(), vec![16]);
    }

    #[test]
    fn depth_candidates() {
        assert_eq!(patch_d_candidates(&stats(112, 16, 16, 16), 16).unwrap(), vec![112, 96, 80, 64, 48]);
        assert_eq!(patch_d_candidates(&stats(11, 16, 11, 16), 4).unwrap(), vec![8, 4]);
        assert_eq!(patch_d_candidates(&stats(4, 16, 4, 16), 4).unwrap(), vec![4]);
    }

    #[test]
    fn too_small_dataset_errors() {
        assert!(matches!(
            patch_d_candidates(&stats(3, 16, 3, 16), 4),
            Err(Error::DatasetTooSmall(_))
        ));
    }

    #[test]
    fn stride_rules() {
        let r = restrict_strides(&stats(155, 240, 155, 240));
        assert!(r.depth.iter().chain(&r.hw).all(|s| s[0] == 2));
        assert_eq!((r.depth_divisor, r.hw_divisor), (16, 16));

        let r = restrict_strides(&stats(20, 320, 11, 256));
        assert_eq!(r.depth, [vec![2], vec![2], vec![1], vec![1]]);
        assert_eq!(r.depth_divisor, 4);

        let r = restrict_strides(&stats(3, 3, 3, 3));
        assert!(r.depth.iter().all(|s| s == &vec![1]));
        assert_eq!(r.depth_divisor, 1);
    }

    #[test]
    fn heart_schema_size() {
        let schema = build_schema(&stats(110, 320, 90, 320)).unwrap();
        assert_eq!(schema.len(), 17);
        assert_eq!(schema.architecture_count(), 5 * 5 * 2 * 2 * 2 * 2 * 2 * 81 * 64);
    }

    #[test]
    fn prostate_schema_has_singleton_depth_strides() {
        let schema = build_schema(&stats(20, 320, 11, 256)).unwrap();
        assert_eq!(schema.decisions[slot::STRIDE3_D].choices, vec![ChoiceValue::Int(1)]);
        assert_eq!(schema.decisions[slot::STRIDE4_D].choices, vec![ChoiceValue::Int(1)]);
    }

    #[test]
    fn toy_schema_structure() {
        let schema = build_schema(&TaskStats::uniform(16, 16, 16, 1, 1)).unwrap();
        assert_eq!(schema.len(), 17);
        assert_eq!(schema.decisions[slot::PATCH_HW].choices.len(), 2);
    }

    #[test]
    fn max_architecture_on_heart() {
        let schema = build_schema(&stats(110, 320, 90, 320)).unwrap();
        let max = schema.max_architecture();
        schema.validate_choice(&max).unwrap();
        assert_eq!(schema.int(slot::PATCH_HW, &max).unwrap(), 320);
        assert_eq!(schema.int(slot::PATCH_D, &max).unwrap(), 96);
        for s in [slot::STRIDE3_D, slot::STRIDE3_HW, slot::STRIDE4_D, slot::STRIDE4_HW] {
            assert_eq!(schema.int(s, &max).unwrap(), 2);
        }
        for d in slot::DILATION {
            assert_eq!(schema.int(d, &max).unwrap(), 1);
        }
        assert_eq!(schema.label(slot::POOLING, &max).unwrap(), "max");
        for k in 0..6 {
            assert_eq!(schema.label(slot::SKIP + k, &max).unwrap(), SKIP_CONNECT);
        }
    }

    #[test]
    fn out_of_range_names_decision() {
        let schema = build_schema(&stats(110, 320, 90, 320)).unwrap();
        let mut c = schema.max_architecture();
        c.indices[0] = 7;
        match schema.validate_choice(&c) {
            Err(Error::Validation { decision, .. }) => assert_eq!(decision, "patch_hw"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn json_shape() {
        let schema = build_schema(&stats(110, 320, 90, 320)).unwrap();
        let v = serde_json::to_value(&schema).unwrap();
        assert_eq!(v["decisions"][0]["name"], "patch_hw");
        assert_eq!(v["decisions"][0]["choices"][0], 320);
        assert_eq!(v["decisions"][6]["choices"][1], "avg");
        let back: DecisionSchema = serde_json::from_value(v).unwrap();
        assert_eq!(back, schema);
        let c = serde_json::to_string(&schema.max_architecture()).unwrap();
        assert!(c.starts_with("{\"indices\":["));
    }

    fn arb_stats() -> impl Strategy<Value = TaskStats> {
        (4usize..400, 4usize..400, 1usize..=100, 1usize..=100).prop_map(|(md, mh, fd, fh)| {
            let mind = (md * fd / 100).max(1);
            let minh = (mh * fh / 100).max(1);
            stats(md, mh, mind, minh)
        })
    }

    proptest! {
        #[test]
        fn candidates_are_divisible_and_decreasing(s in arb_stats()) {
            let r = restrict_strides(&s);
            for (list, div) in [
                (patch_hw_candidates(&s, r.hw_divisor), r.hw_divisor),
                (patch_d_candidates(&s, r.depth_divisor), r.depth_divisor),
            ] {
                if let Ok(list) = list {
                    prop_assert!(!list.is_empty() && list.len() <= MAX_PATCH_CANDIDATES);
                    prop_assert!(list.iter().all(|&v| v > 0 && v % div == 0));
                    prop_assert!(list.windows(2).all(|w| w[0] > w[1]));
                }
            }
        }

        #[test]
        fn restriction_is_monotone(s in arb_stats(), shrink in 0usize..100) {
            let mut t = s;
            t.min_d = (s.min_d * shrink / 100).max(1);
            t.min_h = (s.min_h * shrink / 100).max(1);
            t.min_w = t.min_h;
            let (a, b) = (restrict_strides(&s), restrict_strides(&t));
            for stage in 0..STAGES {
                prop_assert!(b.depth[stage].iter().all(|x| a.depth[stage].contains(x) || *x == 1));
                prop_assert!(b.depth[stage][0] <= a.depth[stage][0]);
                prop_assert!(b.hw[stage][0] <= a.hw[stage][0]);
            }
        }

        #[test]
        fn schema_is_deterministic(s in arb_stats()) {
            if let (Ok(a), Ok(b)) = (build_schema(&s), build_schema(&s)) {
                prop_assert_eq!(serde_json::to_vec(&a).unwrap(), serde_json::to_vec(&b).unwrap());
                let max = a.max_architecture();
                prop_assert!(a.validate_choice(&max).is_ok());
            }
        }
    }
}
