use serde::{Deserialize, Serialize};

use crate::dataset::{BBox, ObjectInstance};
use crate::error::{Error, Result};

/// Size and shape limits for a novel/candidate box pair. Percent limits are
/// multiplicative and inclusive: `max <= (1 + pct / 100) * min`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PairConstraints {
    /// Minimum area of either box, in square pixels.
    pub area_min: f64,
    pub area_delta_max_pct: f64,
    pub aspect_min: f64,
    pub aspect_max: f64,
    pub aspect_delta_max_pct: f64,
}

impl Default for PairConstraints {
    fn default() -> Self {
        PairConstraints {
            area_min: 1000.0,
            area_delta_max_pct: 200.0,
            aspect_min: 0.05,
            aspect_max: 5.0,
            aspect_delta_max_pct: 30.0,
        }
    }
}

impl PairConstraints {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.area_min,
            self.area_delta_max_pct,
            self.aspect_min,
            self.aspect_max,
            self.aspect_delta_max_pct,
        ];
        if all.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Config(format!("pair constraints must be positive: {self:?}")));
        }
        if self.aspect_min >= self.aspect_max {
            return Err(Error::Config("aspect_min must be below aspect_max".into()));
        }
        Ok(())
    }
}

fn within_ratio(a: f64, b: f64, pct: f64) -> bool {
    a.max(b) <= (1.0 + pct / 100.0) * a.min(b)
}

pub fn check_geometry(novel: &BBox, candidate: &BBox, c: &PairConstraints) -> bool {
    let (a_n, a_c) = (novel.area(), candidate.area());
    let (r_n, r_c) = (novel.aspect_ratio(), candidate.aspect_ratio());
    let aspect_ok = |r: f64| (c.aspect_min..=c.aspect_max).contains(&r);
    a_n >= c.area_min
        && a_c >= c.area_min
        && within_ratio(a_n, a_c, c.area_delta_max_pct)
        && aspect_ok(r_n)
        && aspect_ok(r_c)
        && within_ratio(r_n, r_c, c.aspect_delta_max_pct)
}

/// True when the instance's box strictly contains any other box in its image.
pub fn exclude_containing(instance: &ObjectInstance, all_instances: &[ObjectInstance]) -> bool {
    all_instances
        .iter()
        .filter(|o| o.instance_id != instance.instance_id)
        .any(|o| instance.bbox.strictly_contains(&o.bbox))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn boxed(w: f64, h: f64) -> BBox {
        BBox::new(0.0, 0.0, w, h).unwrap()
    }

    fn inst(id: u64, x: f64, y: f64, w: f64, h: f64) -> ObjectInstance {
        ObjectInstance {
            instance_id: id,
            class: "cup".into(),
            bbox: BBox::new(x, y, w, h).unwrap(),
        }
    }

    fn loose_aspect() -> PairConstraints {
        PairConstraints {
            aspect_delta_max_pct: 1000.0,
            ..Default::default()
        }
    }

    #[test]
    fn area_ratio_boundary_inclusive() {
        // 1000 vs 3000 sits exactly on the 200% limit
        assert!(check_geometry(&boxed(40.0, 25.0), &boxed(50.0, 60.0), &loose_aspect()));
        assert!(!check_geometry(&boxed(40.0, 25.0), &boxed(50.0, 62.0), &loose_aspect()));
        assert!(check_geometry(&boxed(50.0, 60.0), &boxed(40.0, 25.0), &loose_aspect()));
    }

    #[test]
    fn aspect_ratio_boundary_inclusive() {
        // ARs 1.0 and 1.3
        assert!(check_geometry(&boxed(40.0, 40.0), &boxed(52.0, 40.0), &PairConstraints::default()));
        assert!(!check_geometry(&boxed(40.0, 40.0), &boxed(53.0, 40.0), &PairConstraints::default()));
    }

    #[test]
    fn identical_boxes_pass() {
        let b = boxed(50.0, 40.0);
        assert!(check_geometry(&b, &b, &PairConstraints::default()));
    }

    #[test]
    fn too_small_rejected() {
        let b = boxed(30.0, 30.0);
        assert!(!check_geometry(&b, &b, &PairConstraints::default()));
    }

    #[test]
    fn extreme_aspect_rejected() {
        let b = boxed(600.0, 10.0);
        assert!(!check_geometry(&b, &b, &PairConstraints::default()));
    }

    #[test]
    fn containment_exclusion() {
        let outer = inst(1, 0.0, 0.0, 100.0, 100.0);
        let inner = inst(2, 10.0, 10.0, 20.0, 20.0);
        let all = vec![outer.clone(), inner.clone()];
        assert!(exclude_containing(&outer, &all));
        assert!(!exclude_containing(&inner, &all));

        let a = inst(1, 0.0, 0.0, 10.0, 10.0);
        let b = inst(2, 50.0, 50.0, 10.0, 10.0);
        assert!(!exclude_containing(&a, &[a.clone(), b]));

        let dup = inst(3, 0.0, 0.0, 10.0, 10.0);
        assert!(!exclude_containing(&a, &[a.clone(), dup]));
    }

    #[test]
    fn validate_rejects_inverted_aspects() {
        let c = PairConstraints {
            aspect_min: 5.0,
            aspect_max: 1.0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        assert!(PairConstraints::default().validate().is_ok());
    }
}
