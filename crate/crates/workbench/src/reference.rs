//! Published inference results, kept only for side-by-side display in
//! experiment reports. Nothing here feeds training or acceptance gates.

use turing_core::params::{ParamId, PatternId};
use turing_core::pinn::ParamSet;

#[derive(Debug, Clone, Copy)]
pub struct PublishedRow {
    pub id: ParamId,
    pub mean: f64,
    /// Not every published result lists variances.
    pub variance: Option<f64>,
    pub error_pct: Option<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct PublishedResult {
    pub pattern: PatternId,
    pub set: ParamSet,
    pub rows: &'static [PublishedRow],
    pub data_loss: f64,
    pub note: &'static str,
}

const fn row(id: ParamId, mean: f64, variance: Option<f64>, error_pct: Option<f64>) -> PublishedRow {
    PublishedRow { id, mean, variance, error_pct }
}

use ParamId::*;

pub const PUBLISHED: &[PublishedResult] = &[
    PublishedResult {
        pattern: PatternId::P,
        set: ParamSet::A,
        rows: &[row(D1, 0.511, None, None), row(D2, 1.874, None, None)],
        data_loss: 7.3e-6,
        note: "",
    },
    PublishedResult {
        pattern: PatternId::P,
        set: ParamSet::B,
        rows: &[row(Alpha, 0.911, None, Some(1.4)), row(Beta, -0.915, None, Some(0.5))],
        data_loss: 8.4e-6,
        note: "",
    },
    PublishedResult {
        pattern: PatternId::P,
        set: ParamSet::C,
        rows: &[
            row(D1, 0.645, Some(1.3e-4), Some(25.0)),
            row(D2, 0.242, Some(2.0e-3), Some(87.9)),
            row(Alpha, 0.715, Some(4.3e-5), Some(20.4)),
            row(Beta, -0.999, Some(7.0e-7), Some(9.8)),
        ],
        data_loss: 3.7e-6,
        note: "alternative solution; a single run gave D1 0.618, D2 0.188, alpha 0.707, beta -0.997",
    },
    PublishedResult {
        pattern: PatternId::P,
        set: ParamSet::D,
        rows: &[
            row(D1, 0.498, Some(4.5e-4), Some(3.5)),
            row(Alpha, 0.904, Some(9.0e-5), Some(0.6)),
            row(Beta, -0.896, Some(2.5e-4), Some(1.5)),
        ],
        data_loss: 5.9e-6,
        note: "",
    },
    PublishedResult {
        pattern: PatternId::P,
        set: ParamSet::E,
        rows: &[
            row(D1, 0.494, Some(2.7e-4), Some(4.2)),
            row(Alpha, 0.914, Some(1.7e-4), Some(1.6)),
            row(Beta, -0.894, Some(8.8e-5), Some(1.8)),
            row(R1, 4.970, Some(0.96), Some(42.0)),
        ],
        data_loss: 5.7e-6,
        note: "a single run gave D1 0.455, alpha 0.890, beta -0.872, r1 4.152",
    },
    PublishedResult {
        pattern: PatternId::Q,
        set: ParamSet::C,
        rows: &[
            row(D1, 0.410, None, Some(36.7)),
            row(D2, 0.026, None, Some(98.7)),
            row(Alpha, 0.468, None, Some(33.1)),
            row(Beta, -1.000, None, Some(33.3)),
        ],
        data_loss: 1.5e-5,
        note: "",
    },
    PublishedResult {
        pattern: PatternId::Q,
        set: ParamSet::D,
        rows: &[
            row(D1, 0.244, None, Some(18.7)),
            row(Alpha, 0.683, None, Some(2.4)),
            row(Beta, -0.610, None, Some(18.6)),
        ],
        data_loss: 2.1e-5,
        note: "one run found an alternative: D1 0.218, alpha 0.662, beta -0.571, data loss 4.0e-5",
    },
    PublishedResult {
        pattern: PatternId::Q,
        set: ParamSet::E,
        rows: &[
            row(D1, 0.261, None, Some(13.0)),
            row(Alpha, 0.716, None, Some(2.3)),
            row(Beta, -0.645, None, Some(14.0)),
            row(R1, 6.071, None, Some(73.5)),
        ],
        data_loss: 3.2e-5,
        note: "",
    },
    PublishedResult {
        pattern: PatternId::R,
        set: ParamSet::D,
        rows: &[
            row(D1, 0.451, None, Some(12.7)),
            row(Alpha, 0.871, None, Some(3.2)),
            row(Beta, -0.890, None, Some(2.2)),
        ],
        data_loss: 2.0,
        note: "data loss is large because the spotted pattern's concentrations are about two orders of magnitude larger",
    },
];

pub fn published(pattern: PatternId, set: ParamSet) -> Option<&'static PublishedResult> {
    PUBLISHED.iter().find(|r| r.pattern == pattern && r.set == set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use turing_core::params::params_for_pattern;

    #[test]
    fn rows_follow_the_set_layout() {
        for r in PUBLISHED {
            let ids: Vec<ParamId> = r.rows.iter().map(|row| row.id).collect();
            assert_eq!(ids, r.set.trainable(), "{:?}/{:?}", r.pattern, r.set);
        }
        assert!(published(PatternId::R, ParamSet::A).is_none());
    }

    #[test]
    fn listed_errors_match_the_means() {
        // Published errors are rounded; allow for the three-decimal means.
        for r in PUBLISHED {
            let truth = params_for_pattern(r.pattern);
            for row in r.rows {
                if let Some(e) = row.error_pct {
                    let t = truth.get(row.id);
                    let ours = 100.0 * (row.mean - t).abs() / t.abs();
                    assert!((ours - e).abs() < 0.6, "{:?}/{:?} {}: {ours} vs {e}", r.pattern, r.set, row.id);
                }
            }
        }
    }
}
