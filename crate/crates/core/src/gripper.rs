//! Gripper width from the pixel distance between the two jaw markers.
//!
//! `W = clamp((d - d_min) / (d_max - d_min), 0, 1) * G_max`. A frame where
//! only one marker was detected is completed by mirroring that marker across
//! the calibrated vertical axis `u = axis_u_px`. Frames without markers are
//! filled in afterwards by [`impute_series`].

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GripperError {
    #[error("marker id {0} detected more than once in one frame")]
    DuplicateMarker(i64),
    #[error("invalid gripper calibration: {0}")]
    Calibration(String),
    #[error("no frame has a width measurement; nothing to impute from")]
    AllMissing,
}

/// Detected marker center in image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarkerDetection {
    pub marker_id: i64,
    /// `(u, v)` pixels.
    pub center_px: (f64, f64),
}

impl MarkerDetection {
    pub fn new(marker_id: i64, u: f64, v: f64) -> Self {
        Self {
            marker_id,
            center_px: (u, v),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GripperCalib {
    /// Marker distance at the widest opening.
    pub d_max_px: f64,
    /// Marker distance when closed.
    pub d_min_px: f64,
    /// Physical opening at `d_max_px`, millimeters.
    pub g_max_mm: f64,
    /// Mirror axis for single-marker frames.
    pub axis_u_px: f64,
    pub left_id: i64,
    pub right_id: i64,
}

impl GripperCalib {
    pub fn validate(&self) -> Result<(), GripperError> {
        let finite = [self.d_max_px, self.d_min_px, self.g_max_mm, self.axis_u_px]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(GripperError::Calibration("non-finite value".into()));
        }
        if !(self.d_max_px > self.d_min_px && self.d_min_px >= 0.0) {
            return Err(GripperError::Calibration(format!(
                "need d_max_px > d_min_px >= 0, got d_max_px={} d_min_px={}",
                self.d_max_px, self.d_min_px
            )));
        }
        if !(self.g_max_mm > 0.0) {
            return Err(GripperError::Calibration(format!(
                "g_max_mm must be positive, got {}",
                self.g_max_mm
            )));
        }
        if self.left_id == self.right_id {
            return Err(GripperError::Calibration(
                "left and right marker ids must differ".into(),
            ));
        }
        Ok(())
    }

    /// The linear distance-to-width law, clamped to the jaw range.
    pub fn width_from_distance(&self, d_px: f64) -> f64 {
        let s = (d_px - self.d_min_px) / (self.d_max_px - self.d_min_px);
        s.clamp(0.0, 1.0) * self.g_max_mm
    }

    /// Pixel distance that maps to `width_mm`; the inverse of
    /// [`width_from_distance`](Self::width_from_distance) on `[0, g_max]`.
    pub fn distance_for_width(&self, width_mm: f64) -> f64 {
        self.d_min_px + (width_mm / self.g_max_mm) * (self.d_max_px - self.d_min_px)
    }

    pub fn mirror_u(&self, u: f64) -> f64 {
        2.0 * self.axis_u_px - u
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WidthProvenance {
    TwoMarkers,
    Mirrored,
    Imputed,
}

/// Width measured from one frame, before imputation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FrameWidth {
    Measured {
        width_mm: f64,
        provenance: WidthProvenance,
    },
    Missing,
}

impl FrameWidth {
    pub fn width_mm(&self) -> Option<f64> {
        match self {
            Self::Measured { width_mm, .. } => Some(*width_mm),
            Self::Missing => None,
        }
    }
}

/// Width for a single camera frame. Markers other than the calibrated left
/// and right ids are ignored.
pub fn width_from_frame(
    detections: &[MarkerDetection],
    calib: &GripperCalib,
) -> Result<FrameWidth, GripperError> {
    for (i, d) in detections.iter().enumerate() {
        if detections[..i].iter().any(|o| o.marker_id == d.marker_id) {
            return Err(GripperError::DuplicateMarker(d.marker_id));
        }
    }
    let find = |id| detections.iter().find(|d| d.marker_id == id);
    let (pair, provenance) = match (find(calib.left_id), find(calib.right_id)) {
        (Some(l), Some(r)) => ((l.center_px, r.center_px), WidthProvenance::TwoMarkers),
        (Some(m), None) | (None, Some(m)) => {
            let (u, v) = m.center_px;
            ((m.center_px, (calib.mirror_u(u), v)), WidthProvenance::Mirrored)
        }
        (None, None) => return Ok(FrameWidth::Missing),
    };
    let ((u0, v0), (u1, v1)) = pair;
    let d = (u1 - u0).hypot(v1 - v0);
    Ok(FrameWidth::Measured {
        width_mm: calib.width_from_distance(d),
        provenance,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ImputeMethod {
    /// Linear between observed neighbors; edges hold the nearest value.
    #[default]
    Linear,
    /// Every gap holds the previous observed value (the next one for a
    /// leading gap).
    Hold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WidthSeries {
    pub widths_mm: Vec<f64>,
    pub provenance: Vec<WidthProvenance>,
}

impl WidthSeries {
    pub fn len(&self) -> usize {
        self.widths_mm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.widths_mm.is_empty()
    }
}

/// Fills missing frames so that every frame carries a width.
pub fn impute_series(raw: &[FrameWidth], method: ImputeMethod) -> Result<WidthSeries, GripperError> {
    let observed: Vec<usize> = raw
        .iter()
        .enumerate()
        .filter_map(|(i, w)| w.width_mm().map(|_| i))
        .collect();
    let (&first, &last) = match (observed.first(), observed.last()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err(GripperError::AllMissing),
    };
    let value = |i: usize| raw[i].width_mm().expect("observed index");

    let mut widths = Vec::with_capacity(raw.len());
    let mut provenance = Vec::with_capacity(raw.len());
    // Index into `observed` of the last observation at or before `i`.
    let mut prev = 0usize;
    for (i, w) in raw.iter().enumerate() {
        if let FrameWidth::Measured {
            width_mm,
            provenance: p,
        } = w
        {
            widths.push(*width_mm);
            provenance.push(*p);
            if observed[prev] < i {
                prev += 1;
            }
            continue;
        }
        let filled = if i < first {
            value(first)
        } else if i > last {
            value(last)
        } else {
            let lo = observed[prev];
            let hi = observed[prev + 1];
            match method {
                ImputeMethod::Hold => value(lo),
                ImputeMethod::Linear => {
                    let s = (i - lo) as f64 / (hi - lo) as f64;
                    value(lo) + (value(hi) - value(lo)) * s
                }
            }
        };
        widths.push(filled);
        provenance.push(WidthProvenance::Imputed);
    }
    Ok(WidthSeries {
        widths_mm: widths,
        provenance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn calib() -> GripperCalib {
        GripperCalib {
            d_max_px: 500.0,
            d_min_px: 80.0,
            g_max_mm: 86.0,
            axis_u_px: 320.0,
            left_id: 0,
            right_id: 1,
        }
    }

    fn two(c: &GripperCalib, d: f64) -> Vec<MarkerDetection> {
        vec![
            MarkerDetection::new(c.left_id, c.axis_u_px - d / 2.0, 300.0),
            MarkerDetection::new(c.right_id, c.axis_u_px + d / 2.0, 300.0),
        ]
    }

    fn measured(w: f64) -> FrameWidth {
        FrameWidth::Measured {
            width_mm: w,
            provenance: WidthProvenance::TwoMarkers,
        }
    }

    #[test]
    fn endpoints_and_midpoint() {
        let c = calib();
        let w = |d| width_from_frame(&two(&c, d), &c).unwrap().width_mm().unwrap();
        assert_eq!(w(c.d_max_px), c.g_max_mm);
        assert_eq!(w(c.d_min_px), 0.0);
        assert_eq!(w(0.5 * (c.d_max_px + c.d_min_px)), c.g_max_mm / 2.0);
        assert_eq!(w(c.d_max_px + 100.0), c.g_max_mm);
        assert_eq!(w(10.0), 0.0);
    }

    #[test]
    fn single_marker_is_mirrored() {
        let c = GripperCalib {
            d_min_px: 0.0,
            d_max_px: 160.0,
            g_max_mm: 160.0,
            ..calib()
        };
        let det = [MarkerDetection::new(c.left_id, c.axis_u_px - 40.0, 300.0)];
        assert_eq!(c.mirror_u(c.axis_u_px - 40.0), 360.0);
        match width_from_frame(&det, &c).unwrap() {
            FrameWidth::Measured {
                width_mm,
                provenance,
            } => {
                // d = 80 px maps to 80 mm under this unit calibration.
                assert_eq!(width_mm, 80.0);
                assert_eq!(provenance, WidthProvenance::Mirrored);
            }
            FrameWidth::Missing => panic!("expected a width"),
        }
    }

    #[test]
    fn missing_and_duplicates() {
        let c = calib();
        assert_eq!(width_from_frame(&[], &c).unwrap(), FrameWidth::Missing);
        let other = [MarkerDetection::new(7, 10.0, 10.0)];
        assert_eq!(width_from_frame(&other, &c).unwrap(), FrameWidth::Missing);
        let dup = [
            MarkerDetection::new(0, 10.0, 10.0),
            MarkerDetection::new(0, 20.0, 10.0),
        ];
        assert_eq!(width_from_frame(&dup, &c), Err(GripperError::DuplicateMarker(0)));
    }

    #[test]
    fn calibration_validation() {
        assert!(calib().validate().is_ok());
        let bad = GripperCalib {
            d_min_px: 600.0,
            ..calib()
        };
        assert!(bad.validate().is_err());
        let bad = GripperCalib {
            g_max_mm: 0.0,
            ..calib()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn impute_examples() {
        let s = impute_series(&[measured(10.0), FrameWidth::Missing, measured(20.0)], ImputeMethod::Linear)
            .unwrap();
        assert_eq!(s.widths_mm, vec![10.0, 15.0, 20.0]);
        assert_eq!(s.provenance[1], WidthProvenance::Imputed);

        let raw = [measured(1.0), measured(2.0)];
        assert_eq!(impute_series(&raw, ImputeMethod::Linear).unwrap().widths_mm, vec![1.0, 2.0]);

        let raw = [
            FrameWidth::Missing,
            FrameWidth::Missing,
            measured(30.0),
            FrameWidth::Missing,
        ];
        let s = impute_series(&raw, ImputeMethod::Linear).unwrap();
        assert_eq!(s.widths_mm, vec![30.0; 4]);
        assert_eq!(s.provenance[2], WidthProvenance::TwoMarkers);

        let raw = [measured(10.0), FrameWidth::Missing, FrameWidth::Missing, measured(40.0)];
        let s = impute_series(&raw, ImputeMethod::Hold).unwrap();
        assert_eq!(s.widths_mm, vec![10.0, 10.0, 10.0, 40.0]);

        assert_eq!(
            impute_series(&[FrameWidth::Missing; 3], ImputeMethod::Linear),
            Err(GripperError::AllMissing)
        );
    }

    proptest! {
        #[test]
        fn width_is_monotone_and_in_range(a in 0.0..800.0f64, b in 0.0..800.0f64) {
            let c = calib();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let (wl, wh) = (c.width_from_distance(lo), c.width_from_distance(hi));
            prop_assert!(wl <= wh);
            prop_assert!((0.0..=c.g_max_mm).contains(&wl));
            prop_assert!((0.0..=c.g_max_mm).contains(&wh));
        }

        #[test]
        fn mirror_symmetry(offset in 1.0..300.0f64, v in 0.0..600.0f64) {
            let c = calib();
            let left = MarkerDetection::new(c.left_id, c.axis_u_px - offset, v);
            let right = MarkerDetection::new(c.right_id, c.axis_u_px + offset, v);
            let wl = width_from_frame(&[left], &c).unwrap().width_mm().unwrap();
            let wr = width_from_frame(&[right], &c).unwrap().width_mm().unwrap();
            let both = width_from_frame(&[left, right], &c).unwrap().width_mm().unwrap();
            prop_assert!((wl - wr).abs() <= 1e-9);
            prop_assert!((wl - both).abs() <= 1e-9);
        }

        #[test]
        fn imputation_keeps_observations(raw in prop::collection::vec(prop::option::of(0.0..86.0f64), 1..60)) {
            prop_assume!(raw.iter().any(|w| w.is_some()));
            let frames: Vec<_> = raw.iter().map(|w| w.map_or(FrameWidth::Missing, measured)).collect();
            let s = impute_series(&frames, ImputeMethod::Linear).unwrap();
            prop_assert_eq!(s.len(), raw.len());
            for (i, w) in raw.iter().enumerate() {
                if let Some(w) = w {
                    prop_assert_eq!(s.widths_mm[i], *w);
                } else {
                    prop_assert_eq!(s.provenance[i], WidthProvenance::Imputed);
                    prop_assert!((0.0..=86.0).contains(&s.widths_mm[i]));
                }
            }
        }
    }
}
