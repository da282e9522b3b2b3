//! The fix language: `functional` or `kind(part, axis, value)`.

use std::fmt;
use std::str::FromStr;

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{centroid, rotation_about, Affine, PointCloud, Vec3};
use crate::seg::{part_of_root, HardLabels};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FixKind {
    Scale,
    Translate,
    Rotate,
}

impl FixKind {
    pub fn keyword(self) -> &'static str {
        match self {
            FixKind::Scale => "scale",
            FixKind::Translate => "translate",
            FixKind::Rotate => "rotate",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Axis {
    PosX,
    NegX,
    PosY,
    NegY,
    PosZ,
    NegZ,
}

impl Axis {
    pub const ALL: [Axis; 6] = [Axis::PosX, Axis::NegX, Axis::PosY, Axis::NegY, Axis::PosZ, Axis::NegZ];

    pub fn unit(self) -> Vec3 {
        match self {
            Axis::PosX => Vec3::x(),
            Axis::NegX => -Vec3::x(),
            Axis::PosY => Vec3::y(),
            Axis::NegY => -Vec3::y(),
            Axis::PosZ => Vec3::z(),
            Axis::NegZ => -Vec3::z(),
        }
    }

    /// Coordinate index, ignoring the sign.
    pub fn dim(self) -> usize {
        match self {
            Axis::PosX | Axis::NegX => 0,
            Axis::PosY | Axis::NegY => 1,
            Axis::PosZ | Axis::NegZ => 2,
        }
    }

    pub fn flipped(self) -> Axis {
        match self {
            Axis::PosX => Axis::NegX,
            Axis::NegX => Axis::PosX,
            Axis::PosY => Axis::NegY,
            Axis::NegY => Axis::PosY,
            Axis::PosZ => Axis::NegZ,
            Axis::NegZ => Axis::PosZ,
        }
    }

    fn token(self) -> &'static str {
        match self {
            Axis::PosX => "+x",
            Axis::NegX => "-x",
            Axis::PosY => "+y",
            Axis::NegY => "-y",
            Axis::PosZ => "+z",
            Axis::NegZ => "-z",
        }
    }
}

/// A parametrised edit of one part.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Fix {
    pub kind: FixKind,
    pub part: usize,
    pub axis: Axis,
    /// Factor for scale, metres for translate, degrees for rotate.
    pub value: f64,
}

impl Fix {
    /// Checked constructor enforcing the value range of each kind.
    pub fn new(kind: FixKind, part: usize, axis: Axis, value: f64) -> Result<Self> {
        if !value_in_range(kind, value) {
            return Err(Error::Domain(format!("{} value {value} out of range", kind.keyword())));
        }
        Ok(Self { kind, part, axis, value })
    }

    /// The edit that undoes this one (same pivot).
    pub fn inverse(&self) -> Fix {
        match self.kind {
            FixKind::Scale => Fix {
                value: 1.0 / self.value,
                ..*self
            },
            FixKind::Translate | FixKind::Rotate => Fix {
                axis: self.axis.flipped(),
                ..*self
            },
        }
    }

    /// The affine map applied to the part's points.
    pub fn affine(&self, pivot: Vec3) -> Affine {
        let u = self.axis.unit();
        match self.kind {
            FixKind::Rotate => Affine::about_pivot(rotation_about(u, self.value.to_radians()), pivot, Vec3::zeros()),
            FixKind::Translate => Affine::about_pivot(Matrix3::identity(), pivot, self.value * u),
            FixKind::Scale => {
                let mut l = Matrix3::identity();
                l[(self.axis.dim(), self.axis.dim())] = self.value;
                Affine::about_pivot(l, pivot, Vec3::zeros())
            }
        }
    }
}

fn value_in_range(kind: FixKind, v: f64) -> bool {
    v.is_finite()
        && match kind {
            FixKind::Scale | FixKind::Translate => v > 0.0,
            FixKind::Rotate => v > 0.0 && v <= 180.0,
        }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FixChoice {
    Functional,
    Fix(Fix),
}

impl FixChoice {
    pub fn part(&self) -> Option<usize> {
        match self {
            FixChoice::Functional => None,
            FixChoice::Fix(f) => Some(f.part),
        }
    }

    pub fn kind(&self) -> Option<FixKind> {
        match self {
            FixChoice::Functional => None,
            FixChoice::Fix(f) => Some(f.kind),
        }
    }
}

impl fmt::Display for FixChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FixChoice::Functional => f.write_str("functional"),
            FixChoice::Fix(x) => write!(f, "{}({},{},{})", x.kind.keyword(), x.part, x.axis.token(), x.value),
        }
    }
}

impl FromStr for FixChoice {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        parse_choice(s)
    }
}

impl Serialize for FixChoice {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for FixChoice {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        parse_choice(&s).map_err(serde::de::Error::custom)
    }
}

/// Five candidate edits; `answer` is known for generated scenarios.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChoiceSet {
    pub choices: Vec<FixChoice>,
    pub answer: Option<usize>,
}

struct Cursor<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn token_at(&self, at: usize) -> String {
        if at >= self.src.len() {
            return "<end of input>".into();
        }
        let end = (at..self.src.len())
            .find(|&k| {
                let c = self.src[k];
                c.is_ascii_whitespace() || (k > at && matches!(c, b'(' | b')' | b','))
            })
            .unwrap_or(self.src.len());
        String::from_utf8_lossy(&self.src[at..end.max(at + 1)]).into_owned()
    }

    fn error(&self, at: usize, message: &str) -> Error {
        Error::Parse {
            offset: at,
            token: self.token_at(at),
            message: message.into(),
        }
    }

    fn take_while(&mut self, f: impl Fn(u8) -> bool) -> (usize, &'a [u8]) {
        let start = self.pos;
        while self.pos < self.src.len() && f(self.src[self.pos]) {
            self.pos += 1;
        }
        (start, &self.src[start..self.pos])
    }

    fn expect(&mut self, c: u8, what: &str) -> Result<()> {
        self.skip_ws();
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.error(self.pos, &format!("expected {what}")))
        }
    }
}

/// Parse one choice; errors carry the byte offset and offending token.
pub fn parse_choice(input: &str) -> Result<FixChoice> {
    let mut c = Cursor {
        src: input.as_bytes(),
        pos: 0,
    };
    c.skip_ws();
    let (start, word) = c.take_while(|b| b.is_ascii_alphabetic() || b == b'_');
    if word.is_empty() {
        return Err(c.error(start, "expected fix type"));
    }
    let word = word.to_ascii_lowercase();
    let kind = match word.as_slice() {
        b"functional" => {
            c.skip_ws();
            if c.pos != c.src.len() {
                return Err(c.error(c.pos, "unexpected trailing input"));
            }
            return Ok(FixChoice::Functional);
        }
        b"scale" => FixKind::Scale,
        b"translate" => FixKind::Translate,
        b"rotate" => FixKind::Rotate,
        _ => return Err(c.error(start, "unknown fix type")),
    };
    c.expect(b'(', "`(`")?;

    c.skip_ws();
    let (at, digits) = c.take_while(|b| b.is_ascii_digit());
    if digits.is_empty() {
        return Err(c.error(at, "expected part index"));
    }
    let part = std::str::from_utf8(digits)
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .ok_or_else(|| c.error(at, "part index too large"))?;
    c.expect(b',', "`,`")?;

    c.skip_ws();
    let at = c.pos;
    let sign = match c.peek() {
        Some(b'+') => 1,
        Some(b'-') => -1,
        _ => return Err(c.error(at, "expected signed axis such as +x")),
    };
    c.pos += 1;
    c.skip_ws();
    let axis = match (sign, c.peek().map(|b| b.to_ascii_lowercase())) {
        (1, Some(b'x')) => Axis::PosX,
        (-1, Some(b'x')) => Axis::NegX,
        (1, Some(b'y')) => Axis::PosY,
        (-1, Some(b'y')) => Axis::NegY,
        (1, Some(b'z')) => Axis::PosZ,
        (-1, Some(b'z')) => Axis::NegZ,
        _ => return Err(c.error(at, "expected signed axis such as +x")),
    };
    c.pos += 1;
    c.expect(b',', "`,`")?;

    c.skip_ws();
    let (at, num) = c.take_while(|b| b.is_ascii_digit() || matches!(b, b'.' | b'e' | b'E' | b'+' | b'-'));
    let value = std::str::from_utf8(num)
        .ok()
        .filter(|s| !s.is_empty())
        .and_then(|s| s.parse::<f64>().ok())
        .filter(|v| v.is_finite())
        .ok_or_else(|| c.error(at, "expected number"))?;
    if !value_in_range(kind, value) {
        let range = match kind {
            FixKind::Rotate => "rotation must lie in (0, 180] degrees",
            FixKind::Scale => "scale factor must be positive",
            FixKind::Translate => "translation distance must be positive",
        };
        return Err(c.error(at, range));
    }
    c.expect(b')', "`)`")?;
    c.skip_ws();
    if c.pos != c.src.len() {
        return Err(c.error(c.pos, "unexpected trailing input"));
    }
    Ok(FixChoice::Fix(Fix { kind, part, axis, value }))
}

/// Points of `part` (via its root) under `labels`.
pub fn part_points(labels: &HardLabels, roots: &[usize], part: usize) -> Result<Vec<usize>> {
    let root = *roots
        .get(part)
        .ok_or_else(|| Error::Reference(format!("part {part} has no root ({} parts)", roots.len())))?;
    part_of_root(labels, root)
}

/// Apply a choice. Returns the new cloud and the indices that moved.
/// Without explicit pivots a part pivots about its centroid.
pub fn apply_fix(
    cloud: &PointCloud,
    labels: &HardLabels,
    roots: &[usize],
    choice: &FixChoice,
    pivots: Option<&[Vec3]>,
) -> Result<(PointCloud, Vec<usize>)> {
    if labels.len() != cloud.len() {
        return Err(Error::Size(format!("{} labels for {} points", labels.len(), cloud.len())));
    }
    let FixChoice::Fix(fix) = choice else {
        return Ok((cloud.clone(), Vec::new()));
    };
    let idx = part_points(labels, roots, fix.part)?;
    let pivot = fix_pivot(cloud, &idx, fix.part, pivots)?;
    let map = fix.affine(pivot);
    let mut pts = cloud.clone().into_points();
    for &i in &idx {
        pts[i] = map.apply(&pts[i]);
    }
    Ok((PointCloud::new(pts)?, idx))
}

pub fn fix_pivot(cloud: &PointCloud, idx: &[usize], part: usize, pivots: Option<&[Vec3]>) -> Result<Vec3> {
    match pivots {
        Some(p) => p
            .get(part)
            .copied()
            .ok_or_else(|| Error::Reference(format!("no pivot for part {part}"))),
        None => Ok(centroid(&cloud.subset(idx))),
    }
}

/// Shift every interacting point in every frame by the mean displacement of
/// the controlled particles.
pub fn offset_interacting_points(
    original: &PointCloud,
    fixed: &PointCloud,
    controlled: &[usize],
    ip_trajectory: &[Vec<Vec3>],
) -> Result<Vec<Vec<Vec3>>> {
    if controlled.is_empty() {
        return Err(Error::EmptySet("no controlled particles".into()));
    }
    let mut d = Vec3::zeros();
    for &i in controlled {
        d += fixed[i] - original[i];
    }
    d /= controlled.len() as f64;
    Ok(ip_trajectory
        .iter()
        .map(|frame| frame.iter().map(|p| p + d).collect())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fix(kind: FixKind, part: usize, axis: Axis, value: f64) -> FixChoice {
        FixChoice::Fix(Fix { kind, part, axis, value })
    }

    #[test]
    fn parses_examples() {
        assert_eq!(parse_choice("rotate(2,+x,30)").unwrap(), fix(FixKind::Rotate, 2, Axis::PosX, 30.0));
        assert_eq!(
            parse_choice("  SCALE ( 0 , - z , 1.5 ) ").unwrap(),
            fix(FixKind::Scale, 0, Axis::NegZ, 1.5)
        );
        assert_eq!(parse_choice("Functional").unwrap(), FixChoice::Functional);
        assert_eq!(parse_choice("translate(1,+y,0.25)").unwrap().to_string(), "translate(1,+y,0.25)");
    }

    #[test]
    fn unknown_type_names_token_and_offset() {
        match parse_choice("twist(1,+x,3)") {
            Err(Error::Parse { offset, token, message }) => {
                assert_eq!(offset, 0);
                assert!(token.starts_with("twist"));
                assert!(message.contains("unknown fix type"));
            }
            other => panic!("{other:?}"),
        }
        match parse_choice("rotate(1,+w,3)") {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 9),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn range_checks() {
        assert!(parse_choice("rotate(0,+x,0)").is_err());
        assert!(parse_choice("rotate(0,+x,180)").is_ok());
        assert!(parse_choice("rotate(0,+x,180.5)").is_err());
        assert!(parse_choice("scale(0,+x,0)").is_err());
        assert!(parse_choice("translate(0,+x,-1)").is_err());
        assert!(parse_choice("scale(0,+x,nan)").is_err());
        assert!(parse_choice("scale(0,+x,1e400)").is_err());
        assert!(parse_choice("functional extra").is_err());
        assert!(parse_choice("").is_err());
    }

    fn sample_scene() -> (PointCloud, HardLabels, Vec<usize>) {
        let pts = vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(2.0, 0.0, 0.0),
            Vec3::new(2.0, 1.0, 0.0),
        ];
        (PointCloud::new(pts).unwrap(), HardLabels::new(vec![0, 0, 1, 1]), vec![0, 2])
    }

    #[test]
    fn translate_moves_only_the_part() {
        let (c, l, r) = sample_scene();
        let (out, moved) = apply_fix(&c, &l, &r, &fix(FixKind::Translate, 1, Axis::NegZ, 0.5), None).unwrap();
        assert_eq!(moved, vec![2, 3]);
        assert_eq!(out[0].x.to_bits(), c[0].x.to_bits());
        assert_eq!(out[1], c[1]);
        assert_eq!(out[2], Vec3::new(2.0, 0.0, -0.5));
    }

    #[test]
    fn zero_rotation_is_identity() {
        let (c, l, r) = sample_scene();
        let (out, _) = apply_fix(&c, &l, &r, &fix(FixKind::Rotate, 1, Axis::PosZ, 0.0), None).unwrap();
        assert_eq!(out, c);
    }

    #[test]
    fn scale_ignores_axis_sign() {
        let (c, l, r) = sample_scene();
        let a = apply_fix(&c, &l, &r, &fix(FixKind::Scale, 1, Axis::PosY, 2.0), None).unwrap().0;
        let b = apply_fix(&c, &l, &r, &fix(FixKind::Scale, 1, Axis::NegY, 2.0), None).unwrap().0;
        assert_eq!(a, b);
        assert_eq!(a[2], Vec3::new(2.0, -0.5, 0.0));
    }

    #[test]
    fn rotate_about_explicit_pivot() {
        let (c, l, r) = sample_scene();
        let pivots = [Vec3::zeros(), Vec3::new(2.0, 0.0, 0.0)];
        let (out, _) = apply_fix(&c, &l, &r, &fix(FixKind::Rotate, 1, Axis::PosZ, 90.0), Some(&pivots)).unwrap();
        assert_eq!(out[2], c[2]);
        assert!((out[3] - Vec3::new(1.0, 0.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn bad_part_is_reference_error() {
        let (c, l, r) = sample_scene();
        assert!(matches!(
            apply_fix(&c, &l, &r, &fix(FixKind::Scale, 5, Axis::PosX, 2.0), None),
            Err(Error::Reference(_))
        ));
    }

    #[test]
    fn ip_offset_uses_mean_controlled_motion() {
        let (c, l, r) = sample_scene();
        let (out, _) = apply_fix(&c, &l, &r, &fix(FixKind::Translate, 1, Axis::PosX, 1.0), None).unwrap();
        let ip = vec![vec![Vec3::zeros()]; 3];
        let off = offset_interacting_points(&c, &out, &[1, 2], &ip).unwrap();
        assert!(off.iter().all(|f| f[0] == Vec3::new(0.5, 0.0, 0.0)));
        assert!(matches!(offset_interacting_points(&c, &out, &[], &ip), Err(Error::EmptySet(_))));
    }

    fn any_fix() -> impl Strategy<Value = Fix> {
        (0usize..3, 0usize..8, 0usize..6, 0.01f64..180.0).prop_map(|(k, part, a, v)| Fix {
            kind: [FixKind::Scale, FixKind::Translate, FixKind::Rotate][k],
            part,
            axis: Axis::ALL[a],
            value: if k == 0 { v / 60.0 } else { v },
        })
    }

    proptest! {
        #[test]
        fn round_trip(f in any_fix()) {
            let c = FixChoice::Fix(f);
            prop_assert_eq!(parse_choice(&c.to_string()).unwrap(), c);
        }

        #[test]
        fn never_panics(s in "\\PC{0,40}") {
            let _ = parse_choice(&s);
        }

        #[test]
        fn inverse_restores_points(f in any_fix(), seed in any::<u64>()) {
            let mut rng = crate::rng::SplitMix64::new(seed);
            let pts: Vec<Vec3> = (0..16).map(|_| Vec3::new(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0))).collect();
            let cloud = PointCloud::new(pts).unwrap();
            let labels = HardLabels::new((0..16).map(|i| i % 8).collect());
            let roots: Vec<usize> = (0..8).collect();
            let pivots: Vec<Vec3> = (0..8).map(|i| Vec3::new(0.1 * i as f64, 0.0, 0.2)).collect();
            let a = FixChoice::Fix(f);
            let b = FixChoice::Fix(f.inverse());
            let (mid, _) = apply_fix(&cloud, &labels, &roots, &a, Some(&pivots)).unwrap();
            let (back, _) = apply_fix(&mid, &labels, &roots, &b, Some(&pivots)).unwrap();
            for i in 0..16 {
                prop_assert!((back[i] - cloud[i]).norm() < 1e-9);
            }
        }
    }
}
