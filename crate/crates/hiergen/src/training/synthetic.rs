//! Procedural text-image pairs: one or two colored shapes on a plain
//! background (plus an optional undescribed third), captioned by a fixed
//! grammar `<color> <shape> [<relation> <color> <shape>]` in one of two
//! disjoint word sets standing in for two languages. Captions are
//! faithful by construction and checked by an inverse parse against the
//! scene record.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::coglm::Language;
use crate::error::{Error, Result};
use crate::image_io::Pixmap;
use crate::rng;
use crate::tokenizer::vocab::TextVocab;

pub const COLOR_NAMES_EN: [&str; 6] = ["red", "green", "blue", "yellow", "purple", "orange"];
pub const COLOR_NAMES_ALT: [&str; 6] = ["roja", "verde", "azul", "amarillo", "morado", "naranja"];
pub const SHAPE_NAMES_EN: [&str; 3] = ["circle", "square", "triangle"];
pub const SHAPE_NAMES_ALT: [&str; 3] = ["circulo", "cuadrado", "triangulo"];
pub const RELATION_NAMES_EN: [&str; 4] = ["above", "below", "leftof", "rightof"];
pub const RELATION_NAMES_ALT: [&str; 4] = ["encima", "debajo", "izquierda", "derecha"];

pub const COLOR_RGB: [[f32; 3]; 6] = [
    [0.85, 0.12, 0.12],
    [0.10, 0.65, 0.20],
    [0.15, 0.25, 0.85],
    [0.92, 0.85, 0.15],
    [0.55, 0.15, 0.70],
    [0.95, 0.55, 0.10],
];

pub const BACKGROUND_RGB: [[f32; 3]; 4] = [
    [0.97, 0.97, 0.95],
    [0.75, 0.78, 0.80],
    [0.35, 0.35, 0.38],
    [0.08, 0.08, 0.10],
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ShapeKind {
    Circle,
    Square,
    Triangle,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeSpec {
    pub kind: ShapeKind,
    pub color: usize,
    /// Center in normalized [0,1] image coordinates.
    pub cx: f64,
    pub cy: f64,
    /// Half-extent in normalized units.
    pub size: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    Above,
    Below,
    LeftOf,
    RightOf,
}

impl Relation {
    fn index(self) -> usize {
        match self {
            Relation::Above => 0,
            Relation::Below => 1,
            Relation::LeftOf => 2,
            Relation::RightOf => 3,
        }
    }

    fn holds(self, a: &ShapeSpec, b: &ShapeSpec) -> bool {
        match self {
            Relation::Above => a.cy < b.cy,
            Relation::Below => a.cy > b.cy,
            Relation::LeftOf => a.cx < b.cx,
            Relation::RightOf => a.cx > b.cx,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneRecord {
    pub shapes: Vec<ShapeSpec>,
    pub background: usize,
    /// Relation between shapes 0 and 1, when two or more exist.
    pub relation: Option<Relation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticPair {
    pub scene: SceneRecord,
    pub caption: String,
    pub language: Language,
}

impl SyntheticPair {
    pub fn render(&self, pixels_per_side: usize) -> Pixmap {
        render_scene(&self.scene, pixels_per_side)
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub train: Vec<SyntheticPair>,
    pub val: Vec<SyntheticPair>,
}

fn words(lang: Language) -> (&'static [&'static str; 6], &'static [&'static str; 3], &'static [&'static str; 4]) {
    match lang {
        Language::English => (&COLOR_NAMES_EN, &SHAPE_NAMES_EN, &RELATION_NAMES_EN),
        Language::Chinese => (&COLOR_NAMES_ALT, &SHAPE_NAMES_ALT, &RELATION_NAMES_ALT),
    }
}

/// The full content vocabulary, both word sets.
pub fn grammar_vocab() -> TextVocab {
    let mut all: Vec<String> = Vec::new();
    for set in [COLOR_NAMES_EN.as_slice(), SHAPE_NAMES_EN.as_slice(), RELATION_NAMES_EN.as_slice(), COLOR_NAMES_ALT.as_slice(), SHAPE_NAMES_ALT.as_slice(), RELATION_NAMES_ALT.as_slice()] {
        all.extend(set.iter().map(|s| s.to_string()));
    }
    TextVocab::new(all).expect("grammar word sets are disjoint")
}

pub fn caption_of(scene: &SceneRecord, lang: Language) -> String {
    let (colors, shapes, relations) = words(lang);
    let s0 = &scene.shapes[0];
    let mut out = format!("{} {}", colors[s0.color], shapes[s0.kind as usize]);
    if let (Some(rel), Some(s1)) = (scene.relation, scene.shapes.get(1)) {
        out.push_str(&format!(
            " {} {} {}",
            relations[rel.index()],
            colors[s1.color],
            shapes[s1.kind as usize]
        ));
    }
    out
}

/// Inverse of the caption grammar: `(color, shape, [relation, color,
/// shape])` word indices.
pub fn parse_caption(
    caption: &str,
    lang: Language,
) -> Result<(usize, usize, Option<(usize, usize, usize)>)> {
    let (colors, shapes, relations) = words(lang);
    let find = |set: &[&str], w: &str| set.iter().position(|s| *s == w);
    let toks: Vec<&str> = caption.split_whitespace().collect();
    if toks.len() != 2 && toks.len() != 5 {
        return Err(Error::InvalidArgument(format!(
            "caption {caption:?} does not match the grammar"
        )));
    }
    let c0 = find(colors, toks[0])
        .ok_or_else(|| Error::InvalidArgument(format!("unknown color {:?}", toks[0])))?;
    let s0 = find(shapes, toks[1])
        .ok_or_else(|| Error::InvalidArgument(format!("unknown shape {:?}", toks[1])))?;
    if toks.len() == 2 {
        return Ok((c0, s0, None));
    }
    let rel = find(relations, toks[2])
        .ok_or_else(|| Error::InvalidArgument(format!("unknown relation {:?}", toks[2])))?;
    let c1 = find(colors, toks[3])
        .ok_or_else(|| Error::InvalidArgument(format!("unknown color {:?}", toks[3])))?;
    let s1 = find(shapes, toks[4])
        .ok_or_else(|| Error::InvalidArgument(format!("unknown shape {:?}", toks[4])))?;
    Ok((c0, s0, Some((rel, c1, s1))))
}

/// Does the caption state only facts the scene record supports?
pub fn caption_is_faithful(pair: &SyntheticPair) -> bool {
    let Ok((c0, s0, rest)) = parse_caption(&pair.caption, pair.language) else {
        return false;
    };
    let sh0 = &pair.scene.shapes[0];
    if sh0.color != c0 || sh0.kind as usize != s0 {
        return false;
    }
    match rest {
        None => pair.scene.shapes.len() == 1,
        Some((rel, c1, s1)) => {
            let Some(sh1) = pair.scene.shapes.get(1) else { return false };
            let rels = [Relation::Above, Relation::Below, Relation::LeftOf, Relation::RightOf];
            sh1.color == c1 && sh1.kind as usize == s1 && rels[rel].holds(sh0, sh1)
        }
    }
}

#[inline]
fn inside(shape: &ShapeSpec, u: f64, v: f64) -> bool {
    let (dx, dy) = (u - shape.cx, v - shape.cy);
    let r = shape.size;
    match shape.kind {
        ShapeKind::Circle => dx * dx + dy * dy <= r * r,
        ShapeKind::Square => dx.abs() <= r && dy.abs() <= r,
        ShapeKind::Triangle => {
            // upward triangle: apex at (cx, cy-r), base at cy+r
            dy >= -r && dy <= r && dx.abs() <= (dy + r) / 2.0
        }
    }
}

pub fn render_scene(scene: &SceneRecord, side: usize) -> Pixmap {
    let mut img = Pixmap::fill(side, side, BACKGROUND_RGB[scene.background]);
    for y in 0..side {
        for x in 0..side {
            let u = (x as f64 + 0.5) / side as f64;
            let v = (y as f64 + 0.5) / side as f64;
            // topmost shape wins
            for shape in scene.shapes.iter().rev() {
                if inside(shape, u, v) {
                    img.set_pixel(x, y, COLOR_RGB[shape.color]);
                    break;
                }
            }
        }
    }
    img
}

fn sample_scene(rng: &mut rng::Rng) -> SceneRecord {
    let background = rng.gen_range(0..BACKGROUND_RGB.len());
    let n_shapes = 1 + rng.gen_range(0..3); // 1..=3
    loop {
        let mut shapes = Vec::with_capacity(n_shapes);
        for _ in 0..n_shapes {
            shapes.push(ShapeSpec {
                kind: match rng.gen_range(0..3) {
                    0 => ShapeKind::Circle,
                    1 => ShapeKind::Square,
                    _ => ShapeKind::Triangle,
                },
                color: rng.gen_range(0..COLOR_RGB.len()),
                cx: rng.gen_range(0.2..0.8),
                cy: rng.gen_range(0.2..0.8),
                size: rng.gen_range(0.13..0.24),
            });
        }
        // shapes must be well separated so relations are unambiguous and
        // nothing is fully hidden
        let ok = shapes.iter().enumerate().all(|(i, a)| {
            shapes[i + 1..].iter().all(|b| {
                let (dx, dy) = ((a.cx - b.cx).abs(), (a.cy - b.cy).abs());
                dx.max(dy) > a.size + b.size && dx.min(dy) * 2.0 < dx.max(dy)
            })
        });
        if !ok {
            continue;
        }
        let relation = if shapes.len() >= 2 {
            let (a, b) = (&shapes[0], &shapes[1]);
            let (dx, dy) = (a.cx - b.cx, a.cy - b.cy);
            Some(if dy.abs() > dx.abs() {
                if dy < 0.0 {
                    Relation::Above
                } else {
                    Relation::Below
                }
            } else if dx < 0.0 {
                Relation::LeftOf
            } else {
                Relation::RightOf
            })
        } else {
            None
        };
        return SceneRecord { shapes, background, relation };
    }
}

/// Deterministic dataset of `n` pairs split 90/10 into train/val,
/// disjoint by scene record.
pub fn synthetic_dataset(n: usize, seed: u64) -> Result<Dataset> {
    if n < 2 {
        return Err(Error::InvalidArgument("need at least 2 pairs".into()));
    }
    let mut pairs = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = rng::seeded(rng::substream(seed, 11, i as u64));
        let scene = sample_scene(&mut rng);
        let language = if rng.gen_bool(0.5) { Language::English } else { Language::Chinese };
        let caption = caption_of(&scene, language);
        pairs.push(SyntheticPair { scene, caption, language });
    }
    let n_val = (n / 10).max(1);
    let val = pairs.split_off(n - n_val);
    for v in &val {
        if pairs.iter().any(|t| t.scene == v.scene) {
            return Err(Error::InvalidArgument("train/val scene collision".into()));
        }
    }
    Ok(Dataset { train: pairs, val })
}
