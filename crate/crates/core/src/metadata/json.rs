//! Canonical JSON form of [`ImageMetadata`].
//!
//! Output is compact, fields appear in a fixed order and every score,
//! threshold and confidence is written with exactly four fractional digits,
//! so equal metadata always serializes to equal bytes.

use std::fmt::Write as _;

use serde_json::{Map, Value};

use super::{BBox, Decimal4, ImageMetadata, MaskRle, Modality, PsoAnnotation, RegionGeometry, SensitivityGroupTable};
use crate::error::{Error, Result};

pub fn serialize_metadata(meta: &ImageMetadata) -> Vec<u8> {
    let mut out = String::with_capacity(256 + meta.annotations.len() * 160);
    let t = &meta.group_table;
    write!(
        out,
        "{{\"schema_version\":{},\"image_id\":{},\"width\":{},\"height\":{},\"channels\":{},",
        meta.schema_version,
        json_string(&meta.image_id),
        meta.width,
        meta.height,
        meta.channels
    )
    .unwrap();
    write!(
        out,
        "\"group_table\":{{\"alpha\":{},\"beta\":{},\"thresholds\":[{}]}},",
        t.alpha(),
        t.beta(),
        join(t.thresholds())
    )
    .unwrap();
    out.push_str("\"annotations\":[");
    for (i, a) in meta.annotations.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        write!(
            out,
            "{{\"id\":{},\"label\":{},\"modality\":\"{}\",\"geometry\":",
            a.id,
            json_string(&a.label),
            a.modality
        )
        .unwrap();
        match &a.geometry {
            RegionGeometry::BBox(b) => write!(
                out,
                "{{\"kind\":\"bbox\",\"bbox\":[{},{},{},{}]}}",
                b.x, b.y, b.width, b.height
            )
            .unwrap(),
            RegionGeometry::Mask(m) => write!(out, "{{\"kind\":\"mask\",\"mask_rle\":[{}]}}", join(m.runs())).unwrap(),
        }
        write!(
            out,
            ",\"confidence\":{},\"sensitivity_score\":{},\"group\":{}}}",
            a.confidence, a.sensitivity_score, a.group
        )
        .unwrap();
    }
    out.push_str("]}");
    out.into_bytes()
}

pub fn parse_metadata(document: &[u8]) -> Result<ImageMetadata> {
    let value: Value =
        serde_json::from_slice(document).map_err(|e| Error::validation(format!("metadata is not valid JSON: {e}")))?;
    let root = Obj::new(&value, "metadata")?;
    root.only(&[
        "schema_version",
        "image_id",
        "width",
        "height",
        "channels",
        "group_table",
        "annotations",
    ])?;

    let gt = Obj::new(root.get("group_table")?, "group_table")?;
    gt.only(&["alpha", "beta", "thresholds"])?;
    let thresholds = gt
        .array("thresholds")?
        .iter()
        .enumerate()
        .map(|(i, v)| decimal(v, &format!("group_table.thresholds[{i}]")))
        .collect::<Result<Vec<_>>>()?;
    let group_table = SensitivityGroupTable::from_decimals(gt.decimal("alpha")?, gt.decimal("beta")?, thresholds)?;

    let channels = root.uint("channels")?;
    let annotations = root
        .array("annotations")?
        .iter()
        .enumerate()
        .map(|(i, v)| parse_annotation(v, i))
        .collect::<Result<Vec<_>>>()?;

    let meta = ImageMetadata {
        schema_version: to_u32(root.uint("schema_version")?, "schema_version")?,
        image_id: root.string("image_id")?.to_string(),
        width: to_u32(root.uint("width")?, "width")?,
        height: to_u32(root.uint("height")?, "height")?,
        channels: u8::try_from(channels)
            .map_err(|_| Error::validation(format!("channels: {channels} out of range")))?,
        group_table,
        annotations,
    };
    meta.validate()?;
    Ok(meta)
}

fn parse_annotation(value: &Value, index: usize) -> Result<PsoAnnotation> {
    let ctx = format!("annotations[{index}]");
    let a = Obj::new(value, &ctx)?;
    a.only(&[
        "id",
        "label",
        "modality",
        "geometry",
        "confidence",
        "sensitivity_score",
        "group",
    ])?;
    let id = to_u32(a.uint("id")?, &format!("{ctx}.id"))?;
    let with_id = |e: Error| Error::validation(format!("annotation id {id}: {e}"));

    let g = Obj::new(a.get("geometry")?, &format!("{ctx}.geometry"))?;
    let geometry = match g.string("kind")? {
        "bbox" => {
            g.only(&["kind", "bbox"])?;
            let v = g.array("bbox")?;
            if v.len() != 4 {
                return Err(with_id(Error::validation("bbox must have 4 entries")));
            }
            let n = v
                .iter()
                .map(|x| uint(x, &format!("{ctx}.geometry.bbox")).and_then(|u| to_u32(u, "bbox")))
                .collect::<Result<Vec<_>>>()?;
            RegionGeometry::BBox(BBox::new(n[0], n[1], n[2], n[3]))
        }
        "mask" => {
            g.only(&["kind", "mask_rle"])?;
            let runs = g
                .array("mask_rle")?
                .iter()
                .map(|x| uint(x, &format!("{ctx}.geometry.mask_rle")).and_then(|u| to_u32(u, "mask_rle")))
                .collect::<Result<Vec<_>>>()?;
            RegionGeometry::Mask(MaskRle::from_runs(runs).map_err(with_id)?)
        }
        other => {
            return Err(with_id(Error::validation(format!(
                "geometry.kind {other:?} is neither bbox nor mask"
            ))))
        }
    };

    let group = a.uint("group")?;
    Ok(PsoAnnotation {
        id,
        label: a.string("label")?.to_string(),
        modality: Modality::parse(a.string("modality")?).map_err(with_id)?,
        geometry,
        confidence: a.decimal("confidence")?,
        sensitivity_score: a.decimal("sensitivity_score")?,
        group: u16::try_from(group).map_err(|_| with_id(Error::validation(format!("group {group} out of range"))))?,
    })
}

struct Obj<'a> {
    map: &'a Map<String, Value>,
    ctx: String,
}

impl<'a> Obj<'a> {
    fn new(value: &'a Value, ctx: &str) -> Result<Self> {
        match value.as_object() {
            Some(map) => Ok(Self {
                map,
                ctx: ctx.to_string(),
            }),
            None => Err(Error::validation(format!("{ctx}: expected an object"))),
        }
    }

    fn only(&self, allowed: &[&str]) -> Result<()> {
        match self.map.keys().find(|k| !allowed.contains(&k.as_str())) {
            Some(k) => Err(Error::validation(format!("{}: unexpected field {k:?}", self.ctx))),
            None => Ok(()),
        }
    }

    fn get(&self, key: &str) -> Result<&'a Value> {
        self.map
            .get(key)
            .ok_or_else(|| Error::validation(format!("{}: missing field {key:?}", self.ctx)))
    }

    fn field(&self, key: &str) -> String {
        format!("{}.{key}", self.ctx)
    }

    fn string(&self, key: &str) -> Result<&'a str> {
        self.get(key)?
            .as_str()
            .ok_or_else(|| Error::validation(format!("{}: expected a string", self.field(key))))
    }

    fn uint(&self, key: &str) -> Result<u64> {
        uint(self.get(key)?, &self.field(key))
    }

    fn decimal(&self, key: &str) -> Result<Decimal4> {
        decimal(self.get(key)?, &self.field(key))
    }

    fn array(&self, key: &str) -> Result<&'a Vec<Value>> {
        self.get(key)?
            .as_array()
            .ok_or_else(|| Error::validation(format!("{}: expected an array", self.field(key))))
    }
}

fn uint(v: &Value, ctx: &str) -> Result<u64> {
    v.as_u64()
        .ok_or_else(|| Error::validation(format!("{ctx}: expected a non-negative integer")))
}

fn decimal(v: &Value, ctx: &str) -> Result<Decimal4> {
    let f = v
        .as_f64()
        .ok_or_else(|| Error::validation(format!("{ctx}: expected a number")))?;
    Decimal4::from_f64_exact(f).map_err(|e| Error::validation(format!("{ctx}: {e}")))
}

fn to_u32(v: u64, ctx: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::validation(format!("{ctx}: {v} out of range")))
}

fn json_string(s: &str) -> String {
    serde_json::to_string(s).expect("strings always serialize")
}

fn join<T: std::fmt::Display>(items: &[T]) -> String {
    let mut s = String::new();
    for (i, item) in items.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        write!(s, "{item}").unwrap();
    }
    s
}
