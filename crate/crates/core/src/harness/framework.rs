//! Framework models: the tolerant body parsers an application sits behind.

use serde::{Deserialize, Serialize};

use crate::http::{read_head_tolerant, HeadTolerance, RawRequest};
use crate::json::{parse_json_lenient, JsonLeniency};
use crate::media_type::{parse_media_type, parse_media_type_lenient, MediaType};
use crate::multipart::{parse_multipart_lenient, BoundaryPick, LeniencyProfile};
use crate::reject::LenientError;
use crate::xml::{collect_text_fields, parse_xml_lenient, XmlLeniency};

/// Which recovered field has to carry the payload for a bypass.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "name")]
pub enum PayloadPolicy {
    AnyField,
    /// A multipart part name, or the last segment of a JSON or XML path.
    NamedField(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case")]
pub struct FrameworkModel {
    pub name: String,
    pub head: HeadTolerance,
    pub lenient_media_type: bool,
    /// Guess the body type from its first bytes when no usable
    /// Content-Type header is present.
    pub sniff_body_type: bool,
    pub multipart: LeniencyProfile,
    pub json: JsonLeniency,
    pub xml: XmlLeniency,
    pub payload_policy: PayloadPolicy,
}

impl Default for FrameworkModel {
    fn default() -> Self {
        Self {
            name: "strict-equivalent".into(),
            head: HeadTolerance::default(),
            lenient_media_type: false,
            sniff_body_type: false,
            multipart: LeniencyProfile::strictest(),
            json: JsonLeniency::strict(),
            xml: XmlLeniency::strict(),
            payload_policy: PayloadPolicy::AnyField,
        }
    }
}

/// A value the framework hands to application code.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecoveredField {
    pub path: String,
    pub value: Vec<u8>,
}

fn sniff(body: &[u8]) -> Option<MediaType> {
    let start = body.iter().position(|b| !b.is_ascii_whitespace())?;
    let rest = &body[start..];
    if let Some(after) = rest.strip_prefix(b"--") {
        let end = after.iter().position(|&b| b == b'\r' || b == b'\n')?;
        let boundary = String::from_utf8_lossy(&after[..end]).into_owned();
        return Some(MediaType::new("multipart", "form-data").with_param("boundary", &boundary));
    }
    match rest[0] {
        b'{' | b'[' => Some(MediaType::new("application", "json")),
        b'<' => Some(MediaType::new("application", "xml")),
        _ => None,
    }
}

impl FrameworkModel {
    fn media_type(&self, raw: Option<&[u8]>, body: &[u8]) -> Result<MediaType, LenientError> {
        let declared = raw.and_then(|v| {
            if self.lenient_media_type {
                parse_media_type_lenient(v)
            } else {
                parse_media_type(v).ok()
            }
        });
        match declared {
            Some(mt) => Ok(mt),
            None if self.sniff_body_type => {
                sniff(body).ok_or_else(|| LenientError("cannot infer the body type".into()))
            }
            None if raw.is_none() => Err(LenientError("no Content-Type".into())),
            None => Err(LenientError("unusable Content-Type".into())),
        }
    }

    /// Reads the request the way this framework would and returns every
    /// value it exposes.
    pub fn parse(&self, req: &RawRequest) -> Result<Vec<RecoveredField>, LenientError> {
        let wire = req.serialize(false);
        let head = read_head_tolerant(&wire, self.head).map_err(|e| LenientError(e.to_string()))?;
        let mut fields: Vec<RecoveredField> = req
            .url_parameters()
            .into_iter()
            .map(|(name, value)| RecoveredField {
                path: format!("?{}", String::from_utf8_lossy(&name)),
                value,
            })
            .collect();
        let body = &head.body;
        let mt = self.media_type(head.header("content-type"), body)?;
        if mt.type_ == "multipart" {
            for part in parse_multipart_lenient(body, &mt, &self.multipart)?.parts {
                fields.push(RecoveredField {
                    path: String::from_utf8_lossy(&part.name).into_owned(),
                    value: part.body,
                });
            }
        } else if mt.subtype == "json" || mt.subtype.ends_with("+json") {
            for f in parse_json_lenient(body, &self.json)?.string_fields() {
                fields.push(RecoveredField {
                    path: f.path,
                    value: f.text.into_bytes(),
                });
            }
        } else if mt.subtype == "xml" || mt.subtype.ends_with("+xml") {
            for (path, text) in collect_text_fields(&parse_xml_lenient(body, &self.xml)?) {
                fields.push(RecoveredField {
                    path,
                    value: text.into_bytes(),
                });
            }
        } else {
            return Err(LenientError(format!("unsupported body type {}", mt.essence())));
        }
        Ok(fields)
    }

    /// Path of the first field that carries `payload` under this model's
    /// payload policy.
    pub fn find_payload<'a>(&self, fields: &'a [RecoveredField], payload: &[u8]) -> Option<&'a RecoveredField> {
        fields.iter().find(|f| {
            let selected = match &self.payload_policy {
                PayloadPolicy::AnyField => true,
                PayloadPolicy::NamedField(name) => {
                    f.path == *name || f.path.rsplit('/').next() == Some(name.as_str())
                }
            };
            selected && f.value.windows(payload.len()).any(|w| w == payload)
        })
    }
}

pub const FRAMEWORK_PRESET_NAMES: &[&str] = &[
    "strict-equivalent",
    "joined-boundary-tolerant",
    "control-char-tolerant",
    "permissive",
];

pub fn framework_preset(name: &str) -> Option<FrameworkModel> {
    let joined = LeniencyProfile {
        join_continuation_params: true,
        boundary_pick: Some(BoundaryPick::Joined),
        ..LeniencyProfile::strictest()
    };
    let model = match name {
        "strict-equivalent" => FrameworkModel::default(),
        "joined-boundary-tolerant" => FrameworkModel {
            lenient_media_type: true,
            multipart: joined,
            ..FrameworkModel::default()
        },
        "control-char-tolerant" => FrameworkModel {
            lenient_media_type: true,
            multipart: LeniencyProfile {
                tolerate_control_in_headers: true,
                ..joined
            },
            json: JsonLeniency::permissive(),
            ..FrameworkModel::default()
        },
        "permissive" => FrameworkModel {
            head: HeadTolerance {
                bare_cr_line_ending: true,
                blank_line_before_header: true,
            },
            lenient_media_type: true,
            sniff_body_type: true,
            multipart: LeniencyProfile::permissive(),
            json: JsonLeniency::permissive(),
            xml: XmlLeniency::permissive(),
            ..FrameworkModel::default()
        },
        _ => return None,
    };
    Some(FrameworkModel {
        name: name.to_string(),
        ..model
    })
}

pub fn framework_presets() -> Vec<FrameworkModel> {
    FRAMEWORK_PRESET_NAMES.iter().filter_map(|n| framework_preset(n)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mutation::{generate_seed, ContentKind, SeedSpec, XSS_PAYLOAD};

    #[test]
    fn every_preset_reads_every_seed() {
        for kind in [ContentKind::Multipart, ContentKind::Json, ContentKind::Xml] {
            let seed = generate_seed(&SeedSpec::new(kind, XSS_PAYLOAD)).unwrap();
            for fw in framework_presets() {
                let fields = fw.parse(&seed).unwrap_or_else(|e| panic!("{} {kind}: {e}", fw.name));
                assert!(fw.find_payload(&fields, XSS_PAYLOAD).is_some(), "{} {kind}", fw.name);
            }
        }
    }

    #[test]
    fn named_field_policy() {
        let seed = generate_seed(&SeedSpec::new(ContentKind::Json, XSS_PAYLOAD)).unwrap();
        let mut fw = framework_preset("strict-equivalent").unwrap();
        fw.payload_policy = PayloadPolicy::NamedField("field1".into());
        let fields = fw.parse(&seed).unwrap();
        assert_eq!(fw.find_payload(&fields, XSS_PAYLOAD).unwrap().path, "/field1");
        fw.payload_policy = PayloadPolicy::NamedField("other".into());
        assert!(fw.find_payload(&fields, XSS_PAYLOAD).is_none());
    }

    #[test]
    fn sniffing_recovers_headerless_bodies() {
        assert_eq!(sniff(b"--abc\r\n").unwrap().param("boundary"), Some("abc"));
        assert!(sniff(b"  {\"a\":1}").unwrap().is("application", "json"));
        assert!(sniff(b"<a/>").unwrap().is("application", "xml"));
        assert!(sniff(b"plain").is_none());
    }

    #[test]
    fn presets_are_distinct() {
        let all = framework_presets();
        assert_eq!(all.len(), FRAMEWORK_PRESET_NAMES.len());
        for (i, a) in all.iter().enumerate() {
            for b in &all[i + 1..] {
                assert_ne!(
                    FrameworkModel { name: String::new(), ..a.clone() },
                    FrameworkModel { name: String::new(), ..b.clone() }
                );
            }
        }
    }
}
