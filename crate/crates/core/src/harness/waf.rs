//! WAF models: a strict body parser in front of a rule set.

use serde::{Deserialize, Serialize};

use crate::http::RawRequest;
use crate::json::parse_json_strict;
use crate::media_type::{parse_media_type, MediaParam, MediaType};
use crate::multipart::{parse_multipart_strict, resolve_boundary, BoundaryPick};
use crate::reject::{RejectCategory, RejectReason};
use crate::rules::{evaluate, field_signatures, FieldSource, InspectionView, Rule, Verdict};
use crate::xml::{collect_text_fields, parse_xml_strict};

/// Rule id reported when a fail-closed model blocks on a parse failure.
pub const FAIL_CLOSED_RULE: &str = "fail-closed";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailureMode {
    /// Body parse failures leave only URL, header and raw-body fields for the
    /// rules.
    FailOpen,
    FailClosed,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WafModel {
    pub name: String,
    pub rules: Vec<Rule>,
    pub failure_mode: FailureMode,
    /// Reassemble `boundary*0`/`boundary*1` instead of refusing them.
    pub join_continuation: bool,
    /// Recognise Content-Type only when its separator is exactly `": "`.
    pub exact_content_type_separator: bool,
}

/// Fields a WAF model extracted and the body parse failure, if any.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WafInspection {
    pub view: InspectionView,
    pub parse_failure: Option<RejectReason>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WafDecision {
    pub verdict: Verdict,
    pub parse_failure: Option<RejectReason>,
}

impl WafModel {
    pub fn new(name: impl Into<String>, failure_mode: FailureMode) -> Self {
        Self {
            name: name.into(),
            rules: field_signatures(),
            failure_mode,
            join_continuation: false,
            exact_content_type_separator: false,
        }
    }

    pub fn with_rules(mut self, rules: Vec<Rule>) -> Self {
        self.rules = rules;
        self
    }

    fn body_media_type(&self, req: &RawRequest) -> Result<Option<MediaType>, RejectReason> {
        let headers: Vec<_> = req
            .headers_named("content-type")
            .filter(|h| !self.exact_content_type_separator || h.separator == b": ")
            .collect();
        match headers.as_slice() {
            [] if req.body.is_empty() => Ok(None),
            [] => Err(RejectReason::new(
                RejectCategory::MissingContentType,
                "body without a Content-Type",
            )),
            [h] => parse_media_type(&h.value)
                .map(Some)
                .map_err(|e| RejectReason::new(RejectCategory::UnparseableContentType, e.to_string())),
            _ => Err(RejectReason::new(
                RejectCategory::AmbiguousHeader,
                "more than one Content-Type header",
            )),
        }
    }

    fn with_joined_boundary(&self, mt: MediaType) -> Result<MediaType, RejectReason> {
        if !self.join_continuation || !mt.params.iter().any(|p| p.is_rfc2231()) {
            return Ok(mt);
        }
        let boundary = resolve_boundary(&mt, Some(BoundaryPick::Joined), true)?;
        let mut params: Vec<MediaParam> = mt.params.into_iter().filter(|p| p.name != "boundary").collect();
        params.push(MediaParam::plain("boundary", &String::from_utf8_lossy(&boundary)));
        Ok(MediaType { params, ..mt })
    }

    fn inspect_body(&self, req: &RawRequest, view: &mut InspectionView) -> Result<(), RejectReason> {
        let Some(mt) = self.body_media_type(req)? else {
            return Ok(());
        };
        let body = &req.body;
        if mt.is("multipart", "form-data") {
            let mt = self.with_joined_boundary(mt)?;
            for part in parse_multipart_strict(body, &mt)?.parts() {
                view.push(FieldSource::Body, part.name(), part.body());
            }
        } else if mt.subtype == "json" || mt.subtype.ends_with("+json") {
            for f in parse_json_strict(body)?.string_fields() {
                view.push(FieldSource::Body, f.path, f.text);
            }
        } else if mt.subtype == "xml" || mt.subtype.ends_with("+xml") {
            for (path, text) in collect_text_fields(&parse_xml_strict(body)?) {
                view.push(FieldSource::Body, path, text);
            }
        }
        Ok(())
    }

    pub fn inspect(&self, req: &RawRequest) -> WafInspection {
        let mut view = InspectionView {
            raw_body: req.body.clone(),
            ..InspectionView::default()
        };
        for (name, value) in req.url_parameters() {
            view.push(FieldSource::Url, name, value);
        }
        for h in &req.headers {
            view.push(FieldSource::Header, h.name.clone(), h.value.clone());
        }
        let mut body_view = InspectionView::default();
        let parse_failure = self.inspect_body(req, &mut body_view).err();
        if parse_failure.is_none() {
            view.fields.extend(body_view.fields);
        }
        WafInspection { view, parse_failure }
    }

    pub fn decide(&self, req: &RawRequest) -> WafDecision {
        let WafInspection { view, parse_failure } = self.inspect(req);
        let verdict = match (&parse_failure, self.failure_mode) {
            (Some(_), FailureMode::FailClosed) => Verdict::blocked_by(FAIL_CLOSED_RULE, view.fields.len()),
            _ => evaluate(&self.rules, &view),
        };
        WafDecision { verdict, parse_failure }
    }
}

pub const WAF_PRESET_NAMES: &[&str] = &["strict-fail-open", "strict-fail-closed", "continuation-aware-fail-open"];

pub fn waf_preset(name: &str) -> Option<WafModel> {
    match name {
        "strict-fail-open" => Some(WafModel::new(name, FailureMode::FailOpen)),
        "strict-fail-closed" => Some(WafModel::new(name, FailureMode::FailClosed)),
        "continuation-aware-fail-open" => Some(WafModel {
            join_continuation: true,
            exact_content_type_separator: true,
            ..WafModel::new(name, FailureMode::FailOpen)
        }),
        _ => None,
    }
}

pub fn waf_presets() -> Vec<WafModel> {
    WAF_PRESET_NAMES.iter().filter_map(|n| waf_preset(n)).collect()
}
