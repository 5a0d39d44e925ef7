//! Plain-text rendering of request/response exchanges, used for golden traces.

use std::fmt::Write;

use chrono::{DateTime, Utc};
use twin_core::timefmt;
use twin_core::wire::WireRequest;

use crate::world::MockReply;

pub fn render_exchange(at: DateTime<Utc>, req: &WireRequest, reply: &MockReply) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "@ {}", timefmt::format(&at));
    let _ = writeln!(out, "> {} {}", req.method, req.url);
    for (k, v) in &req.headers {
        let _ = writeln!(out, "> {k}: {v}");
    }
    if !req.body.is_empty() {
        let _ = writeln!(out, "> {}", String::from_utf8_lossy(&req.body));
    }
    match reply {
        MockReply::Timeout => {
            let _ = writeln!(out, "< (no response)");
        }
        MockReply::Response(resp) => {
            let _ = writeln!(out, "< {}", resp.status);
            for (k, v) in &resp.headers {
                let _ = writeln!(out, "< {k}: {v}");
            }
            if !resp.body.is_empty() {
                let _ = writeln!(out, "< {}", resp.body_text());
            }
        }
    }
    out
}
