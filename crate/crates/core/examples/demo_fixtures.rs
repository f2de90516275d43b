//! Regenerates the shipped demo cohort and its HTTP fixtures.
//!
//! ```text
//! cargo run -p moa-core --example demo_fixtures -- fixtures/demo
//! ```
//!
//! Patient cases and slide features come from the synthetic generator. HTTP
//! fixtures are recorded against a canned in-process transport that answers
//! in the real PubMed, OncoKB and Custom Search response formats; all article
//! ids, titles and summaries in them are synthetic.

use std::path::PathBuf;
use std::sync::Arc;

use serde_json::json;

use moa_core::http::{
    FixtureMode, FixtureStore, HttpRequest, HttpResponse, RateLimiter, RetryPolicy, Service, ToolHttp, Transport,
};
use moa_core::synthetic::{generate, write_cohort, SyntheticSpec, SYNTHETIC_ALTERATIONS, TUMOR_CLASSES};
use moa_core::tools::{CustomSearchProvider, OncoKbTool, PubMedTool, SearchProvider, ONCOKB, PUBMED, WEB_SEARCH};
use moa_core::Result;

struct Canned;

fn query<'a>(req: &'a HttpRequest, key: &str) -> &'a str {
    req.query.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str()).unwrap_or("")
}

/// Three synthetic PMIDs per search term, stable across runs.
fn pmids_for(term: &str) -> Vec<String> {
    let base = match term {
        t if t.contains("Oligodendroglioma") => 90_000_200,
        t if t.contains("Oligoastrocytoma") => 90_000_300,
        t if t.contains("Astrocytoma") => 90_000_100,
        _ => 90_000_400,
    };
    (1..=3).map(|i| (base + i).to_string()).collect()
}

fn article_xml(pmid: &str) -> String {
    let n: u32 = pmid.parse().unwrap_or(0);
    let (topic, finding) = match (n / 100) % 10 {
        1 => ("astrocytoma", "IDH1 R132H mutation co-occurred with TP53 alterations and ATRX loss"),
        2 => ("oligodendroglioma", "IDH1 mutation co-occurred with 1p/19q codeletion and CIC alterations"),
        3 => ("mixed glioma", "IDH1 mutation frequency was intermediate between pure histologies"),
        _ => ("low-grade glioma", "IDH1 mutant tumors showed longer progression-free survival"),
    };
    let (design, size) = match n % 10 {
        1 => ("Retrospective cohort", 212),
        2 => ("Multicenter series", 148),
        _ => ("Pooled analysis", 377),
    };
    format!(
        "<PubmedArticle><MedlineCitation><PMID Version=\"1\">{pmid}</PMID><Article>\
<ArticleTitle>{design} of IDH1 status in adult {topic}</ArticleTitle>\
<Abstract><AbstractText Label=\"BACKGROUND\">IDH1 status stratifies diffuse gliomas.</AbstractText>\
<AbstractText Label=\"RESULTS\">In {size} patients with {topic}, {finding}. Younger age at diagnosis was associated with IDH1 mutation.</AbstractText>\
</Abstract></Article></MedlineCitation></PubmedArticle>"
    )
}

fn oncokb_body(gene: &str, alteration: &str) -> String {
    let known = SYNTHETIC_ALTERATIONS
        .iter()
        .find(|(g, a, _)| *g == gene && *a == alteration);
    let body = match known {
        None => json!({
            "geneExist": false,
            "variantExist": false,
            "oncogenic": "Unknown",
            "geneSummary": "",
            "variantSummary": "",
            "mutationEffect": {"knownEffect": "Unknown", "citations": {"pmids": [], "abstracts": []}}
        }),
        Some((_, _, onc)) => {
            let (label, effect, summary) = match onc.as_str() {
                "oncogenic" => ("Oncogenic", "Loss-of-function", "is a known hotspot that disrupts DNA binding"),
                "likely-oncogenic" => ("Likely Oncogenic", "Likely Loss-of-function", "is predicted to impair repressor activity"),
                _ => ("Unknown", "Unknown", "has uncertain biological significance"),
            };
            let gene_summary = if gene == "TP53" {
                "TP53 is a tumor suppressor frequently altered in IDH-mutant astrocytoma."
            } else {
                "CIC is a transcriptional repressor recurrently altered in oligodendroglioma."
            };
            json!({
                "geneExist": true,
                "variantExist": true,
                "oncogenic": label,
                "geneSummary": gene_summary,
                "variantSummary": format!("The {gene} {alteration} alteration {summary}."),
                "mutationEffect": {"knownEffect": effect, "citations": {"pmids": ["90000501", "90000502"], "abstracts": []}}
            })
        }
    };
    body.to_string()
}

fn search_body(q: &str) -> String {
    let topic = q.trim_end_matches(" IDH1 mutation prognosis");
    let items: Vec<_> = (1..=3)
        .map(|i| {
            json!({
                "kind": "customsearch#result",
                "title": format!("IDH1 and outcome in {topic} ({i})"),
                "link": format!("https://example.org/glioma/{}/{i}", topic.to_lowercase().replace(' ', "-")),
                "snippet": format!("Overview {i}: IDH1-mutant {topic} generally carries a more favorable prognosis than IDH-wildtype disease.")
            })
        })
        .collect();
    json!({"kind": "customsearch#search", "items": items}).to_string()
}

impl Transport for Canned {
    fn send(&self, req: &HttpRequest) -> Result<HttpResponse> {
        let body = if req.url.ends_with("/esearch.fcgi") {
            let ids = pmids_for(query(req, "term"));
            json!({"header": {"type": "esearch"}, "esearchresult": {"count": ids.len().to_string(), "idlist": ids}})
                .to_string()
        } else if req.url.ends_with("/efetch.fcgi") {
            let arts: String = query(req, "id").split(',').map(article_xml).collect();
            format!("<?xml version=\"1.0\"?><PubmedArticleSet>{arts}</PubmedArticleSet>")
        } else if req.url.contains("/annotate/mutations/") {
            oncokb_body(query(req, "hugoSymbol"), query(req, "alteration"))
        } else {
            search_body(query(req, "q"))
        };
        Ok(HttpResponse { status: 200, body })
    }
}

fn recorder(name: &str, dir: &std::path::Path) -> ToolHttp {
    let service = Service::new(name, Arc::new(Canned), Arc::new(RateLimiter::unlimited()), RetryPolicy::default());
    ToolHttp::new(service, Some(FixtureStore::new(dir, FixtureMode::Record)))
}

fn main() -> Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "fixtures/demo".into()));
    let cohort = generate(&SyntheticSpec::default())?;
    write_cohort(&out, &cohort)?;

    let http_dir = out.join("http");
    let pubmed = PubMedTool::new(recorder(PUBMED, &http_dir), 3);
    let topics: Vec<&str> = TUMOR_CLASSES.iter().copied().chain(["low-grade glioma"]).collect();
    for t in &topics {
        pubmed.search(&format!("IDH1 {t}"), 3)?;
    }
    let oncokb = OncoKbTool::new(recorder(ONCOKB, &http_dir), Some("fixture".into()));
    for (gene, alteration, _) in SYNTHETIC_ALTERATIONS {
        oncokb.annotate(gene, alteration)?;
    }
    oncokb.annotate("FAKE1", "X1Y")?;
    let search = CustomSearchProvider::new(recorder(WEB_SEARCH, &http_dir), Some("fixture".into()), "demo");
    for t in &topics {
        let _ = search.search(&format!("{t} IDH1 mutation prognosis"), 3);
    }
    println!("wrote {} cases and fixtures to {}", cohort.cases.len(), out.display());
    Ok(())
}
