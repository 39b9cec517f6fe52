#pragma once

#include <optional>
#include <set>
#include <string>
#include <vector>

#include "edemajoint/common.hpp"

namespace edemajoint::textlab {

struct Token {
    std::string text;  // lowercase
    int begin = 0;     // character offsets into the tokenized string
    int end = 0;
};

struct ReportDocument {
    std::string id;
    std::string raw_text;
    std::string selected_text;
    std::vector<Token> tokens;
};

// One keyword phrase from the severity ruleset. Level-0 phrases are written
// "(no) ..." in the source table and only count when negated.
struct KeywordRule {
    std::vector<std::string> phrase;
    int level = 0;
    bool requires_negation = false;
};

using Ruleset = std::vector<KeywordRule>;

struct Evidence {
    KeywordRule rule;
    int begin_token = 0;  // [begin, end) token span
    int end_token = 0;
    bool negated = false;
};

struct LabelResult {
    std::optional<int> level;
    std::vector<Evidence> evidence;
};

// Default severity keywords (levels 0-3) with the "(no)" phrases marked as
// negation-requiring.
const Ruleset& default_ruleset();

Ruleset parse_ruleset_json(const std::string& json_text);
std::string ruleset_to_json(const Ruleset& rules);
Ruleset load_ruleset_file(const std::string& path);

// Concatenated bodies of the known report sections, in document order;
// falls back to the FINAL REPORT body, then to the full text.
std::string extract_sections(const std::string& raw_text);

// Lowercase whitespace split with punctuation as standalone tokens.
std::vector<Token> tokenize(const std::string& text);

// Forward negation scopes: up to 6 tokens after each trigger, terminated
// early at punctuation or a contrast conjunction.
std::set<int> detect_negation(const std::vector<Token>& tokens);

// Longest-phrase-preferred, non-overlapping, left-to-right keyword matching.
std::vector<Evidence> match_keywords(const std::vector<Token>& tokens,
                                     const std::set<int>& negated, const Ruleset& rules);

// Max-severity resolution over the evidence list.
LabelResult resolve_label(const std::vector<Evidence>& evidence);

ReportDocument make_document(const std::string& id, const std::string& raw_text);
LabelResult label_text(const std::string& raw_text, const Ruleset& rules);

struct DocRecord {
    std::string id;
    std::string text;
};

struct DocOutcome {
    std::string id;
    bool failed = false;
    std::string error;
    LabelResult result;
};

struct CorpusSummary {
    int per_level[4] = {0, 0, 0, 0};
    int unlabeled = 0;
    int failed = 0;
};

struct CorpusResult {
    std::vector<DocOutcome> docs;
    CorpusSummary summary;
};

// Full pipeline per document; per-document failures are recorded, not fatal.
CorpusResult label_corpus(const std::vector<DocRecord>& docs, const Ruleset& rules);

}  // namespace edemajoint::textlab
