#include "edemajoint/textlab.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace edemajoint::textlab {

namespace {

std::vector<std::string> split_words(const std::string& phrase) {
    std::vector<std::string> out;
    for (const Token& t : tokenize(phrase)) out.push_back(t.text);
    return out;
}

KeywordRule rule(const char* phrase, int level, bool requires_negation) {
    return {split_words(phrase), level, requires_negation};
}

std::string lower(const std::string& s) {
    std::string out = s;
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

bool is_word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

}  // namespace

const Ruleset& default_ruleset() {
    static const Ruleset rules = {
        // Level 0 - none
        rule("pulmonary edema", 0, true),
        rule("vascular congestion", 0, true),
        rule("fluid overload", 0, true),
        rule("acute cardiopulmonary process", 0, true),
        // Level 1 - vascular congestion
        rule("cephalization", 1, false),
        rule("pulmonary vascular congestion", 1, false),
        rule("hilar engorgement", 1, false),
        rule("vascular plethora", 1, false),
        rule("pulmonary vascular prominence", 1, false),
        rule("pulmonary vascular engorgement", 1, false),
        // Level 2 - interstitial edema
        rule("interstitial opacities", 2, false),
        rule("kerley", 2, false),
        rule("interstitial edema", 2, false),
        rule("interstitial thickening", 2, false),
        rule("interstitial pulmonary edema", 2, false),
        rule("interstitial marking", 2, false),
        rule("interstitial abnormality", 2, false),
        rule("interstitial abnormalities", 2, false),
        rule("interstitial process", 2, false),
        // Level 3 - alveolar edema
        rule("alveolar infiltrates", 3, false),
        rule("severe pulmonary edema", 3, false),
        rule("perihilar infiltrates", 3, false),
        rule("hilar infiltrates", 3, false),
        rule("parenchymal opacities", 3, false),
        rule("alveolar opacities", 3, false),
        rule("ill defined opacities", 3, false),
        rule("ill-defined opacities", 3, false),
        rule("patchy opacities", 3, false),
    };
    return rules;
}

Ruleset parse_ruleset_json(const std::string& json_text) {
    nlohmann::json j = nlohmann::json::parse(json_text);
    if (!j.is_array()) throw ConfigError("ruleset: expected a JSON array");
    Ruleset out;
    for (const auto& item : j) {
        KeywordRule r;
        r.phrase = split_words(item.at("phrase").get<std::string>());
        r.level = item.at("level").get<int>();
        r.requires_negation = item.value("requires_negation", false);
        if (r.phrase.empty()) throw ConfigError("ruleset: empty phrase");
        if (r.level < 0 || r.level > 3) throw ConfigError("ruleset: level outside 0..3");
        out.push_back(std::move(r));
    }
    return out;
}

std::string ruleset_to_json(const Ruleset& rules) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& r : rules) {
        std::string phrase;
        for (std::size_t i = 0; i < r.phrase.size(); ++i) {
            if (i) phrase += " ";
            phrase += r.phrase[i];
        }
        j.push_back({{"phrase", phrase}, {"level", r.level}, {"requires_negation", r.requires_negation}});
    }
    return j.dump(2);
}

Ruleset load_ruleset_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open ruleset file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_ruleset_json(ss.str());
}

std::string extract_sections(const std::string& raw_text) {
    if (trim(raw_text).empty()) throw EmptyDocumentError("empty report text");
    static const std::vector<std::string> kSections = {"impression", "findings", "conclusion",
                                                       "recommendation"};
    const std::string low = lower(raw_text);

    struct Hit {
        std::size_t header_pos;
        std::size_t body_pos;
        bool listed;  // one of the four section headers (vs FINAL REPORT)
    };
    std::vector<Hit> hits;
    auto boundary_ok = [&](std::size_t pos) {
        return pos == 0 || !is_word_char(low[pos - 1]);
    };
    for (const std::string& name : kSections) {
        std::size_t pos = 0;
        while ((pos = low.find(name, pos)) != std::string::npos) {
            std::size_t after = pos + name.size();
            if (boundary_ok(pos)) {
                std::size_t colon = after;
                while (colon < low.size() && (low[colon] == ' ' || low[colon] == '\t')) ++colon;
                if (colon < low.size() && low[colon] == ':')
                    hits.push_back({pos, colon + 1, true});
            }
            pos = after;
        }
    }
    std::size_t final_pos = 0;
    bool has_final = false;
    {
        std::size_t pos = low.find("final report");
        if (pos != std::string::npos && boundary_ok(pos)) {
            std::size_t after = pos + std::string("final report").size();
            while (after < low.size() && (low[after] == ' ' || low[after] == '\t')) ++after;
            if (after < low.size() && low[after] == ':') ++after;
            hits.push_back({pos, after, false});
            final_pos = pos;
            has_final = true;
        }
    }
    std::sort(hits.begin(), hits.end(),
              [](const Hit& a, const Hit& b) { return a.header_pos < b.header_pos; });

    auto body_of = [&](std::size_t i) {
        std::size_t end = raw_text.size();
        if (i + 1 < hits.size()) end = hits[i + 1].header_pos;
        return trim(raw_text.substr(hits[i].body_pos, end - hits[i].body_pos));
    };

    std::string out;
    bool any_listed = false;
    for (std::size_t i = 0; i < hits.size(); ++i) {
        if (!hits[i].listed) continue;
        any_listed = true;
        std::string body = body_of(i);
        if (body.empty()) continue;
        if (!out.empty()) out += " ";
        out += body;
    }
    if (any_listed) return out;
    if (has_final) {
        for (std::size_t i = 0; i < hits.size(); ++i)
            if (!hits[i].listed && hits[i].header_pos == final_pos) return body_of(i);
    }
    return trim(raw_text);
}

std::vector<Token> tokenize(const std::string& text) {
    std::vector<Token> out;
    std::string cur;
    int start = 0;
    auto flush = [&](int end_pos) {
        if (!cur.empty()) {
            out.push_back({cur, start, end_pos});
            cur.clear();
        }
    };
    for (int i = 0; i < static_cast<int>(text.size()); ++i) {
        const char c = text[static_cast<std::size_t>(i)];
        if (std::isspace(static_cast<unsigned char>(c))) {
            flush(i);
        } else if (is_word_char(c)) {
            if (cur.empty()) start = i;
            cur += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        } else {
            flush(i);
            out.push_back({std::string(1, c), i, i + 1});
        }
    }
    flush(static_cast<int>(text.size()));
    return out;
}

std::set<int> detect_negation(const std::vector<Token>& tokens) {
    static const std::vector<std::vector<std::string>> kTriggers = {
        {"no", "evidence", "of"}, {"free", "of"},    {"absence", "of"}, {"negative", "for"},
        {"clear", "of"},          {"no"},            {"without"},       {"resolved"},
    };
    static const std::set<std::string> kTerminators = {".", ",", ";", "but", "however", "although"};
    constexpr int kScope = 6;

    std::set<int> negated;
    const int n = static_cast<int>(tokens.size());
    for (int i = 0; i < n; ++i) {
        int trig_len = 0;
        for (const auto& trig : kTriggers) {  // ordered longest-variant-first for "no"
            if (i + static_cast<int>(trig.size()) > n) continue;
            bool ok = true;
            for (std::size_t k = 0; k < trig.size(); ++k)
                if (tokens[static_cast<std::size_t>(i) + k].text != trig[k]) {
                    ok = false;
                    break;
                }
            if (ok) {
                trig_len = static_cast<int>(trig.size());
                break;
            }
        }
        if (!trig_len) continue;
        for (int j = i + trig_len; j < std::min(n, i + trig_len + kScope); ++j) {
            if (kTerminators.count(tokens[static_cast<std::size_t>(j)].text)) break;
            negated.insert(j);
        }
    }
    return negated;
}

std::vector<Evidence> match_keywords(const std::vector<Token>& tokens,
                                     const std::set<int>& negated, const Ruleset& rules) {
    std::vector<Evidence> out;
    const int n = static_cast<int>(tokens.size());
    int pos = 0;
    while (pos < n) {
        const KeywordRule* best = nullptr;
        bool best_negated = false;
        for (const KeywordRule& r : rules) {
            const int len = static_cast<int>(r.phrase.size());
            if (pos + len > n) continue;
            if (best && len <= static_cast<int>(best->phrase.size())) continue;
            bool match = true;
            for (int k = 0; k < len; ++k)
                if (tokens[static_cast<std::size_t>(pos + k)].text !=
                    r.phrase[static_cast<std::size_t>(k)]) {
                    match = false;
                    break;
                }
            if (!match) continue;
            bool neg = false;
            for (int k = 0; k < len; ++k)
                if (negated.count(pos + k)) {
                    neg = true;
                    break;
                }
            if (neg != r.requires_negation) continue;
            best = &r;
            best_negated = neg;
        }
        if (best) {
            const int len = static_cast<int>(best->phrase.size());
            out.push_back({*best, pos, pos + len, best_negated});
            pos += len;
        } else {
            ++pos;
        }
    }
    return out;
}

LabelResult resolve_label(const std::vector<Evidence>& evidence) {
    LabelResult r;
    r.evidence = evidence;
    for (const Evidence& e : evidence) {
        if (!r.level || e.rule.level > *r.level) r.level = e.rule.level;
    }
    return r;
}

ReportDocument make_document(const std::string& id, const std::string& raw_text) {
    ReportDocument d;
    d.id = id;
    d.raw_text = raw_text;
    d.selected_text = extract_sections(raw_text);
    d.tokens = tokenize(d.selected_text);
    return d;
}

LabelResult label_text(const std::string& raw_text, const Ruleset& rules) {
    ReportDocument d = make_document("", raw_text);
    const auto negated = detect_negation(d.tokens);
    return resolve_label(match_keywords(d.tokens, negated, rules));
}

CorpusResult label_corpus(const std::vector<DocRecord>& docs, const Ruleset& rules) {
    CorpusResult out;
    for (const DocRecord& rec : docs) {
        DocOutcome o;
        o.id = rec.id;
        try {
            o.result = label_text(rec.text, rules);
        } catch (const Error& e) {
            o.failed = true;
            o.error = e.what();
        }
        if (o.failed) {
            out.summary.failed++;
        } else if (o.result.level) {
            out.summary.per_level[*o.result.level]++;
        } else {
            out.summary.unlabeled++;
        }
        out.docs.push_back(std::move(o));
    }
    return out;
}

}  // namespace edemajoint::textlab
