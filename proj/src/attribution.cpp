#include "planattr/attribution.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>

namespace planattr::attr {

std::string_view to_string(Space s) { return s == Space::Probability ? "prob" : "logprob"; }
std::string_view to_string(Dimension d) { return d == Dimension::Whole ? "whole" : "per-row"; }

Space space_from_string(std::string_view s) {
    if (s == "prob" || s == "probability") return Space::Probability;
    if (s == "logprob") return Space::LogProb;
    throw Error(ErrorKind::ConfigError, "unknown space '" + std::string(s) + "'");
}

Dimension dimension_from_string(std::string_view s) {
    if (s == "whole") return Dimension::Whole;
    if (s == "per-row" || s == "per_row") return Dimension::PerRow;
    throw Error(ErrorKind::ConfigError, "unknown normalization dimension '" + std::string(s) + "'");
}

std::size_t MeaningfulMask::kept() const { return static_cast<std::size_t>(std::count(keep.begin(), keep.end(), true)); }

namespace {

std::vector<Span> token_spans(const lm::TokenScores& scores, std::string_view text) {
    try {
        lm::validate_token_scores(text, scores);
    } catch (const Error& e) {
        throw Error(ErrorKind::MaskMismatch, std::string("token scores do not match the plan text: ") + e.what());
    }
    std::vector<Span> out;
    out.reserve(scores.tokens.size());
    for (const auto& t : scores.tokens) out.push_back({t.start, t.end});
    return out;
}

struct Region {
    std::size_t step;
    Span span;
};

// Keeps tokens intersecting a keyword; a kept token belongs to the step
// region holding its first byte, or to its keyword's step when it starts
// before any region.
MeaningfulMask mask_from_keywords(std::vector<Span> tokens, const std::vector<Region>& regions,
                                  const std::vector<Region>& keywords) {
    MeaningfulMask mask;
    mask.tokens = std::move(tokens);
    mask.keep.assign(mask.tokens.size(), false);
    mask.step_of.assign(mask.tokens.size(), 0);
    for (std::size_t j = 0; j < mask.tokens.size(); ++j) {
        const Span& t = mask.tokens[j];
        auto kw = std::find_if(keywords.begin(), keywords.end(), [&](const Region& k) { return k.span.intersects(t); });
        if (kw == keywords.end()) continue;
        mask.keep[j] = true;
        auto region = std::find_if(regions.begin(), regions.end(), [&](const Region& r) { return r.span.contains(t.begin); });
        mask.step_of[j] = region != regions.end() ? region->step : kw->step;
    }
    return mask;
}

}  // namespace

MeaningfulMask build_mask(const lm::TokenScores& scores, const bw::ParsedPlan& plan, std::string_view plan_text) {
    auto tokens = token_spans(scores, plan_text);
    std::vector<Region> regions, keywords;
    for (std::size_t k = 0; k < plan.steps.size(); ++k) {
        const auto& step = plan.steps[k];
        if (step.line.end > plan_text.size()) throw Error(ErrorKind::MaskMismatch, "plan step lies outside the plan text");
        regions.push_back({k + 1, step.line});
        for (const auto& kw : step.keywords) keywords.push_back({k + 1, kw});
    }
    MeaningfulMask mask = mask_from_keywords(std::move(tokens), regions, keywords);
    for (const auto& step : plan.steps) mask.step_labels.emplace_back(bw::to_string(step.action.kind));
    mask.domain = "blocksworld";
    return mask;
}

std::vector<std::pair<Span, std::size_t>> json_value_spans(std::string_view text) {
    std::vector<std::pair<Span, std::size_t>> out;
    struct Frame {
        bool object;
        bool expect_key;
    };
    std::vector<Frame> stack;
    std::size_t element = 0;
    std::size_t i = text.find_first_of("[{");
    if (i == std::string_view::npos) return out;

    auto begin_value = [&] {
        if (stack.size() == 1 && !stack.back().object) ++element;
    };
    auto record = [&](Span s) {
        if (s.size() == 0 || text.substr(s.begin, s.size()) == "-") return;
        out.emplace_back(s, std::max<std::size_t>(element, 1));
    };

    for (; i < text.size(); ++i) {
        const char c = text[i];
        if (c == '{' || c == '[') {
            begin_value();
            stack.push_back({c == '{', c == '{'});
        } else if (c == '}' || c == ']') {
            if (stack.empty()) break;
            stack.pop_back();
            if (stack.empty()) break;
        } else if (c == ',') {
            if (!stack.empty() && stack.back().object) stack.back().expect_key = true;
        } else if (c == ':') {
            if (!stack.empty() && stack.back().object) stack.back().expect_key = false;
        } else if (c == '"') {
            std::size_t j = i + 1;
            while (j < text.size() && text[j] != '"') j += text[j] == '\\' ? 2 : 1;
            const bool key = !stack.empty() && stack.back().object && stack.back().expect_key;
            if (!key) {
                begin_value();
                record({i + 1, std::min(j, text.size())});
            }
            i = j;
        } else if (!std::isspace(static_cast<unsigned char>(c))) {
            std::size_t j = i;
            while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j])) && text[j] != ',' &&
                   text[j] != '}' && text[j] != ']')
                ++j;
            begin_value();
            record({i, j});
            i = j - 1;
        }
    }
    return out;
}

MeaningfulMask build_json_mask(const lm::TokenScores& scores, std::string_view plan_text) {
    auto tokens = token_spans(scores, plan_text);
    std::vector<Region> keywords;
    std::size_t steps = 0;
    for (const auto& [span, element] : json_value_spans(plan_text)) {
        keywords.push_back({element, span});
        steps = std::max(steps, element);
    }
    // Element extents are not tracked, so steps come from the value itself.
    MeaningfulMask mask = mask_from_keywords(std::move(tokens), {}, keywords);
    for (std::size_t k = 1; k <= steps; ++k) mask.step_labels.push_back("Day " + std::to_string(k));
    mask.domain = "json_plan";
    return mask;
}

MeaningfulMask build_mask(const lm::TokenScores& scores, const bw::ParsedPlan* plan, std::string_view plan_text,
                          PlanDomain domain) {
    if (domain == PlanDomain::JsonPlan) return build_json_mask(scores, plan_text);
    if (!plan) throw Error(ErrorKind::EmptyPlan, "a BlocksWorld mask needs a parsed plan");
    return build_mask(scores, *plan, plan_text);
}

std::size_t AttributionMatrix::row_of(const SegmentId& id) const {
    auto it = std::find(segment_ids.begin(), segment_ids.end(), id);
    if (it == segment_ids.end()) throw Error(ErrorKind::UnknownSegment, "no row for segment '" + id.label() + "'");
    return static_cast<std::size_t>(it - segment_ids.begin());
}

AttributionMatrix attribution_matrix(lm::Gateway& gateway, const prompt::SegmentedPrompt& prompt,
                                     const std::string& plan_text, const MeaningfulMask& mask, Space space) {
    const auto& segments = prompt.segments();
    std::vector<lm::ScoreRequest> requests;
    requests.reserve(segments.size() + 1);
    requests.push_back({prompt.rendered(), plan_text});
    for (const auto& seg : segments) requests.push_back({prompt::permute(prompt, seg.id).rendered(), plan_text});

    const auto outcomes = gateway.batch_score(requests);
    std::vector<const lm::TokenScores*> scored;
    for (const auto& o : outcomes) {
        const auto& s = o.value();
        if (s.tokens.size() != mask.tokens.size())
            throw Error(ErrorKind::MaskMismatch, "mask was built over a different tokenization");
        for (std::size_t j = 0; j < s.tokens.size(); ++j)
            if (s.tokens[j].start != mask.tokens[j].begin || s.tokens[j].end != mask.tokens[j].end)
                throw Error(ErrorKind::MaskMismatch, "token " + std::to_string(j) + " offsets differ from the mask");
        scored.push_back(&s);
    }

    auto term = [space](double logprob) { return space == Space::Probability ? std::exp(logprob) : logprob; };

    AttributionMatrix m;
    m.space = space;
    m.step_labels = mask.step_labels;
    const lm::TokenScores& base = *scored.front();
    for (std::size_t j = 0; j < mask.tokens.size(); ++j) {
        if (!mask.keep[j]) continue;
        m.tokens.push_back({j, base.tokens[j].text, mask.tokens[j], mask.step_of[j]});
    }
    for (std::size_t i = 0; i < segments.size(); ++i) {
        m.segment_ids.push_back(segments[i].id);
        std::vector<double> row;
        row.reserve(m.tokens.size());
        const lm::TokenScores& permuted = *scored[i + 1];
        for (const auto& t : m.tokens)
            row.push_back(term(base.tokens[t.index].logprob) - term(permuted.tokens[t.index].logprob));
        m.values.push_back(std::move(row));
    }
    return m;
}

PlanAttribution attribute_blocksworld_plan(lm::Gateway& gateway, const prompt::SegmentedPrompt& prompt,
                                           const std::string& plan_text, Space space) {
    PlanAttribution out;
    out.plan = bw::parse_plan_text(plan_text);
    const auto baseline = gateway.score({prompt.rendered(), plan_text});
    out.mask = build_mask(baseline, out.plan, plan_text);
    out.matrix = attribution_matrix(gateway, prompt, plan_text, out.mask, space);
    return out;
}

NormalizedView normalize(const std::vector<std::vector<double>>& values, Dimension dimension) {
    NormalizedView view{dimension, values};
    auto max_abs = [](const std::vector<double>& row) {
        double m = 0.0;
        for (double v : row) m = std::max(m, std::abs(v));
        return m;
    };
    if (dimension == Dimension::Whole) {
        double m = 0.0;
        for (const auto& row : values) m = std::max(m, max_abs(row));
        if (m == 0.0) return view;
        for (auto& row : view.values)
            for (auto& v : row) v /= m;
    } else {
        for (auto& row : view.values) {
            const double m = max_abs(row);
            if (m == 0.0) continue;
            for (auto& v : row) v /= m;
        }
    }
    return view;
}

std::vector<std::pair<SegmentId, double>> component_scores(const AttributionMatrix& m) {
    const auto view = normalize(m, Dimension::Whole);
    std::vector<std::pair<SegmentId, double>> out;
    for (std::size_t i = 0; i < m.rows(); ++i) {
        double sum = 0.0;
        for (double v : view.values[i]) sum += v;
        out.emplace_back(m.segment_ids[i], m.cols() ? 100.0 * sum / static_cast<double>(m.cols()) : 0.0);
    }
    return out;
}

HorizonCurve horizon_curve(const AttributionMatrix& m, const SegmentId& segment) {
    const auto& row = m.values[m.row_of(segment)];
    HorizonCurve curve;
    std::map<std::size_t, double> sums;
    for (std::size_t j = 0; j < m.cols(); ++j) {
        if (m.tokens[j].step == 0) continue;
        sums[m.tokens[j].step] += row[j];
        ++curve.tokens[m.tokens[j].step];
    }
    for (const auto& [step, sum] : sums) curve.mean[step] = sum / static_cast<double>(curve.tokens[step]);
    return curve;
}

PairwiseMatrix pairwise_matrix(const AttributionMatrix& m) {
    PairwiseMatrix out;
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < m.rows(); ++i) {
        if (m.segment_ids[i].fine_grained()) {
            rows.push_back(i);
            out.rows.push_back(m.segment_ids[i]);
        }
    }
    if (rows.empty()) throw Error(ErrorKind::NotFineGrained, "attribution matrix has no fine-grained segments");

    std::map<std::size_t, std::vector<std::size_t>> by_step;
    for (std::size_t j = 0; j < m.cols(); ++j)
        if (m.tokens[j].step > 0) by_step[m.tokens[j].step].push_back(j);
    for (const auto& [step, _] : by_step) {
        const std::string label = step <= m.step_labels.size() ? m.step_labels[step - 1] : "Step";
        out.cols.push_back({step, label});
    }
    for (std::size_t i : rows) {
        std::vector<double> row;
        for (const auto& [step, cols] : by_step) {
            double sum = 0.0;
            for (std::size_t j : cols) sum += m.values[i][j];
            row.push_back(sum / static_cast<double>(cols.size()));
        }
        out.values.push_back(std::move(row));
    }
    return out;
}

WordScores word_rollup(const AttributionMatrix& m, std::string_view text) {
    auto space = [](char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; };
    WordScores out;
    out.values.assign(m.rows(), {});
    std::vector<std::size_t> counts;
    std::size_t current_word_begin = std::string_view::npos;
    for (std::size_t j = 0; j < m.cols(); ++j) {
        const Span& s = m.tokens[j].span;
        std::size_t p = s.begin;
        while (p < s.end && space(text[p])) ++p;
        if (p >= text.size()) continue;
        std::size_t wb = p;
        while (wb > 0 && !space(text[wb - 1])) --wb;
        if (wb != current_word_begin) {
            std::size_t we = p;
            while (we < text.size() && !space(text[we])) ++we;
            current_word_begin = wb;
            out.words.emplace_back(text.substr(wb, we - wb));
            out.steps.push_back(m.tokens[j].step);
            counts.push_back(0);
            for (auto& row : out.values) row.push_back(0.0);
        }
        ++counts.back();
        for (std::size_t i = 0; i < m.rows(); ++i) out.values[i].back() += m.values[i][j];
    }
    for (auto& row : out.values)
        for (std::size_t w = 0; w < row.size(); ++w) row[w] /= static_cast<double>(counts[w]);
    return out;
}

std::string format_number(double v) {
    if (v == 0.0) return "0";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.12g", v);
    return buf;
}

std::string csv_field(std::string_view s) {
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += "\"\"";
        else if (c == '\n') out += "\\n";
        else if (c == '\r') out += "\\r";
        else if (c == '\t') out += "\\t";
        else out += c;
    }
    return out + "\"";
}

namespace {

std::string table_csv(const AttributionMatrix& m, const std::vector<std::vector<double>>& values) {
    std::string out = "token,step";
    for (const auto& id : m.segment_ids) out += "," + id.label();
    out += "\n";
    for (std::size_t j = 0; j < m.cols(); ++j) {
        out += csv_field(m.tokens[j].text) + "," + std::to_string(m.tokens[j].step);
        for (std::size_t i = 0; i < m.rows(); ++i) out += "," + format_number(values[i][j]);
        out += "\n";
    }
    return out;
}

}  // namespace

std::string matrix_csv(const AttributionMatrix& m) { return table_csv(m, m.values); }

std::string normalized_csv(const AttributionMatrix& m, Dimension dimension) {
    return table_csv(m, normalize(m, dimension).values);
}

}  // namespace planattr::attr
