#pragma once

#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "planattr/blocksworld.hpp"
#include "planattr/gateway.hpp"
#include "planattr/prompt.hpp"

namespace planattr::attr {

using bw::Span;
using prompt::SegmentId;

enum class Space { Probability, LogProb };
enum class Dimension { Whole, PerRow };
enum class PlanDomain { BlocksWorld, JsonPlan };

std::string_view to_string(Space s);
std::string_view to_string(Dimension d);
Space space_from_string(std::string_view s);          // "prob" | "logprob"
Dimension dimension_from_string(std::string_view s);  // "whole" | "per-row"

// Which target tokens carry meaning (action verbs, block names, JSON values)
// and the 1-based plan step each kept token belongs to.
struct MeaningfulMask {
    std::vector<Span> tokens;             // tokenization the mask was built over
    std::vector<bool> keep;               // one per token
    std::vector<std::size_t> step_of;     // one per token, 0 when not kept
    std::vector<std::string> step_labels; // label of step k at index k-1
    std::string_view domain = "blocksworld";

    std::size_t kept() const;
};

// Throws MaskMismatch when the scores do not tile plan_text.
MeaningfulMask build_mask(const lm::TokenScores& scores, const bw::ParsedPlan& plan, std::string_view plan_text);
MeaningfulMask build_json_mask(const lm::TokenScores& scores, std::string_view plan_text);
MeaningfulMask build_mask(const lm::TokenScores& scores, const bw::ParsedPlan* plan, std::string_view plan_text,
                          PlanDomain domain);

// Value spans of a JSON plan paired with the index (1-based) of the top-level
// array element holding them. Keys and "-" placeholders are excluded.
std::vector<std::pair<Span, std::size_t>> json_value_spans(std::string_view text);

struct TokenMeta {
    std::size_t index = 0;  // position in the full target tokenization
    std::string text;
    Span span;
    std::size_t step = 0;
};

// S[i][j] over prompt segments i and kept target tokens j.
struct AttributionMatrix {
    std::vector<SegmentId> segment_ids;
    std::vector<TokenMeta> tokens;
    std::vector<std::vector<double>> values;
    std::vector<std::string> step_labels;
    Space space = Space::Probability;

    std::size_t rows() const { return segment_ids.size(); }
    std::size_t cols() const { return tokens.size(); }
    std::size_t row_of(const SegmentId& id) const;  // throws UnknownSegment
};

// Scores the target under the prompt and under each single-segment deletion:
// exactly segments+1 gateway score requests.
AttributionMatrix attribution_matrix(lm::Gateway& gateway, const prompt::SegmentedPrompt& prompt,
                                     const std::string& plan_text, const MeaningfulMask& mask,
                                     Space space = Space::Probability);

struct PlanAttribution {
    bw::ParsedPlan plan;
    MeaningfulMask mask;
    AttributionMatrix matrix;
};

// Parses the model's own plan, builds the mask from the baseline scoring, and
// computes the matrix. The baseline request is reused through the cache.
PlanAttribution attribute_blocksworld_plan(lm::Gateway& gateway, const prompt::SegmentedPrompt& prompt,
                                           const std::string& plan_text, Space space = Space::Probability);

struct NormalizedView {
    Dimension dimension = Dimension::Whole;
    std::vector<std::vector<double>> values;
};

NormalizedView normalize(const std::vector<std::vector<double>>& values, Dimension dimension);
inline NormalizedView normalize(const AttributionMatrix& m, Dimension dimension) {
    return normalize(m.values, dimension);
}

// 100 x mean over kept tokens of the whole-matrix normalized row.
std::vector<std::pair<SegmentId, double>> component_scores(const AttributionMatrix& m);

struct HorizonCurve {
    std::map<std::size_t, double> mean;         // step -> mean attribution
    std::map<std::size_t, std::size_t> tokens;  // step -> kept tokens averaged
};

HorizonCurve horizon_curve(const AttributionMatrix& m, const SegmentId& segment);

struct ActionOccurrence {
    std::size_t step = 0;
    std::string action;  // action kind label

    bool operator==(const ActionOccurrence&) const = default;
};

struct PairwiseMatrix {
    std::vector<SegmentId> rows;
    std::vector<ActionOccurrence> cols;
    std::vector<std::vector<double>> values;
};

// Fine-grained segments x action occurrences; throws NotFineGrained when the
// matrix has no fine-grained rows.
PairwiseMatrix pairwise_matrix(const AttributionMatrix& m);

// Mean of token scores per whitespace-delimited word of the target.
struct WordScores {
    std::vector<std::string> words;
    std::vector<std::size_t> steps;
    std::vector<std::vector<double>> values;  // [segment][word]
};
WordScores word_rollup(const AttributionMatrix& m, std::string_view plan_text);

std::string format_number(double v);
// Quoted CSV field; embedded quotes doubled, control characters escaped.
std::string csv_field(std::string_view s);

// "token,step,<segment labels...>" then one row per kept token.
std::string matrix_csv(const AttributionMatrix& m);
std::string normalized_csv(const AttributionMatrix& m, Dimension dimension);

}  // namespace planattr::attr
