#pragma once

#include <compare>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "planattr/blocksworld.hpp"
#include "planattr/error.hpp"

namespace planattr::prompt {

using bw::Span;

enum class Component { ActionDefs, Constraints, Question, EpisodicMemory, Background };

std::string_view to_string(Component c);

// A prompt feature. Fine-grained children (one constraint sentence, one
// insight) carry their parent component and a 0-based ordinal.
struct SegmentId {
    Component component = Component::Question;
    std::optional<std::size_t> ordinal;

    static SegmentId coarse(Component c) { return {c, std::nullopt}; }
    static SegmentId child(Component c, std::size_t i) { return {c, i}; }

    bool fine_grained() const { return ordinal.has_value(); }
    std::string label() const;  // "Constraints" or "Constraints#3"
    static SegmentId parse(std::string_view label);

    auto operator<=>(const SegmentId&) const = default;
};

struct Segment {
    SegmentId id;
    std::string text;
    Span span;
};

// rendered == glue[0] + segments[0].text + glue[1] + ... + glue[n].
// Glue is template text and is never a feature.
class SegmentedPrompt {
public:
    SegmentedPrompt() = default;
    SegmentedPrompt(std::vector<Segment> segments, std::vector<std::string> glue);

    const std::string& rendered() const { return rendered_; }
    const std::vector<Segment>& segments() const { return segments_; }
    const std::vector<std::string>& glue() const { return glue_; }

    const Segment* find(const SegmentId& id) const;
    std::size_t index_of(const SegmentId& id) const;  // throws UnknownSegment
    bool fine_grained() const;

private:
    std::vector<Segment> segments_;
    std::vector<std::string> glue_;
    std::string rendered_;
};

struct PromptInputs {
    std::string action_defs;
    std::optional<std::string> constraints;
    std::string question;
    std::optional<std::vector<std::string>> insights;  // one formatted line per insight
    std::optional<std::string> background;
};

// A prompt template with {action_defs}, {constraints}, {insight_set},
// {question} and {background} placeholders.
class PromptTemplate {
public:
    static PromptTemplate parse(std::string_view text);
    static PromptTemplate load(const std::string& path);

    struct Piece {
        bool placeholder = false;
        std::string text;  // literal text, or the placeholder name
    };
    const std::vector<Piece>& pieces() const { return pieces_; }
    bool has(std::string_view name) const;

private:
    std::vector<Piece> pieces_;
};

// The shipped BlocksWorld domain text and templates.
std::string_view blocksworld_action_defs();
std::string_view blocksworld_constraints();
std::string_view direct_template_text();
std::string_view memory_template_text();

PromptInputs blocksworld_inputs(const bw::Instance& instance, bool with_constraints = true);

// Uses the memory template when insights are supplied, the direct template
// otherwise. Absent optional inputs drop their placeholder.
SegmentedPrompt assemble(const PromptInputs& inputs, bool fine_grained,
                         const PromptTemplate* tmpl = nullptr);

// Splits text into sentences (constraints) or lines (insights); the returned
// spans index into text and the bytes between them are glue.
std::vector<Span> split_sentences(std::string_view text);
std::vector<Span> split_lines(std::string_view text);

enum class ReplacementPolicy { Delete };

struct PermutationSpec {
    std::variant<SegmentId, Span> target;
    ReplacementPolicy policy = ReplacementPolicy::Delete;
};

SegmentedPrompt permute(const SegmentedPrompt& prompt, const PermutationSpec& spec);
inline SegmentedPrompt permute(const SegmentedPrompt& prompt, const SegmentId& id) {
    return permute(prompt, PermutationSpec{id});
}

// Deletes an explicit span of the rendered prompt; the span must lie inside
// a single segment.
SegmentedPrompt mask_attribute(const SegmentedPrompt& prompt, Span span);

}  // namespace planattr::prompt
