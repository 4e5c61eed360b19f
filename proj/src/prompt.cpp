#include "planattr/prompt.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace planattr::prompt {

std::string_view to_string(Component c) {
    switch (c) {
        case Component::ActionDefs: return "ActionDefs";
        case Component::Constraints: return "Constraints";
        case Component::Question: return "Question";
        case Component::EpisodicMemory: return "EpisodicMemory";
        case Component::Background: return "Background";
    }
    return "?";
}

std::string SegmentId::label() const {
    std::string out(to_string(component));
    if (ordinal) out += "#" + std::to_string(*ordinal);
    return out;
}

SegmentId SegmentId::parse(std::string_view label) {
    const auto hash = label.find('#');
    const auto name = label.substr(0, hash);
    for (Component c : {Component::ActionDefs, Component::Constraints, Component::Question,
                        Component::EpisodicMemory, Component::Background}) {
        if (to_string(c) != name) continue;
        if (hash == std::string_view::npos) return coarse(c);
        try {
            return child(c, std::stoul(std::string(label.substr(hash + 1))));
        } catch (const std::exception&) {
            break;
        }
    }
    throw Error(ErrorKind::UnknownSegment, "unknown segment label '" + std::string(label) + "'");
}

SegmentedPrompt::SegmentedPrompt(std::vector<Segment> segments, std::vector<std::string> glue)
    : segments_(std::move(segments)), glue_(std::move(glue)) {
    if (glue_.size() != segments_.size() + 1) throw Error(ErrorKind::TemplateError, "glue/segment count mismatch");
    for (std::size_t i = 0; i < segments_.size(); ++i) {
        rendered_ += glue_[i];
        segments_[i].span = {rendered_.size(), rendered_.size() + segments_[i].text.size()};
        rendered_ += segments_[i].text;
    }
    rendered_ += glue_.back();
}

const Segment* SegmentedPrompt::find(const SegmentId& id) const {
    auto it = std::find_if(segments_.begin(), segments_.end(), [&](const Segment& s) { return s.id == id; });
    return it == segments_.end() ? nullptr : &*it;
}

std::size_t SegmentedPrompt::index_of(const SegmentId& id) const {
    const Segment* s = find(id);
    if (!s) throw Error(ErrorKind::UnknownSegment, "no segment '" + id.label() + "' in prompt");
    return static_cast<std::size_t>(s - segments_.data());
}

bool SegmentedPrompt::fine_grained() const {
    return std::any_of(segments_.begin(), segments_.end(), [](const Segment& s) { return s.id.fine_grained(); });
}

namespace {

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r'; }

std::size_t trailing_space(std::string_view s) {
    std::size_t n = 0;
    while (n < s.size() && is_space(s[s.size() - 1 - n])) ++n;
    return n;
}

std::size_t leading_space(std::string_view s) {
    std::size_t n = 0;
    while (n < s.size() && is_space(s[n])) ++n;
    return n;
}

// After a deletion between `left` and `right`, the whitespace runs meeting at
// the junction are replaced by the longer of the two.
void collapse_junction(std::string& left, std::string& right) {
    const std::size_t ls = trailing_space(left);
    const std::size_t rs = leading_space(right);
    if (rs > ls) {
        left.erase(left.size() - ls);
        left += right.substr(0, rs);
    }
    right.erase(0, rs);
}

}  // namespace

std::vector<Span> split_sentences(std::string_view text) {
    std::vector<Span> out;
    std::size_t i = leading_space(text);
    while (i < text.size()) {
        std::size_t j = i;
        while (j < text.size()) {
            const char c = text[j];
            if (c == '\n') break;
            if ((c == '.' || c == ':' || c == '!' || c == '?') && (j + 1 == text.size() || is_space(text[j + 1]))) {
                ++j;
                break;
            }
            ++j;
        }
        std::size_t end = j;
        while (end > i && is_space(text[end - 1])) --end;
        if (end > i) out.push_back({i, end});
        i = j;
        while (i < text.size() && is_space(text[i])) ++i;
    }
    return out;
}

std::vector<Span> split_lines(std::string_view text) {
    std::vector<Span> out;
    std::size_t i = 0;
    while (i <= text.size()) {
        std::size_t nl = text.find('\n', i);
        if (nl == std::string_view::npos) nl = text.size();
        std::size_t b = i, e = nl;
        while (b < e && is_space(text[b])) ++b;
        while (e > b && is_space(text[e - 1])) --e;
        if (e > b) out.push_back({b, e});
        i = nl + 1;
    }
    return out;
}

PromptTemplate PromptTemplate::parse(std::string_view text) {
    static const std::vector<std::string_view> known = {"action_defs", "constraints", "insight_set", "question",
                                                        "background"};
    PromptTemplate t;
    std::string literal;
    std::size_t i = 0;
    while (i < text.size()) {
        if (text[i] == '{') {
            const auto close = text.find('}', i);
            if (close == std::string_view::npos) throw Error(ErrorKind::TemplateError, "unterminated placeholder");
            const auto name = text.substr(i + 1, close - i - 1);
            if (std::find(known.begin(), known.end(), name) == known.end())
                throw Error(ErrorKind::TemplateError, "unknown placeholder {" + std::string(name) + "}");
            t.pieces_.push_back({false, literal});
            literal.clear();
            t.pieces_.push_back({true, std::string(name)});
            i = close + 1;
        } else {
            literal += text[i++];
        }
    }
    t.pieces_.push_back({false, literal});
    if (!t.has("question")) throw Error(ErrorKind::TemplateError, "template lacks {question}");
    return t;
}

PromptTemplate PromptTemplate::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::IoError, "cannot open template '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
}

bool PromptTemplate::has(std::string_view name) const {
    return std::any_of(pieces_.begin(), pieces_.end(), [&](const Piece& p) { return p.placeholder && p.text == name; });
}

std::string_view blocksworld_action_defs() {
    return "I am playing with a set of blocks where I need to arrange the blocks into stacks. "
           "Here are the actions I can do\n\n"
           "Pick up a block\n"
           "Unstack a block from on top of another block\n"
           "Put down a block\n"
           "Stack a block on top of another block";
}

std::string_view blocksworld_constraints() {
    return "I have the following restrictions on my actions:\n"
           "I can only pick up or unstack one block at a time.\n"
           "I can only pick up or unstack a block if my hand is empty.\n"
           "I can only pick up a block if the block is on the table and the block is clear. "
           "A block is clear if the block has no other blocks on top of it and if the block is not picked up.\n"
           "I can only unstack a block from on top of another block if the block I am unstacking was really on "
           "top of the other block.\n"
           "I can only unstack a block from on top of another block if the block I am unstacking is clear.\n"
           "Once I pick up or unstack a block, I am holding the block.\n"
           "I can only put down a block that I am holding.\n"
           "I can only stack a block on top of another block if I am holding the block being stacked.\n"
           "I can only stack a block on top of another block if the block onto which I am stacking the block is "
           "clear.\n"
           "Once I put down or stack a block, my hand becomes empty.\n"
           "Once you stack a block on top of a second block, the second block is no longer clear.";
}

std::string_view direct_template_text() {
    return "{action_defs}\n\n{constraints}\n\n{question}\n\n"
           "Provide your final plan (beginning with [Plan]), writing one action per line.";
}

std::string_view memory_template_text() {
    return "{action_defs}\n\n{constraints}\n\n{question}\n\n"
           "To help your plan, some insights from a set summarized by previous agents will be provided. Not all "
           "insights will be appropriate; you need to select the relevant ones to guide your plan. The values in "
           "brackets indicate the reliability of the insights, with higher values representing greater "
           "reliability.\n"
           "Insight Set: {insight_set}\n\n"
           "You should specify the insights you have chosen (beginning with [Chosen Insights]), followed by your "
           "final plan (beginning with [Plan]).";
}

PromptInputs blocksworld_inputs(const bw::Instance& instance, bool with_constraints) {
    PromptInputs in;
    in.action_defs = std::string(blocksworld_action_defs());
    if (with_constraints) in.constraints = std::string(blocksworld_constraints());
    in.question = bw::render_instance(instance).question;
    return in;
}

namespace {

struct Builder {
    std::vector<Segment> segments;
    std::vector<std::string> glue{""};
    std::vector<std::size_t> dropped;  // segment indices standing for absent placeholders

    void literal(const std::string& s) { glue.back() += s; }
    void segment(SegmentId id, std::string text) {
        segments.push_back({id, std::move(text), {}});
        glue.emplace_back();
    }
    void split(Component c, std::string_view text, const std::vector<Span>& parts) {
        std::size_t cursor = 0;
        for (std::size_t k = 0; k < parts.size(); ++k) {
            literal(std::string(text.substr(cursor, parts[k].begin - cursor)));
            segment(SegmentId::child(c, k), std::string(text.substr(parts[k].begin, parts[k].size())));
            cursor = parts[k].end;
        }
        literal(std::string(text.substr(cursor)));
    }
    void absent() {
        dropped.push_back(segments.size());
        segment(SegmentId::coarse(Component::Background), "");
    }

    SegmentedPrompt finish() {
        for (auto it = dropped.rbegin(); it != dropped.rend(); ++it) {
            const std::size_t i = *it;
            collapse_junction(glue[i], glue[i + 1]);
            glue[i] += glue[i + 1];
            glue.erase(glue.begin() + static_cast<std::ptrdiff_t>(i) + 1);
            segments.erase(segments.begin() + static_cast<std::ptrdiff_t>(i));
        }
        return SegmentedPrompt(std::move(segments), std::move(glue));
    }
};

}  // namespace

SegmentedPrompt assemble(const PromptInputs& in, bool fine_grained, const PromptTemplate* tmpl) {
    static const PromptTemplate direct = PromptTemplate::parse(direct_template_text());
    static const PromptTemplate memory = PromptTemplate::parse(memory_template_text());
    const PromptTemplate& t = tmpl ? *tmpl : (in.insights ? memory : direct);

    Builder b;
    for (const auto& piece : t.pieces()) {
        if (!piece.placeholder) {
            b.literal(piece.text);
        } else if (piece.text == "action_defs") {
            if (in.action_defs.empty()) throw Error(ErrorKind::TemplateError, "missing action definitions");
            b.segment(SegmentId::coarse(Component::ActionDefs), in.action_defs);
        } else if (piece.text == "question") {
            if (in.question.empty()) throw Error(ErrorKind::TemplateError, "missing question");
            b.segment(SegmentId::coarse(Component::Question), in.question);
        } else if (piece.text == "constraints") {
            if (!in.constraints) {
                b.absent();
            } else if (fine_grained) {
                b.split(Component::Constraints, *in.constraints, split_sentences(*in.constraints));
            } else {
                b.segment(SegmentId::coarse(Component::Constraints), *in.constraints);
            }
        } else if (piece.text == "insight_set") {
            if (!in.insights) {
                b.absent();
                continue;
            }
            std::string text;
            for (std::size_t k = 0; k < in.insights->size(); ++k) {
                if (k > 0) text += "\n";
                text += (*in.insights)[k];
            }
            if (fine_grained)
                b.split(Component::EpisodicMemory, text, split_lines(text));
            else
                b.segment(SegmentId::coarse(Component::EpisodicMemory), text);
        } else if (piece.text == "background") {
            if (!in.background)
                b.absent();
            else
                b.segment(SegmentId::coarse(Component::Background), *in.background);
        }
    }
    return b.finish();
}

SegmentedPrompt permute(const SegmentedPrompt& prompt, const PermutationSpec& spec) {
    if (const auto* span = std::get_if<Span>(&spec.target)) return mask_attribute(prompt, *span);

    const std::size_t i = prompt.index_of(std::get<SegmentId>(spec.target));
    auto segments = prompt.segments();
    auto glue = prompt.glue();
    if (segments[i].text.empty()) return prompt;
    segments[i].text.clear();
    collapse_junction(glue[i], glue[i + 1]);
    return SegmentedPrompt(std::move(segments), std::move(glue));
}

SegmentedPrompt mask_attribute(const SegmentedPrompt& prompt, Span span) {
    if (span.begin > span.end || span.end > prompt.rendered().size())
        throw Error(ErrorKind::SpanOutOfBounds, "span [" + std::to_string(span.begin) + ", " +
                                                    std::to_string(span.end) + ") exceeds the prompt");
    auto segments = prompt.segments();
    for (auto& seg : segments) {
        if (span.begin < seg.span.begin || span.end > seg.span.end) continue;
        if (span.size() == 0) return prompt;
        std::string left = seg.text.substr(0, span.begin - seg.span.begin);
        std::string right = seg.text.substr(span.end - seg.span.begin);
        collapse_junction(left, right);
        seg.text = left + right;
        return SegmentedPrompt(std::move(segments), prompt.glue());
    }
    throw Error(ErrorKind::SpanCrossesSegments, "span does not lie inside a single segment");
}

}  // namespace planattr::prompt
